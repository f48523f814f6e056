#pragma once
// Flat experiment configuration plus the text formats (partition, triples)
// that tie commands together. Every knob of every command lives in one
// key-value table so the resolved echo written next to a run's outputs is
// sufficient to reproduce it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cig/adapt.hpp"
#include "cig/data.hpp"
#include "cig/relmodel.hpp"

namespace cig {

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir;

  // Input artifacts. Relative paths in a config file are resolved against
  // the file's own directory, so the absolute-path echo reruns from anywhere.
  std::string objects_file;
  std::string predicates_file;
  std::string triples_file;
  std::string partition_file;
  std::string train_records;
  std::string heldout_records;
  std::string test_records;
  std::string checkpoint;

  // Model architecture. Class and predicate counts come from the vocabulary
  // files; a loaded checkpoint must agree with all of these.
  int model_feature_dim = 32;
  int model_embed_dim = 16;
  int model_obj_hidden = 16;
  int model_edge_hidden = 16;
  int model_decoder_hidden = 16;
  bool model_use_decoder = true;

  int pretrain_epochs = 12;
  double pretrain_lr = 1e-3;
  int pretrain_batch_images = 8;
  int pretrain_bg_per_gold = 3;

  int adapt_epochs = 12;
  int adapt_disc_steps = 150;
  int adapt_model_steps = 50;
  double adapt_disc_lr = 1.2e-2;
  double adapt_model_lr = 1.2e-3;
  int adapt_batch_pairs = 32;
  int adapt_disc_hidden = 0;  // 0 selects the scale rule in AdaptConfig
  int adapt_probe_cap = 120;
  std::string adapt_variant = "concatenated";

  int finetune_epochs = 6;
  double finetune_lr = 1.2e-3;
  int finetune_batch_images = 8;

  double eval_iou_threshold = 0.5;
  int generate_top_k = 5;

  // Synthetic two-domain benchmark. Feature width reuses model_feature_dim
  // so generated data and the model cannot drift apart.
  int synth_source_images = 600;
  int synth_target_images = 900;
  int synth_seen_issue_classes = 2;
  int synth_novel_issue_classes = 2;
  int synth_context_classes = 4;
  int synth_clutter_classes = 2;
  int synth_predicates = 6;
  double synth_target_shift_scale = 1.0;
  double synth_target_shift_offset = 0.0;
  double synth_feature_noise = 0.35;
  double synth_label_conf_lo = 0.70;
  double synth_label_conf_hi = 0.95;
  int synth_min_context_proposals = 2;
  int synth_max_context_proposals = 3;
  int synth_max_clutter_proposals = 1;
  double synth_novel_issue_fraction = 0.5;
  double synth_novel_similarity = 0.0;
  double synth_union_mix_subject = 0.15;
  double synth_union_mix_object = 0.85;

  using Member = std::variant<uint64_t ExperimentConfig::*,
                              int ExperimentConfig::*,
                              double ExperimentConfig::*,
                              bool ExperimentConfig::*,
                              std::string ExperimentConfig::*>;
  struct Key {
    const char* name;
    Member member;
    bool is_path;
  };

  static const std::vector<Key>& keys() {
    using C = ExperimentConfig;
    static const std::vector<Key> table = {
        {"seed", &C::seed, false},
        {"out_dir", &C::out_dir, true},
        {"objects_file", &C::objects_file, true},
        {"predicates_file", &C::predicates_file, true},
        {"triples_file", &C::triples_file, true},
        {"partition_file", &C::partition_file, true},
        {"train_records", &C::train_records, true},
        {"heldout_records", &C::heldout_records, true},
        {"test_records", &C::test_records, true},
        {"checkpoint", &C::checkpoint, true},
        {"model_feature_dim", &C::model_feature_dim, false},
        {"model_embed_dim", &C::model_embed_dim, false},
        {"model_obj_hidden", &C::model_obj_hidden, false},
        {"model_edge_hidden", &C::model_edge_hidden, false},
        {"model_decoder_hidden", &C::model_decoder_hidden, false},
        {"model_use_decoder", &C::model_use_decoder, false},
        {"pretrain_epochs", &C::pretrain_epochs, false},
        {"pretrain_lr", &C::pretrain_lr, false},
        {"pretrain_batch_images", &C::pretrain_batch_images, false},
        {"pretrain_bg_per_gold", &C::pretrain_bg_per_gold, false},
        {"adapt_epochs", &C::adapt_epochs, false},
        {"adapt_disc_steps", &C::adapt_disc_steps, false},
        {"adapt_model_steps", &C::adapt_model_steps, false},
        {"adapt_disc_lr", &C::adapt_disc_lr, false},
        {"adapt_model_lr", &C::adapt_model_lr, false},
        {"adapt_batch_pairs", &C::adapt_batch_pairs, false},
        {"adapt_disc_hidden", &C::adapt_disc_hidden, false},
        {"adapt_probe_cap", &C::adapt_probe_cap, false},
        {"adapt_variant", &C::adapt_variant, false},
        {"finetune_epochs", &C::finetune_epochs, false},
        {"finetune_lr", &C::finetune_lr, false},
        {"finetune_batch_images", &C::finetune_batch_images, false},
        {"eval_iou_threshold", &C::eval_iou_threshold, false},
        {"generate_top_k", &C::generate_top_k, false},
        {"synth_source_images", &C::synth_source_images, false},
        {"synth_target_images", &C::synth_target_images, false},
        {"synth_seen_issue_classes", &C::synth_seen_issue_classes, false},
        {"synth_novel_issue_classes", &C::synth_novel_issue_classes, false},
        {"synth_context_classes", &C::synth_context_classes, false},
        {"synth_clutter_classes", &C::synth_clutter_classes, false},
        {"synth_predicates", &C::synth_predicates, false},
        {"synth_target_shift_scale", &C::synth_target_shift_scale, false},
        {"synth_target_shift_offset", &C::synth_target_shift_offset, false},
        {"synth_feature_noise", &C::synth_feature_noise, false},
        {"synth_label_conf_lo", &C::synth_label_conf_lo, false},
        {"synth_label_conf_hi", &C::synth_label_conf_hi, false},
        {"synth_min_context_proposals", &C::synth_min_context_proposals, false},
        {"synth_max_context_proposals", &C::synth_max_context_proposals, false},
        {"synth_max_clutter_proposals", &C::synth_max_clutter_proposals, false},
        {"synth_novel_issue_fraction", &C::synth_novel_issue_fraction, false},
        {"synth_novel_similarity", &C::synth_novel_similarity, false},
        {"synth_union_mix_subject", &C::synth_union_mix_subject, false},
        {"synth_union_mix_object", &C::synth_union_mix_object, false},
    };
    return table;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    for (const auto& key : keys()) {
      std::visit([&](auto member) { j[key.name] = this->*member; },
                 key.member);
    }
    return j;
  }

  // base_dir anchors relative path values; pass "" to keep them verbatim.
  static ExperimentConfig from_json(const nlohmann::json& j,
                                    const std::string& base_dir = "") {
    if (!j.is_object())
      throw ConfigError("config must be a JSON object of flat keys");
    ExperimentConfig cfg;
    for (const auto& [name, value] : j.items()) {
      const Key* key = nullptr;
      for (const auto& k : keys())
        if (name == k.name) {
          key = &k;
          break;
        }
      if (!key) throw ConfigError("unknown config key: " + name);
      std::visit(
          [&, key](auto member) {
            using T = std::remove_reference_t<decltype(cfg.*member)>;
            if constexpr (std::is_same_v<T, bool>) {
              if (!value.is_boolean())
                throw ConfigError(std::string(key->name) + " must be a boolean");
            } else if constexpr (std::is_same_v<T, std::string>) {
              if (!value.is_string())
                throw ConfigError(std::string(key->name) + " must be a string");
            } else if constexpr (std::is_same_v<T, double>) {
              if (!value.is_number() || value.is_boolean())
                throw ConfigError(std::string(key->name) + " must be a number");
            } else {
              if (!value.is_number_integer())
                throw ConfigError(std::string(key->name) + " must be an integer");
            }
            cfg.*member = value.get<T>();
          },
          key->member);
    }
    if (!base_dir.empty()) cfg.resolve_paths(base_dir);
    return cfg;
  }

  void resolve_paths(const std::string& base_dir) {
    namespace fs = std::filesystem;
    for (const auto& key : keys()) {
      if (!key.is_path) continue;
      auto member = std::get<std::string ExperimentConfig::*>(key.member);
      std::string& value = this->*member;
      if (value.empty()) continue;
      fs::path p(value);
      if (!p.is_absolute()) p = fs::path(base_dir) / p;
      value = p.lexically_normal().string();
    }
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return from_json(j, std::filesystem::path(path).parent_path().string());
  }

  void validate() const {
    auto positive = [](const char* name, auto v) {
      if (!(v > 0)) throw ConfigError(std::string(name) + " must be positive");
    };
    positive("model_feature_dim", model_feature_dim);
    positive("model_embed_dim", model_embed_dim);
    positive("model_obj_hidden", model_obj_hidden);
    positive("model_edge_hidden", model_edge_hidden);
    positive("model_decoder_hidden", model_decoder_hidden);
    positive("pretrain_epochs", pretrain_epochs);
    positive("pretrain_lr", pretrain_lr);
    positive("pretrain_batch_images", pretrain_batch_images);
    if (pretrain_bg_per_gold < 0)
      throw ConfigError("pretrain_bg_per_gold must be nonnegative");
    adapt_config().validate();
    positive("finetune_epochs", finetune_epochs);
    positive("finetune_lr", finetune_lr);
    positive("finetune_batch_images", finetune_batch_images);
    if (!(eval_iou_threshold > 0.0) || !(eval_iou_threshold <= 1.0))
      throw ConfigError("eval_iou_threshold must lie in (0, 1]");
    positive("generate_top_k", generate_top_k);
    synth_config().validate();
  }

  ModelConfig model_config(const ObjectVocabulary& objects,
                           const PredicateVocabulary& predicates) const {
    ModelConfig mc;
    mc.feature_dim = model_feature_dim;
    mc.num_classes = objects.size();
    mc.num_predicates = predicates.size() - 1;  // background is implicit
    mc.embed_dim = model_embed_dim;
    mc.obj_hidden = model_obj_hidden;
    mc.edge_hidden = model_edge_hidden;
    mc.decoder_hidden = model_decoder_hidden;
    mc.use_decoder = model_use_decoder;
    return mc;
  }

  AdaptConfig adapt_config() const {
    AdaptConfig ac;
    ac.epochs = adapt_epochs;
    ac.n_disc = adapt_disc_steps;
    ac.n_model = adapt_model_steps;
    ac.disc_lr = adapt_disc_lr;
    ac.model_lr = adapt_model_lr;
    ac.batch_pairs = adapt_batch_pairs;
    ac.disc_hidden = adapt_disc_hidden;
    ac.probe_cap = adapt_probe_cap;
    ac.variant = parse_disc_variant(adapt_variant);
    return ac;
  }

  RelationModel::PretrainOptions pretrain_options() const {
    RelationModel::PretrainOptions opt;
    opt.epochs = pretrain_epochs;
    opt.lr = pretrain_lr;
    opt.batch_images = pretrain_batch_images;
    opt.bg_per_gold = pretrain_bg_per_gold;
    return opt;
  }

  FinetuneOptions finetune_options() const {
    FinetuneOptions opt;
    opt.epochs = finetune_epochs;
    opt.lr = finetune_lr;
    opt.batch_images = finetune_batch_images;
    return opt;
  }

  SyntheticDomainConfig synth_config() const {
    SyntheticDomainConfig sc;
    sc.num_source_images = synth_source_images;
    sc.num_target_images = synth_target_images;
    sc.num_seen_issue_classes = synth_seen_issue_classes;
    sc.num_novel_issue_classes = synth_novel_issue_classes;
    sc.num_context_classes = synth_context_classes;
    sc.num_clutter_classes = synth_clutter_classes;
    sc.num_predicates = synth_predicates;
    sc.feature_dim = model_feature_dim;
    sc.target_shift_scale = synth_target_shift_scale;
    sc.target_shift_offset = synth_target_shift_offset;
    sc.feature_noise = synth_feature_noise;
    sc.label_conf_lo = synth_label_conf_lo;
    sc.label_conf_hi = synth_label_conf_hi;
    sc.min_context_proposals = synth_min_context_proposals;
    sc.max_context_proposals = synth_max_context_proposals;
    sc.max_clutter_proposals = synth_max_clutter_proposals;
    sc.novel_issue_fraction = synth_novel_issue_fraction;
    sc.novel_issue_similarity = synth_novel_similarity;
    sc.union_mix_subject = synth_union_mix_subject;
    sc.union_mix_object = synth_union_mix_object;
    return sc;
  }
};

// Partition file: one pair per line, "subject<TAB>object<TAB>seen|unseen",
// using vocabulary names so the file survives class reordering.
inline void save_partition(const std::string& path, const DomainPartition& part,
                           const ObjectVocabulary& objects) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write partition: " + path);
  auto dump = [&](const std::set<ClassPair>& pairs, const char* tag) {
    for (const auto& [s, o] : pairs) {
      if (s < 0 || s >= objects.size() || o < 0 || o >= objects.size())
        throw ValidationError("partition pair outside vocabulary");
      out << objects.classes[static_cast<size_t>(s)] << '\t'
          << objects.classes[static_cast<size_t>(o)] << '\t' << tag << '\n';
    }
  };
  dump(part.seen_pairs, "seen");
  dump(part.unseen_pairs, "unseen");
  if (!out) throw IoError("write failed: " + path);
}

inline DomainPartition load_partition(const std::string& path,
                                      const ObjectVocabulary& objects) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open partition: " + path);
  std::map<std::string, int> index;
  for (int i = 0; i < objects.size(); ++i) index[objects.classes[static_cast<size_t>(i)]] = i;

  DomainPartition part;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() != 3)
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected 3 tab-separated fields");
    auto s = index.find(fields[0]);
    auto o = index.find(fields[1]);
    if (s == index.end() || o == index.end())
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": class name not in vocabulary");
    if (fields[2] == "seen")
      part.seen_pairs.insert({s->second, o->second});
    else if (fields[2] == "unseen")
      part.unseen_pairs.insert({s->second, o->second});
    else
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": tag must be 'seen' or 'unseen'");
  }
  part.validate();
  return part;
}

inline void save_triples(const std::string& path,
                         const std::vector<Triple>& triples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write triples: " + path);
  for (const auto& t : triples) {
    out << t.subject << '\t' << t.predicate << '\t' << t.object;
    if (!t.image_id.empty()) out << '\t' << t.image_id;
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace cig
