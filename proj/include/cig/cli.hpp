#pragma once
// Command-line front end: one binary, one subcommand per pipeline stage.
// Every command loads a flat config, applies flag overrides, writes its
// outputs atomically and drops the fully resolved config next to them.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cig/checkpoint.hpp"
#include "cig/config.hpp"
#include "cig/eval.hpp"

namespace cig::cli {

struct UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stable exit statuses, documented in the README.
enum ExitCode {
  kOk = 0,
  kFailure = 1,            // unexpected internal error
  kConfigError = 2,        // unknown key, bad value, invalid input data
  kMissingFile = 3,        // referenced file or directory does not exist
  kCheckpointMismatch = 4, // checkpoint disagrees with config or data
  kUsageError = 5,         // bad command line
};

namespace detail {

namespace fs = std::filesystem;

// Shortest round-trip decimal form, same as the JSON writer, so logs and
// reports are byte-stable across reruns.
inline std::string fmt(double v) { return nlohmann::json(v).dump(); }

inline void atomic_write_text(const std::string& path, const std::string& text) {
  fs::path target(path);
  fs::path tmp(path + ".partial");
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, target);
}

template <typename WriteFn>
void atomic_write_with(const std::string& path, WriteFn&& write) {
  fs::path tmp(path + ".partial");
  write(tmp.string());
  fs::rename(tmp, fs::path(path));
}

inline void require_key(const std::string& value, const char* key,
                        const char* command) {
  if (value.empty())
    throw ConfigError(std::string(command) + " requires config key '" + key +
                      "' (or the matching flag)");
}

inline void require_exists(const std::string& path) {
  if (!fs::exists(path)) throw IoError("missing file: " + path);
}

inline std::string out_path(const ExperimentConfig& cfg, const char* name) {
  return (fs::path(cfg.out_dir) / name).string();
}

inline void prepare_out_dir(const ExperimentConfig& cfg, const char* command) {
  require_key(cfg.out_dir, "out_dir", command);
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + cfg.out_dir);
}

inline void write_config_echo(const ExperimentConfig& cfg) {
  atomic_write_text(out_path(cfg, "config.json"), cfg.to_json().dump(2) + "\n");
}

inline std::vector<ImageRecord> load_records_checked(const std::string& path,
                                                     int feature_dim) {
  require_exists(path);
  auto records = load_image_records(path);
  for (const auto& rec : records)
    for (const auto& p : rec.proposals)
      if (static_cast<int>(p.feature.size()) != feature_dim)
        throw CheckpointError("records in " + path + " carry " +
                              std::to_string(p.feature.size()) +
                              "-dimensional features but the model expects " +
                              std::to_string(feature_dim));
  return records;
}

inline void save_model(const std::string& dir, const RelationModel& model) {
  nlohmann::ordered_json meta;
  meta["model_config"] = model.config.to_json();
  save_checkpoint(dir, model.params, meta);
}

inline RelationModel load_model(const std::string& dir,
                                const ModelConfig& expected) {
  require_exists(dir);
  auto loaded = load_checkpoint(dir);
  if (!loaded.meta.contains("model_config"))
    throw CheckpointError("not a model checkpoint (no model_config): " + dir);
  ModelConfig actual = ModelConfig::from_json(loaded.meta.at("model_config"));
  if (!(actual == expected))
    throw CheckpointError(
        "checkpoint architecture does not match the configuration: " + dir +
        "\n  checkpoint: " + actual.to_json().dump() +
        "\n  config:     " + expected.to_json().dump());

  auto reference = RelationModel::init(expected, 0);
  for (const auto& [name, t] : reference.params) {
    auto it = loaded.params.find(name);
    if (it == loaded.params.end())
      throw CheckpointError("checkpoint is missing tensor " + name + ": " + dir);
    if (it->second.shape != t.shape)
      throw CheckpointError("checkpoint tensor " + name +
                            " has the wrong shape: " + dir);
  }
  if (loaded.params.size() != reference.params.size())
    throw CheckpointError("checkpoint carries unexpected tensors: " + dir);

  RelationModel model;
  model.config = expected;
  model.params = std::move(loaded.params);
  return model;
}

struct Vocabularies {
  ObjectVocabulary objects;
  PredicateVocabulary predicates;
};

inline Vocabularies load_vocabularies(const ExperimentConfig& cfg,
                                      const char* command) {
  require_key(cfg.objects_file, "objects_file", command);
  require_key(cfg.predicates_file, "predicates_file", command);
  require_exists(cfg.objects_file);
  require_exists(cfg.predicates_file);
  return {load_object_vocabulary(cfg.objects_file),
          load_predicate_vocabulary(cfg.predicates_file)};
}

}  // namespace detail

inline int cmd_synth(const ExperimentConfig& cfg) {
  using namespace detail;
  prepare_out_dir(cfg, "cmd_synth");
  auto sc = cfg.synth_config();
  sc.seed = SeedStream(cfg.seed).fork_stream("synth").seed();
  auto bundle = generate_synthetic_domains(sc);

  std::ostringstream objects;
  for (int c = 0; c < bundle.objects.size(); ++c)
    objects << bundle.objects.classes[static_cast<size_t>(c)] << '\t'
            << (bundle.objects.is_essential(c) ? "essential" : "context")
            << '\n';
  atomic_write_text(out_path(cfg, "objects.txt"), objects.str());

  std::ostringstream predicates;
  for (int p = 1; p < bundle.predicates.size(); ++p)
    predicates << bundle.predicates.predicates[static_cast<size_t>(p)] << '\n';
  atomic_write_text(out_path(cfg, "predicates.txt"), predicates.str());

  auto dump_records = [&](const char* name,
                          const std::vector<ImageRecord>& records) {
    atomic_write_with(out_path(cfg, name), [&](const std::string& tmp) {
      save_image_records(tmp, records);
    });
  };
  dump_records("source_train.jsonl", bundle.source_train);
  dump_records("source_test.jsonl", bundle.source_test);
  dump_records("target_train.jsonl", bundle.target_train);
  dump_records("target_test.jsonl", bundle.target_test);

  atomic_write_with(out_path(cfg, "partition.tsv"), [&](const std::string& tmp) {
    save_partition(tmp, bundle.partition, bundle.objects);
  });

  // The civic relation inventory: every issue x context pair in the
  // partition with its canonical predicate. This is domain knowledge, not
  // target-side annotation, so the fine-tuning stage may consume it.
  std::vector<Triple> triples;
  auto add_triples = [&](const std::set<ClassPair>& pairs) {
    for (const auto& [s, o] : pairs) {
      Triple t;
      t.subject = bundle.objects.classes[static_cast<size_t>(s)];
      t.predicate =
          bundle.predicates
              .predicates[static_cast<size_t>(cig::detail::canonical_predicate(
                  o, sc.num_predicates))];
      t.object = bundle.objects.classes[static_cast<size_t>(o)];
      triples.push_back(t);
    }
  };
  add_triples(bundle.partition.seen_pairs);
  add_triples(bundle.partition.unseen_pairs);
  atomic_write_with(out_path(cfg, "triples.tsv"), [&](const std::string& tmp) {
    save_triples(tmp, triples);
  });

  nlohmann::ordered_json manifest;
  manifest["splits"] = {
      {"source_train",
       {{"file", "source_train.jsonl"}, {"images", bundle.source_train.size()}}},
      {"source_test",
       {{"file", "source_test.jsonl"}, {"images", bundle.source_test.size()}}},
      {"target_train",
       {{"file", "target_train.jsonl"}, {"images", bundle.target_train.size()}}},
      {"target_test",
       {{"file", "target_test.jsonl"}, {"images", bundle.target_test.size()}}}};
  manifest["objects"] = "objects.txt";
  manifest["predicates"] = "predicates.txt";
  manifest["partition"] = "partition.tsv";
  manifest["triples"] = "triples.tsv";
  atomic_write_text(out_path(cfg, "manifest.json"), manifest.dump(2) + "\n");

  write_config_echo(cfg);
  std::cout << "wrote synthetic benchmark to " << cfg.out_dir << "\n";
  return kOk;
}

inline int cmd_pretrain(const ExperimentConfig& cfg) {
  using namespace detail;
  prepare_out_dir(cfg, "cmd_pretrain");
  require_key(cfg.train_records, "train_records", "cmd_pretrain");
  auto vocab = load_vocabularies(cfg, "cmd_pretrain");
  auto mc = cfg.model_config(vocab.objects, vocab.predicates);
  mc.validate();
  auto train = load_records_checked(cfg.train_records, mc.feature_dim);

  SeedStream seeds(cfg.seed);
  auto model = RelationModel::init(mc, seeds.fork_stream("model_init").seed());
  auto opt = cfg.pretrain_options();
  opt.seed = seeds.fork_stream("pretrain").seed();
  auto losses = model.pretrain(train, opt);

  std::ostringstream log;
  log << "epoch\tmean_loss\n";
  for (size_t e = 0; e < losses.size(); ++e)
    log << (e + 1) << '\t' << fmt(losses[e]) << '\n';
  atomic_write_text(out_path(cfg, "pretrain_log.tsv"), log.str());

  save_model(out_path(cfg, "checkpoint"), model);
  write_config_echo(cfg);
  std::cout << "wrote checkpoint to " << out_path(cfg, "checkpoint") << "\n";
  return kOk;
}

inline int cmd_adapt(const ExperimentConfig& cfg) {
  using namespace detail;
  prepare_out_dir(cfg, "cmd_adapt");
  require_key(cfg.checkpoint, "checkpoint", "cmd_adapt");
  require_key(cfg.train_records, "train_records", "cmd_adapt");
  require_key(cfg.heldout_records, "heldout_records", "cmd_adapt");
  require_key(cfg.partition_file, "partition_file", "cmd_adapt");
  auto vocab = load_vocabularies(cfg, "cmd_adapt");
  auto mc = cfg.model_config(vocab.objects, vocab.predicates);
  mc.validate();
  auto model = load_model(cfg.checkpoint, mc);
  require_exists(cfg.partition_file);
  auto partition = load_partition(cfg.partition_file, vocab.objects);
  auto target_train = load_records_checked(cfg.train_records, mc.feature_dim);
  auto target_heldout =
      load_records_checked(cfg.heldout_records, mc.feature_dim);

  SeedStream seeds(cfg.seed);
  auto ac = cfg.adapt_config();
  ac.seed = seeds.fork_stream("adapt").seed();
  auto disc = Discriminator::init(disc_input_dim(mc, ac.variant),
                                  ac.hidden_for(mc),
                                  seeds.fork_stream("disc_init").seed());

  auto log = adversarial_train(model, disc, target_train, target_heldout,
                               partition, ac);

  // Wall-clock timings stay out of the log so reruns are byte-identical.
  std::ostringstream text;
  text << "step\tphase\tloss\tprobe_accuracy\n";
  for (const auto& rec : log)
    text << rec.step << '\t' << rec.phase << '\t' << fmt(rec.loss_sum) << '\t'
         << fmt(rec.probe_accuracy) << '\n';
  atomic_write_text(out_path(cfg, "adapt_log.tsv"), text.str());

  save_model(out_path(cfg, "checkpoint"), model);
  nlohmann::ordered_json disc_meta;
  disc_meta["discriminator"] = {{"input_dim", disc.input_dim},
                                {"hidden_dim", disc.hidden_dim},
                                {"variant", to_string(ac.variant)}};
  save_checkpoint(out_path(cfg, "discriminator"), disc.params, disc_meta);

  write_config_echo(cfg);
  std::cout << "wrote adapted checkpoint to " << out_path(cfg, "checkpoint")
            << "\n";
  return kOk;
}

inline int cmd_finetune(const ExperimentConfig& cfg) {
  using namespace detail;
  prepare_out_dir(cfg, "cmd_finetune");
  require_key(cfg.checkpoint, "checkpoint", "cmd_finetune");
  require_key(cfg.train_records, "train_records", "cmd_finetune");
  require_key(cfg.triples_file, "triples_file", "cmd_finetune");
  auto vocab = load_vocabularies(cfg, "cmd_finetune");
  auto mc = cfg.model_config(vocab.objects, vocab.predicates);
  mc.validate();
  auto model = load_model(cfg.checkpoint, mc);
  auto train = load_records_checked(cfg.train_records, mc.feature_dim);
  require_exists(cfg.triples_file);
  auto r_cg = triple_name_set(load_triples(cfg.triples_file));

  auto opt = cfg.finetune_options();
  opt.seed = SeedStream(cfg.seed).fork_stream("finetune").seed();
  auto losses = finetune_predicates(model, train, r_cg, vocab.objects,
                                    vocab.predicates, opt);

  std::ostringstream log;
  log << "epoch\tmean_loss\n";
  for (size_t e = 0; e < losses.size(); ++e)
    log << (e + 1) << '\t' << fmt(losses[e]) << '\n';
  atomic_write_text(out_path(cfg, "finetune_log.tsv"), log.str());

  save_model(out_path(cfg, "checkpoint"), model);
  write_config_echo(cfg);
  std::cout << "wrote fine-tuned checkpoint to " << out_path(cfg, "checkpoint")
            << "\n";
  return kOk;
}

inline int cmd_eval(const ExperimentConfig& cfg) {
  using namespace detail;
  prepare_out_dir(cfg, "cmd_eval");
  require_key(cfg.checkpoint, "checkpoint", "cmd_eval");
  require_key(cfg.test_records, "test_records", "cmd_eval");
  require_key(cfg.partition_file, "partition_file", "cmd_eval");
  auto vocab = load_vocabularies(cfg, "cmd_eval");
  auto mc = cfg.model_config(vocab.objects, vocab.predicates);
  mc.validate();
  auto model = load_model(cfg.checkpoint, mc);
  require_exists(cfg.partition_file);
  auto partition = load_partition(cfg.partition_file, vocab.objects);
  auto test = load_records_checked(cfg.test_records, mc.feature_dim);

  // Evaluation is a pure function of checkpoint and data; the seed plays
  // no role here, which keeps reports seed-independent.
  auto opcls = opcls_eval(model, test, partition);
  auto cg = cggen_eval(model, test, vocab.objects, cfg.eval_iou_threshold);

  nlohmann::ordered_json report;
  report["checkpoint"] = cfg.checkpoint;
  report["num_test_images"] = test.size();
  report["opcls"] = opcls.to_json();
  report["cg"] = cg.to_json();
  atomic_write_text(out_path(cfg, "eval_report.json"), report.dump(2) + "\n");

  write_config_echo(cfg);
  std::cout << "wrote report to " << out_path(cfg, "eval_report.json") << "\n";
  return kOk;
}

inline int cmd_generate(const ExperimentConfig& cfg) {
  using namespace detail;
  prepare_out_dir(cfg, "cmd_generate");
  require_key(cfg.checkpoint, "checkpoint", "cmd_generate");
  require_key(cfg.test_records, "test_records", "cmd_generate");
  auto vocab = load_vocabularies(cfg, "cmd_generate");
  auto mc = cfg.model_config(vocab.objects, vocab.predicates);
  mc.validate();
  auto model = load_model(cfg.checkpoint, mc);
  auto records = load_records_checked(cfg.test_records, mc.feature_dim);

  nlohmann::ordered_json graphs = nlohmann::ordered_json::array();
  for (const auto& rec : records) {
    auto relations = cg_generate(model, vocab.objects, rec, cfg.generate_top_k);
    nlohmann::ordered_json entry;
    entry["image_id"] = rec.image_id;
    entry["relations"] = nlohmann::ordered_json::array();
    for (const auto& r : relations) {
      auto rj = cig::detail::relation_to_json(r);
      rj["subject"] = vocab.objects.classes[static_cast<size_t>(r.subject.cls)];
      rj["object"] = vocab.objects.classes[static_cast<size_t>(r.object.cls)];
      rj["predicate_name"] =
          vocab.predicates.predicates[static_cast<size_t>(r.predicate)];
      entry["relations"].push_back(std::move(rj));
    }
    graphs.push_back(std::move(entry));
  }
  atomic_write_text(out_path(cfg, "civic_graphs.json"), graphs.dump(2) + "\n");

  write_config_echo(cfg);
  std::cout << "wrote graphs to " << out_path(cfg, "civic_graphs.json") << "\n";
  return kOk;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Civic Issue Graph toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> checkpoint, out, variant;
  bool no_decoder = false;

  std::map<std::string, std::function<int(const ExperimentConfig&)>> commands =
      {{"synth", cmd_synth},       {"pretrain", cmd_pretrain},
       {"adapt", cmd_adapt},       {"finetune", cmd_finetune},
       {"eval", cmd_eval},         {"generate", cmd_generate}};
  static const std::map<std::string, std::string> descriptions = {
      {"synth", "generate the bundled synthetic two-domain benchmark"},
      {"pretrain", "supervised pretraining on labelled source images"},
      {"adapt", "adversarial alignment of the pair representation"},
      {"finetune", "fine-tune predicate classification on civic relations"},
      {"eval", "score a checkpoint on the OPCls / CGCls / CGGen tasks"},
      {"generate", "emit Civic Issue Graphs for a record file"}};

  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, descriptions.at(name));
    sub->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--checkpoint", checkpoint, "override config 'checkpoint'");
    sub->add_option("--out", out, "override config 'out_dir'");
    sub->add_option("--variant", variant,
                    "discriminator input: concatenated | g_only")
        ->check(CLI::IsMember({"concatenated", "g_only"}));
    sub->add_flag("--no-decoder", no_decoder,
                  "use the decoder-free model variant");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    auto cfg = ExperimentConfig::load(config_path);
    namespace fs = std::filesystem;
    if (seed) cfg.seed = *seed;
    if (checkpoint)
      cfg.checkpoint = fs::absolute(*checkpoint).lexically_normal().string();
    if (out) cfg.out_dir = fs::absolute(*out).lexically_normal().string();
    if (variant) cfg.adapt_variant = *variant;
    if (no_decoder) cfg.model_use_decoder = false;
    cfg.validate();

    auto* sub = app.get_subcommands().front();
    return commands.at(sub->get_name())(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kMissingFile;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kCheckpointMismatch;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace cig::cli
