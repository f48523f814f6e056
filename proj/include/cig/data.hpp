#pragma once
// Region-proposal ingestion (JSONL), the class-sample balancing rule and
// the seeded synthetic two-domain generator used by the benchmark.

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cig/core.hpp"
#include "cig/rng.hpp"
#include "cig/tensor.hpp"

namespace cig {

struct RegionProposal {
  BoundingBox box;
  std::vector<double> feature;      // detector feature, dimension F
  std::vector<double> label_probs;  // background + classes

  void validate() const {
    box.validate();
    for (double v : feature)
      if (!std::isfinite(v)) throw ValidationError("non-finite proposal feature");
    double sum = 0;
    for (double v : label_probs) {
      if (!(v >= 0)) throw ValidationError("negative label probability");
      sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-6)
      throw ValidationError("label probabilities sum to " + format_double(sum));
  }

  // Highest-probability real class; background (entry 0) is excluded.
  // Ties resolve to the lowest class index.
  int predicted_class() const {
    int best = 0;
    for (int c = 1; c < static_cast<int>(label_probs.size()) - 1; ++c)
      if (label_probs[static_cast<size_t>(c + 1)] >
          label_probs[static_cast<size_t>(best + 1)])
        best = c;
    return best;
  }

  bool operator==(const RegionProposal&) const = default;
};

struct ImageRecord {
  std::string image_id;
  std::vector<RegionProposal> proposals;
  // f_{i,j} per ordered proposal-index pair, i != j.
  std::map<std::pair<int, int>, std::vector<double>> union_features;
  std::vector<ScoredRelation> gold;  // optional; score ignored

  void validate() const {
    int n = static_cast<int>(proposals.size());
    for (const auto& p : proposals) p.validate();
    for (const auto& [key, feat] : union_features) {
      auto [i, j] = key;
      if (i < 0 || j < 0 || i >= n || j >= n || i == j)
        throw ValidationError("union feature key (" + std::to_string(i) + "," +
                              std::to_string(j) + ") out of range in image " +
                              image_id);
      for (double v : feat)
        if (!std::isfinite(v)) throw ValidationError("non-finite union feature");
    }
    for (const auto& r : gold) {
      r.subject.box.validate();
      r.object.box.validate();
      if (r.predicate == PredicateVocabulary::kBackground)
        throw ValidationError("gold relation with background predicate in image " +
                              image_id);
    }
  }
};

// ----- JSONL serialization ------------------------------------------------

namespace detail {

inline nlohmann::ordered_json box_to_json(const BoundingBox& b) {
  return nlohmann::ordered_json::array({b.x, b.y, b.w, b.h});
}

inline BoundingBox box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4)
    throw ValidationError("box must be a 4-element array");
  return BoundingBox{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                     j[3].get<double>()};
}

inline nlohmann::ordered_json relation_to_json(const ScoredRelation& r) {
  nlohmann::ordered_json j;
  j["subject_class"] = r.subject.cls;
  j["subject_box"] = box_to_json(r.subject.box);
  j["predicate"] = r.predicate;
  j["object_class"] = r.object.cls;
  j["object_box"] = box_to_json(r.object.box);
  j["score"] = r.score;
  return j;
}

inline ScoredRelation relation_from_json(const nlohmann::json& j) {
  ScoredRelation r;
  r.subject.cls = j.at("subject_class").get<int>();
  r.subject.box = box_from_json(j.at("subject_box"));
  r.predicate = j.at("predicate").get<int>();
  r.object.cls = j.at("object_class").get<int>();
  r.object.box = box_from_json(j.at("object_box"));
  r.score = j.at("score").get<double>();
  return r;
}

}  // namespace detail

inline nlohmann::ordered_json image_record_to_json(const ImageRecord& rec) {
  nlohmann::ordered_json j;
  j["image_id"] = rec.image_id;
  j["proposals"] = nlohmann::ordered_json::array();
  for (const auto& p : rec.proposals) {
    nlohmann::ordered_json pj;
    pj["box"] = detail::box_to_json(p.box);
    pj["feature"] = p.feature;
    pj["label_probs"] = p.label_probs;
    j["proposals"].push_back(std::move(pj));
  }
  j["union_features"] = nlohmann::ordered_json::object();
  for (const auto& [key, feat] : rec.union_features) {
    std::string k = std::to_string(key.first) + "," + std::to_string(key.second);
    j["union_features"][k] = feat;
  }
  j["gold"] = nlohmann::ordered_json::array();
  for (const auto& r : rec.gold) j["gold"].push_back(detail::relation_to_json(r));
  return j;
}

inline ImageRecord image_record_from_json(const nlohmann::json& j) {
  ImageRecord rec;
  rec.image_id = j.at("image_id").get<std::string>();
  for (const auto& pj : j.at("proposals")) {
    RegionProposal p;
    p.box = detail::box_from_json(pj.at("box"));
    p.feature = pj.at("feature").get<std::vector<double>>();
    p.label_probs = pj.at("label_probs").get<std::vector<double>>();
    rec.proposals.push_back(std::move(p));
  }
  if (j.contains("union_features"))
    for (const auto& [k, feat] : j.at("union_features").items()) {
      auto comma = k.find(',');
      if (comma == std::string::npos)
        throw ValidationError("union feature key '" + k + "' is not 'i,j'");
      int i = parse_int(k.substr(0, comma));
      int jj = parse_int(k.substr(comma + 1));
      rec.union_features[{i, jj}] = feat.get<std::vector<double>>();
    }
  if (j.contains("gold"))
    for (const auto& rj : j.at("gold"))
      rec.gold.push_back(detail::relation_from_json(rj));
  return rec;
}

inline void save_image_records(const std::string& path,
                               const std::vector<ImageRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write image records: " + path);
  for (const auto& rec : records) out << image_record_to_json(rec).dump() << "\n";
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<ImageRecord> load_image_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open image records: " + path);
  std::vector<ImageRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ImageRecord rec;
    try {
      rec = image_record_from_json(nlohmann::json::parse(line));
      rec.validate();
    } catch (const std::exception& e) {
      throw IoError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

// ----- class-sample balancing ---------------------------------------------

// Balances any item list by class: classes above `upper` are undersampled
// without replacement (original order kept), classes below `lower` are
// padded by uniform draws with replacement. In-range classes pass through.
template <typename T, typename ClassOf>
std::vector<T> balance_by_class(const std::vector<T>& items, ClassOf class_of,
                                int lower, int upper, std::mt19937_64& rng) {
  if (lower > upper) throw ValidationError("balance bounds require lower <= upper");
  std::map<int, std::vector<size_t>> by_class;
  for (size_t i = 0; i < items.size(); ++i) by_class[class_of(items[i])].push_back(i);
  std::vector<size_t> chosen;
  for (auto& [cls, idxs] : by_class) {
    if (idxs.empty())
      throw ValidationError("class " + std::to_string(cls) +
                            " has zero samples, cannot balance");
    if (static_cast<int>(idxs.size()) > upper) {
      // Uniform subset without replacement, order preserved.
      std::vector<size_t> pool = idxs;
      for (int k = static_cast<int>(pool.size()); k > upper; --k) {
        std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
        pool.erase(pool.begin() + static_cast<long>(pick(rng)));
      }
      chosen.insert(chosen.end(), pool.begin(), pool.end());
    } else if (static_cast<int>(idxs.size()) < lower) {
      chosen.insert(chosen.end(), idxs.begin(), idxs.end());
      std::uniform_int_distribution<size_t> pick(0, idxs.size() - 1);
      for (int k = static_cast<int>(idxs.size()); k < lower; ++k)
        chosen.push_back(idxs[pick(rng)]);
    } else {
      chosen.insert(chosen.end(), idxs.begin(), idxs.end());
    }
  }
  std::vector<T> out;
  out.reserve(chosen.size());
  for (size_t i : chosen) out.push_back(items[i]);
  return out;
}

// Records are keyed by the subject class of their first gold relation (the
// annotated issue object). When num_classes >= 0, every class index in
// [0, num_classes) must have at least one sample.
inline std::vector<ImageRecord> balance_class_samples(
    const std::vector<ImageRecord>& records, int lower, int upper,
    uint64_t seed, int num_classes = -1) {
  for (const auto& r : records)
    if (r.gold.empty())
      throw ValidationError("record " + r.image_id +
                            " has no gold annotations to balance on");
  if (num_classes >= 0) {
    std::set<int> present;
    for (const auto& r : records) present.insert(r.gold.front().subject.cls);
    for (int c = 0; c < num_classes; ++c)
      if (!present.count(c))
        throw ValidationError("class " + std::to_string(c) +
                              " has zero samples, cannot balance");
  }
  auto rng = SeedStream(seed).fork("balance");
  return balance_by_class(
      records, [](const ImageRecord& r) { return r.gold.front().subject.cls; },
      lower, upper, rng);
}

// ----- synthetic two-domain generator --------------------------------------

struct SyntheticDomainConfig {
  uint64_t seed = 1;
  int num_source_images = 600;
  int num_target_images = 900;
  // Class layout: issue classes first (seen then novel), then context,
  // then clutter. Novel issue classes never appear in source images.
  int num_seen_issue_classes = 2;
  int num_novel_issue_classes = 2;
  int num_context_classes = 4;
  int num_clutter_classes = 2;
  int num_predicates = 6;  // excluding background
  int feature_dim = 64;
  // Affine map applied to every target-domain proposal feature.
  double target_shift_scale = 1.0;
  double target_shift_offset = 0.0;
  // Texture knobs.
  double feature_noise = 0.35;
  double label_conf_lo = 0.70;
  double label_conf_hi = 0.95;
  int min_context_proposals = 2;
  int max_context_proposals = 3;
  int max_clutter_proposals = 1;
  double novel_issue_fraction = 0.5;  // share of target images with a novel issue
  // How visually close each novel issue class sits to its seen partner
  // class: 0 gives independent prototypes, values near 1 give near-twins.
  double novel_issue_similarity = 0.0;
  // Union feature mix: f_ij = a*f_i + b*f_j.
  double union_mix_subject = 0.15;
  double union_mix_object = 0.85;

  int num_classes() const {
    return num_seen_issue_classes + num_novel_issue_classes +
           num_context_classes + num_clutter_classes;
  }

  void validate() const {
    if (num_source_images <= 0 || num_target_images <= 0)
      throw ConfigError("synthetic config needs at least one image per domain");
    if (num_seen_issue_classes < 1 || num_novel_issue_classes < 1)
      throw ConfigError("need at least one seen and one novel issue class");
    if (num_context_classes < 1)
      throw ConfigError("need at least one context class");
    if (num_classes() < 2 || num_predicates < 2)
      throw ConfigError("vocabulary sizes must be at least 2");
    if (feature_dim < 4) throw ConfigError("feature_dim must be at least 4");
    if (min_context_proposals < 1 ||
        max_context_proposals < min_context_proposals)
      throw ConfigError("invalid context proposal range");
    if (!(novel_issue_fraction >= 0.0) || !(novel_issue_fraction <= 1.0))
      throw ConfigError("novel_issue_fraction must lie in [0, 1]");
    if (!(novel_issue_similarity >= 0.0) || !(novel_issue_similarity <= 1.0))
      throw ConfigError("novel_issue_similarity must lie in [0, 1]");
  }
};

struct SyntheticBundle {
  ObjectVocabulary objects;
  PredicateVocabulary predicates;
  DomainPartition partition;
  std::vector<ImageRecord> source_train, source_test;
  std::vector<ImageRecord> target_train, target_test;
};

namespace detail {

// Canonical predicate for a gold pair; depends on the context class so the
// mapping transfers from seen to novel issue subjects.
inline int canonical_predicate(int context_class, int num_predicates) {
  uint64_t h = fnv1a64(&context_class, sizeof(context_class));
  return 1 + static_cast<int>(h % static_cast<uint64_t>(num_predicates));
}

struct SynthState {
  const SyntheticDomainConfig& cfg;
  std::vector<std::vector<double>> prototypes;

  int issue_begin() const { return 0; }
  int issue_count() const {
    return cfg.num_seen_issue_classes + cfg.num_novel_issue_classes;
  }
  int novel_begin() const { return cfg.num_seen_issue_classes; }
  int context_begin() const { return issue_count(); }
  int clutter_begin() const { return context_begin() + cfg.num_context_classes; }
};

inline std::vector<double> sample_feature(const SynthState& st, int cls,
                                          bool target, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, st.cfg.feature_noise);
  std::vector<double> f = st.prototypes[static_cast<size_t>(cls)];
  for (double& v : f) v += noise(rng);
  if (target)
    for (double& v : f) v = st.cfg.target_shift_scale * v + st.cfg.target_shift_offset;
  return f;
}

inline std::vector<double> sample_label_probs(const SynthState& st, int cls,
                                              std::mt19937_64& rng) {
  int n = st.cfg.num_classes() + 1;  // background slot 0
  std::uniform_real_distribution<double> conf(st.cfg.label_conf_lo,
                                              st.cfg.label_conf_hi);
  double c = conf(rng);
  std::vector<double> probs(static_cast<size_t>(n),
                            (1.0 - c) / static_cast<double>(n - 1));
  probs[static_cast<size_t>(cls + 1)] = c;
  return probs;
}

inline ImageRecord make_image(const SynthState& st, const std::string& id,
                              bool target, int issue_cls,
                              std::mt19937_64& rng) {
  const auto& cfg = st.cfg;
  std::uniform_int_distribution<int> n_ctx(cfg.min_context_proposals,
                                           cfg.max_context_proposals);
  std::uniform_int_distribution<int> n_clut(0, cfg.max_clutter_proposals);
  std::uniform_int_distribution<int> ctx_cls(st.context_begin(),
                                             st.context_begin() +
                                                 cfg.num_context_classes - 1);
  std::uniform_real_distribution<double> pos(0.2, 0.8);
  std::uniform_real_distribution<double> dim(0.1, 0.3);

  ImageRecord rec;
  rec.image_id = id;
  std::vector<int> classes;
  classes.push_back(issue_cls);
  int ctx_n = n_ctx(rng);
  for (int i = 0; i < ctx_n; ++i) classes.push_back(ctx_cls(rng));
  if (cfg.num_clutter_classes > 0) {
    std::uniform_int_distribution<int> clut_cls(
        st.clutter_begin(), st.clutter_begin() + cfg.num_clutter_classes - 1);
    int clut_n = n_clut(rng);
    for (int i = 0; i < clut_n; ++i) classes.push_back(clut_cls(rng));
  }

  for (int cls : classes) {
    RegionProposal p;
    p.box = BoundingBox{pos(rng), pos(rng), dim(rng), dim(rng)};
    p.feature = sample_feature(st, cls, target, rng);
    p.label_probs = sample_label_probs(st, cls, rng);
    rec.proposals.push_back(std::move(p));
  }

  int n = static_cast<int>(rec.proposals.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& fi = rec.proposals[static_cast<size_t>(i)].feature;
      const auto& fj = rec.proposals[static_cast<size_t>(j)].feature;
      std::vector<double> u(fi.size());
      for (size_t k = 0; k < fi.size(); ++k)
        u[k] = cfg.union_mix_subject * fi[k] + cfg.union_mix_object * fj[k];
      rec.union_features[{i, j}] = std::move(u);
    }

  // One gold relation: the issue proposal related to the first context
  // proposal by the canonical predicate of the context class.
  int gold_ctx_idx = 1;
  ScoredRelation g;
  g.subject = {issue_cls, rec.proposals[0].box};
  g.object = {classes[static_cast<size_t>(gold_ctx_idx)],
              rec.proposals[static_cast<size_t>(gold_ctx_idx)].box};
  g.predicate = canonical_predicate(g.object.cls, cfg.num_predicates);
  g.score = 1.0;
  rec.gold.push_back(std::move(g));
  return rec;
}

}  // namespace detail

inline SyntheticBundle generate_synthetic_domains(
    const SyntheticDomainConfig& cfg) {
  cfg.validate();
  SeedStream root(cfg.seed);
  detail::SynthState st{cfg, {}};

  auto proto_rng = root.fork("prototypes");
  std::normal_distribution<double> proto(0.0, 1.0);
  for (int c = 0; c < cfg.num_classes(); ++c) {
    std::vector<double> p(static_cast<size_t>(cfg.feature_dim));
    for (double& v : p) v = proto(proto_rng);
    st.prototypes.push_back(std::move(p));
  }
  // Pull each novel issue prototype toward a seen partner. The blend keeps
  // per-coordinate variance at 1 and leaves prototypes untouched at
  // similarity 0, so the draw order above never changes.
  if (cfg.novel_issue_similarity > 0.0) {
    double lam = cfg.novel_issue_similarity;
    double own = std::sqrt(1.0 - lam * lam);
    for (int nvl = 0; nvl < cfg.num_novel_issue_classes; ++nvl) {
      int c = st.novel_begin() + nvl;
      int partner = nvl % cfg.num_seen_issue_classes;
      auto& p = st.prototypes[static_cast<size_t>(c)];
      const auto& q = st.prototypes[static_cast<size_t>(partner)];
      for (size_t k = 0; k < p.size(); ++k) p[k] = lam * q[k] + own * p[k];
    }
  }

  SyntheticBundle out;
  for (int c = 0; c < cfg.num_classes(); ++c) {
    std::string name;
    if (c < st.novel_begin())
      name = "issue_seen_" + std::to_string(c);
    else if (c < st.context_begin())
      name = "issue_novel_" + std::to_string(c - st.novel_begin());
    else if (c < st.clutter_begin())
      name = "ctx_" + std::to_string(c - st.context_begin());
    else
      name = "clutter_" + std::to_string(c - st.clutter_begin());
    out.objects.classes.push_back(name);
    if (c < st.context_begin())
      out.objects.essential_set.insert(c);
    else
      out.objects.context_set.insert(c);
  }
  out.objects.validate();

  out.predicates.predicates.push_back(PredicateVocabulary::kBackgroundName);
  for (int p = 0; p < cfg.num_predicates; ++p)
    out.predicates.predicates.push_back("pred_" + std::to_string(p));
  out.predicates.validate();

  for (int s = 0; s < cfg.num_seen_issue_classes; ++s)
    for (int c = 0; c < cfg.num_context_classes; ++c)
      out.partition.seen_pairs.insert({s, st.context_begin() + c});
  for (int nvl = 0; nvl < cfg.num_novel_issue_classes; ++nvl)
    for (int c = 0; c < cfg.num_context_classes; ++c)
      out.partition.unseen_pairs.insert(
          {st.novel_begin() + nvl, st.context_begin() + c});
  out.partition.validate();

  auto src_rng = root.fork("source_images");
  std::uniform_int_distribution<int> seen_issue(0, cfg.num_seen_issue_classes - 1);
  std::vector<ImageRecord> source;
  for (int i = 0; i < cfg.num_source_images; ++i)
    source.push_back(detail::make_image(
        st, "src_" + std::to_string(i), false, seen_issue(src_rng), src_rng));

  auto tgt_rng = root.fork("target_images");
  std::uniform_int_distribution<int> novel_issue(
      st.novel_begin(), st.novel_begin() + cfg.num_novel_issue_classes - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<ImageRecord> target;
  for (int i = 0; i < cfg.num_target_images; ++i) {
    int cls = coin(tgt_rng) < cfg.novel_issue_fraction ? novel_issue(tgt_rng)
                                                       : seen_issue(tgt_rng);
    target.push_back(detail::make_image(st, "tgt_" + std::to_string(i), true,
                                        cls, tgt_rng));
  }

  auto split = [](std::vector<ImageRecord>& all, std::vector<ImageRecord>& train,
                  std::vector<ImageRecord>& test) {
    size_t n_test = std::max<size_t>(1, all.size() / 10);
    size_t n_train = all.size() - n_test;
    train.assign(all.begin(), all.begin() + static_cast<long>(n_train));
    test.assign(all.begin() + static_cast<long>(n_train), all.end());
  };
  split(source, out.source_train, out.source_test);
  split(target, out.target_train, out.target_test);
  return out;
}

// Content hash of a record list via its serialized form.
inline uint64_t image_records_hash(const std::vector<ImageRecord>& records) {
  uint64_t h = 14695981039346656037ull;
  for (const auto& r : records) {
    std::string s = image_record_to_json(r).dump();
    h = fnv1a64(s.data(), s.size(), h);
  }
  return h;
}

}  // namespace cig
