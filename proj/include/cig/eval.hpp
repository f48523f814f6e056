#pragma once
// Rank metrics and the OPCls / CGCls / CGGen evaluation harnesses.

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "cig/relmodel.hpp"
#include "json.hpp"

namespace cig {

// |gold ∩ top-k| / |gold|. The caller decides what to do with images that
// have no gold (the harnesses skip them); calling with empty gold is an error
// rather than a silent 0 or 1.
template <typename T>
double recall_at_k(const std::set<T>& gold, const std::vector<T>& ranked,
                   int k) {
  if (gold.empty()) throw ValidationError("recall_at_k: empty gold set");
  if (k <= 0) throw ValidationError("recall_at_k: k must be positive");
  int hits = 0;
  int upto = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int i = 0; i < upto; ++i)
    if (gold.count(ranked[static_cast<size_t>(i)])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

// |gold ∩ top-k| / min(k, |ranked|); an empty ranking scores 0.
template <typename T>
double precision_at_k(const std::set<T>& gold, const std::vector<T>& ranked,
                      int k) {
  if (k <= 0) throw ValidationError("precision_at_k: k must be positive");
  if (ranked.empty()) return 0.0;
  int hits = 0;
  int upto = std::min<int>(k, static_cast<int>(ranked.size()));
  for (int i = 0; i < upto; ++i)
    if (gold.count(ranked[static_cast<size_t>(i)])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(upto);
}

// Intersection over union under the (center x, center y, w, h) convention.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  double ax0 = a.x - a.w / 2, ax1 = a.x + a.w / 2;
  double ay0 = a.y - a.h / 2, ay1 = a.y + a.h / 2;
  double bx0 = b.x - b.w / 2, bx1 = b.x + b.w / 2;
  double by0 = b.y - b.h / 2, by1 = b.y + b.h / 2;
  double iw = std::min(ax1, bx1) - std::max(ax0, bx0);
  double ih = std::min(ay1, by1) - std::max(ay0, by0);
  if (iw <= 0 || ih <= 0) return 0.0;
  double inter = iw * ih;
  double uni = a.w * a.h + b.w * b.h - inter;
  return inter / uni;
}

// Mean image-wise metrics for one task and subset. Per-image values are
// summed in image_id order so the result does not depend on input order.
struct TaskReport {
  std::vector<int> ks;
  std::map<int, double> recall;
  std::map<int, double> precision;
  int num_images = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["num_images"] = num_images;
    nlohmann::ordered_json r = nlohmann::ordered_json::object();
    nlohmann::ordered_json p = nlohmann::ordered_json::object();
    for (int k : ks) {
      if (recall.count(k)) r[std::to_string(k)] = recall.at(k);
      if (precision.count(k)) p[std::to_string(k)] = precision.at(k);
    }
    j["recall"] = r;
    j["precision"] = p;
    return j;
  }
};

namespace detail {

struct PerImageMetrics {
  std::string image_id;
  std::map<int, double> recall;
  std::map<int, double> precision;
};

inline TaskReport aggregate(std::vector<PerImageMetrics> rows,
                            const std::vector<int>& ks) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const PerImageMetrics& a, const PerImageMetrics& b) {
                     return a.image_id < b.image_id;
                   });
  TaskReport rep;
  rep.ks = ks;
  rep.num_images = static_cast<int>(rows.size());
  if (rows.empty()) return rep;
  for (int k : ks) {
    double rsum = 0, psum = 0;
    for (const auto& row : rows) {
      rsum += row.recall.at(k);
      psum += row.precision.at(k);
    }
    rep.recall[k] = rsum / static_cast<double>(rows.size());
    rep.precision[k] = psum / static_cast<double>(rows.size());
  }
  return rep;
}

}  // namespace detail

inline const std::vector<int>& opcls_ks() {
  static const std::vector<int> ks = {1, 5, 10, 20};
  return ks;
}

inline const std::vector<int>& cg_ks() {
  static const std::vector<int> ks = {1, 3, 5};
  return ks;
}

// Object-pair classification: rank class pairs by the best non-background
// predicate probability of any proposal pair realizing them, then score
// against the image's gold civic pairs. The unseen subset restricts the gold
// to pairs the partition marks unseen (the adaptation target), seen likewise.
struct OpclsReport {
  TaskReport all, seen, unseen;
  std::vector<detail::PerImageMetrics> per_image;  // "all" subset rows

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = "opcls";
    j["subsets"] = {{"all", all.to_json()},
                    {"seen", seen.to_json()},
                    {"unseen", unseen.to_json()}};
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : per_image) {
      nlohmann::ordered_json r;
      r["image_id"] = row.image_id;
      nlohmann::ordered_json rec = nlohmann::ordered_json::object();
      for (int k : opcls_ks()) rec[std::to_string(k)] = row.recall.at(k);
      r["recall"] = rec;
      rows.push_back(r);
    }
    j["per_image"] = rows;
    return j;
  }
};

inline OpclsReport opcls_eval(const RelationModel& model,
                              const std::vector<ImageRecord>& test,
                              const DomainPartition& partition) {
  std::vector<detail::PerImageMetrics> all_rows, seen_rows, unseen_rows;
  for (const auto& rec : test) {
    std::set<ClassPair> gold;
    for (const auto& g : rec.gold) gold.insert({g.subject.cls, g.object.cls});
    if (gold.empty()) continue;

    auto fwd = model.forward(rec);
    std::vector<ClassPair> ranked;
    std::set<ClassPair> taken;
    for (const auto& ps : fwd.pairs) {
      ClassPair cp{ps.subject_cls, ps.object_cls};
      if (taken.insert(cp).second) ranked.push_back(cp);
    }

    auto score = [&](const std::set<ClassPair>& subset_gold,
                     std::vector<detail::PerImageMetrics>& rows) {
      if (subset_gold.empty()) return;
      detail::PerImageMetrics row;
      row.image_id = rec.image_id;
      for (int k : opcls_ks()) {
        row.recall[k] = recall_at_k(subset_gold, ranked, k);
        row.precision[k] = precision_at_k(subset_gold, ranked, k);
      }
      rows.push_back(std::move(row));
    };
    score(gold, all_rows);

    std::set<ClassPair> gold_seen, gold_unseen;
    for (const auto& cp : gold) {
      if (partition.is_seen(cp.first, cp.second)) gold_seen.insert(cp);
      if (partition.is_unseen(cp.first, cp.second)) gold_unseen.insert(cp);
    }
    score(gold_seen, seen_rows);
    score(gold_unseen, unseen_rows);
  }
  if (all_rows.empty())
    throw ValidationError("opcls: no image carries gold pairs");

  OpclsReport rep;
  rep.per_image = all_rows;
  std::stable_sort(rep.per_image.begin(), rep.per_image.end(),
                   [](const auto& a, const auto& b) {
                     return a.image_id < b.image_id;
                   });
  rep.all = detail::aggregate(std::move(all_rows), opcls_ks());
  rep.seen = detail::aggregate(std::move(seen_rows), opcls_ks());
  rep.unseen = detail::aggregate(std::move(unseen_rows), opcls_ks());
  return rep;
}

// Civic Issue Graph for one image: forward, rank, keep the top 5 relations
// between an essential and a context object.
inline std::vector<ScoredRelation> cg_generate(const RelationModel& model,
                                               const ObjectVocabulary& objects,
                                               const ImageRecord& image,
                                               int k = 5) {
  auto fwd = model.forward(image);
  return filter_civic_relations(fwd.relations, objects, k);
}

// Greedy rank-order matching: each prediction, in rank order, claims the
// first unclaimed gold relation it matches. CGCls matches on the class
// triple; CGGen additionally requires IoU >= threshold on both boxes.
// Returns, for each prediction index, whether it matched.
inline std::vector<bool> greedy_match(
    const std::vector<ScoredRelation>& predictions,
    const std::vector<ScoredRelation>& gold, bool require_boxes,
    double iou_threshold) {
  std::vector<bool> matched(predictions.size(), false);
  std::vector<bool> used(gold.size(), false);
  for (size_t p = 0; p < predictions.size(); ++p) {
    const auto& pr = predictions[p];
    for (size_t g = 0; g < gold.size(); ++g) {
      if (used[g]) continue;
      const auto& gd = gold[g];
      if (pr.subject.cls != gd.subject.cls || pr.object.cls != gd.object.cls ||
          pr.predicate != gd.predicate)
        continue;
      if (require_boxes &&
          (iou(pr.subject.box, gd.subject.box) < iou_threshold ||
           iou(pr.object.box, gd.object.box) < iou_threshold))
        continue;
      matched[p] = true;
      used[g] = true;
      break;
    }
  }
  return matched;
}

struct CgReport {
  TaskReport cls, gen;
  std::vector<detail::PerImageMetrics> per_image;  // CGGen rows

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = "cg";
    j["cgcls"] = cls.to_json();
    j["cggen"] = gen.to_json();
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : per_image) {
      nlohmann::ordered_json r;
      r["image_id"] = row.image_id;
      nlohmann::ordered_json rec = nlohmann::ordered_json::object();
      for (int k : cg_ks()) rec[std::to_string(k)] = row.recall.at(k);
      r["recall"] = rec;
      rows.push_back(r);
    }
    j["per_image"] = rows;
    return j;
  }
};

// Evaluates generated Civic Issue Graphs against gold civic relations, with
// (CGCls) and without ignoring grounding (CGGen, both-box IoU >= threshold).
inline CgReport cggen_eval(const RelationModel& model,
                           const std::vector<ImageRecord>& test,
                           const ObjectVocabulary& objects,
                           double iou_threshold = 0.5) {
  std::vector<detail::PerImageMetrics> cls_rows, gen_rows;
  for (const auto& rec : test) {
    std::vector<ScoredRelation> gold;
    for (const auto& g : rec.gold) {
      bool civic = (objects.is_essential(g.subject.cls) &&
                    objects.is_context(g.object.cls)) ||
                   (objects.is_context(g.subject.cls) &&
                    objects.is_essential(g.object.cls));
      if (!civic) continue;
      g.subject.box.validate();
      g.object.box.validate();
      gold.push_back(g);
    }
    if (gold.empty()) continue;

    auto preds = cg_generate(model, objects, rec);
    auto cls_hits = greedy_match(preds, gold, false, iou_threshold);
    auto gen_hits = greedy_match(preds, gold, true, iou_threshold);

    auto score = [&](const std::vector<bool>& hits,
                     std::vector<detail::PerImageMetrics>& rows) {
      detail::PerImageMetrics row;
      row.image_id = rec.image_id;
      for (int k : cg_ks()) {
        int upto = std::min<int>(k, static_cast<int>(hits.size()));
        int correct = 0;
        for (int i = 0; i < upto; ++i) correct += hits[static_cast<size_t>(i)];
        row.recall[k] =
            static_cast<double>(correct) / static_cast<double>(gold.size());
        row.precision[k] =
            hits.empty() ? 0.0
                         : static_cast<double>(correct) /
                               static_cast<double>(upto);
      }
      rows.push_back(std::move(row));
    };
    score(cls_hits, cls_rows);
    score(gen_hits, gen_rows);
  }
  if (cls_rows.empty())
    throw ValidationError("cggen: no image carries gold civic relations");

  CgReport rep;
  rep.per_image = gen_rows;
  std::stable_sort(rep.per_image.begin(), rep.per_image.end(),
                   [](const auto& a, const auto& b) {
                     return a.image_id < b.image_id;
                   });
  rep.cls = detail::aggregate(std::move(cls_rows), cg_ks());
  rep.gen = detail::aggregate(std::move(gen_rows), cg_ks());
  return rep;
}

}  // namespace cig
