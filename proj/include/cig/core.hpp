#pragma once
// Domain types for Civic Issue Graphs: vocabularies, relations, the
// seen/unseen pair partition and the relation filtering rules shared by
// training and evaluation.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cig/tensor.hpp"

namespace cig {

// Center-point box convention: (x, y) is the box center.
struct BoundingBox {
  double x = 0, y = 0, w = 0, h = 0;

  void validate() const {
    if (!(std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
          std::isfinite(h)))
      throw ValidationError("bounding box has non-finite fields");
    if (!(w > 0) || !(h > 0))
      throw ValidationError("bounding box requires w > 0 and h > 0");
  }

  bool operator==(const BoundingBox&) const = default;
};

struct ObjectVocabulary {
  std::vector<std::string> classes;
  std::set<int> essential_set;  // classes that define a civic issue
  std::set<int> context_set;    // surrounding scene classes

  int size() const { return static_cast<int>(classes.size()); }

  int index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (classes[static_cast<size_t>(i)] == name) return i;
    return -1;
  }

  bool is_essential(int cls) const { return essential_set.count(cls) > 0; }
  bool is_context(int cls) const { return context_set.count(cls) > 0; }

  void validate() const {
    std::set<std::string> seen(classes.begin(), classes.end());
    if (seen.size() != classes.size())
      throw ValidationError("object vocabulary has duplicate class names");
    for (int i : essential_set)
      if (context_set.count(i))
        throw ValidationError("class " + std::to_string(i) +
                              " is both essential and context");
    if (essential_set.size() + context_set.size() != classes.size())
      throw ValidationError(
          "essential and context sets must cover every class exactly once");
    for (int i : essential_set)
      if (i < 0 || i >= size()) throw ValidationError("essential index out of range");
    for (int i : context_set)
      if (i < 0 || i >= size()) throw ValidationError("context index out of range");
  }
};

struct PredicateVocabulary {
  // Index 0 is the reserved background label and never appears in an
  // emitted relation.
  static constexpr int kBackground = 0;
  static constexpr const char* kBackgroundName = "__background__";

  std::vector<std::string> predicates;

  int size() const { return static_cast<int>(predicates.size()); }

  int index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (predicates[static_cast<size_t>(i)] == name) return i;
    return -1;
  }

  void validate() const {
    if (predicates.empty() || predicates[0] != kBackgroundName)
      throw ValidationError("predicate vocabulary must reserve index 0 for " +
                            std::string(kBackgroundName));
    std::set<std::string> seen(predicates.begin(), predicates.end());
    if (seen.size() != predicates.size())
      throw ValidationError("predicate vocabulary has duplicate names");
  }
};

struct Grounding {
  int cls = -1;
  BoundingBox box;
  bool operator==(const Grounding&) const = default;
};

struct ScoredRelation {
  Grounding subject;
  Grounding object;
  int predicate = -1;
  double score = 0;
  bool operator==(const ScoredRelation&) const = default;
};

// Canonical ranking: descending score, then ascending subject class,
// object class, predicate. Box coordinates settle any residual ties so
// sorting is a total order on distinct relations.
inline bool relation_order(const ScoredRelation& a, const ScoredRelation& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.subject.cls != b.subject.cls) return a.subject.cls < b.subject.cls;
  if (a.object.cls != b.object.cls) return a.object.cls < b.object.cls;
  if (a.predicate != b.predicate) return a.predicate < b.predicate;
  auto key = [](const BoundingBox& bb) {
    return std::make_tuple(bb.x, bb.y, bb.w, bb.h);
  };
  if (key(a.subject.box) != key(b.subject.box))
    return key(a.subject.box) < key(b.subject.box);
  return key(a.object.box) < key(b.object.box);
}

struct Triple {
  std::string subject, predicate, object;
  std::string image_id;  // optional
  bool operator==(const Triple&) const = default;
};

using ClassPair = std::pair<int, int>;  // ordered (subject, object)

struct DomainPartition {
  std::set<ClassPair> seen_pairs;
  std::set<ClassPair> unseen_pairs;

  bool is_seen(int s, int o) const { return seen_pairs.count({s, o}) > 0; }
  bool is_unseen(int s, int o) const { return unseen_pairs.count({s, o}) > 0; }

  void validate() const {
    for (const auto& p : seen_pairs)
      if (unseen_pairs.count(p))
        throw ValidationError("partition pair present on both sides");
  }
};

using NamePair = std::pair<std::string, std::string>;

// A triple's ordered (subject, object) pair lands in seen_pairs iff it
// appears in the source-domain pair vocabulary.
inline DomainPartition partition_triples(const std::vector<Triple>& triples,
                                         const std::set<NamePair>& source_pairs,
                                         const ObjectVocabulary& vocab) {
  DomainPartition part;
  for (const Triple& t : triples) {
    int s = vocab.index_of(t.subject);
    int o = vocab.index_of(t.object);
    if (s < 0 || o < 0)
      throw ValidationError("unknown class in triple [" + t.subject + ", " +
                            t.predicate + ", " + t.object + "]");
    if (source_pairs.count({t.subject, t.object}))
      part.seen_pairs.insert({s, o});
    else
      part.unseen_pairs.insert({s, o});
  }
  return part;
}

// Triple-level counts behind the partition (the pair sets deduplicate).
struct PartitionCounts {
  int seen_triples = 0;
  int unseen_triples = 0;
};

inline PartitionCounts count_partitioned_triples(
    const std::vector<Triple>& triples, const std::set<NamePair>& source_pairs,
    const ObjectVocabulary& vocab) {
  PartitionCounts c;
  for (const Triple& t : triples) {
    if (vocab.index_of(t.subject) < 0 || vocab.index_of(t.object) < 0)
      throw ValidationError("unknown class in triple [" + t.subject + ", " +
                            t.predicate + ", " + t.object + "]");
    if (source_pairs.count({t.subject, t.object}))
      ++c.seen_triples;
    else
      ++c.unseen_triples;
  }
  return c;
}

using SimilarityFn = std::function<double(const std::string&, const std::string&)>;

// Maps a free-form label onto the vocabulary when the best similarity
// exceeds 0.4 (strict). Ties resolve to the lowest class index.
inline std::optional<int> map_to_target_class(const std::string& label,
                                              const ObjectVocabulary& vocab,
                                              const SimilarityFn& similarity) {
  int best = -1;
  double best_sim = 0;
  for (int i = 0; i < vocab.size(); ++i) {
    double s = similarity(label, vocab.classes[static_cast<size_t>(i)]);
    if (s > best_sim) {
      best_sim = s;
      best = i;
    }
  }
  if (best_sim > 0.4) return best;
  return std::nullopt;
}

// Keeps relations connecting one essential-class object with one
// context-class object (either direction), truncated to the first k.
// Input order is preserved; callers pass score-ranked lists.
inline std::vector<ScoredRelation> filter_civic_relations(
    const std::vector<ScoredRelation>& ranked, const ObjectVocabulary& vocab,
    int k = 5) {
  std::vector<ScoredRelation> out;
  for (const ScoredRelation& r : ranked) {
    if (static_cast<int>(out.size()) >= k) break;
    if (r.predicate == PredicateVocabulary::kBackground) continue;
    bool civic = (vocab.is_essential(r.subject.cls) && vocab.is_context(r.object.cls)) ||
                 (vocab.is_context(r.subject.cls) && vocab.is_essential(r.object.cls));
    if (civic) out.push_back(r);
  }
  return out;
}

// ----- line-oriented reference files -------------------------------------

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) out.push_back(field);
  return out;
}

inline bool skippable(const std::string& line) {
  return line.empty() || line[0] == '#';
}

}  // namespace detail

// Format: one class per line, "name<TAB>essential" or "name<TAB>context".
inline ObjectVocabulary load_object_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open object vocabulary: " + path);
  ObjectVocabulary vocab;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() != 2)
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected 2 tab-separated fields");
    int idx = vocab.size();
    vocab.classes.push_back(fields[0]);
    if (fields[1] == "essential")
      vocab.essential_set.insert(idx);
    else if (fields[1] == "context")
      vocab.context_set.insert(idx);
    else
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": role must be 'essential' or 'context', got '" +
                    fields[1] + "'");
  }
  vocab.validate();
  return vocab;
}

// Format: one predicate name per line; background is implicit at index 0.
inline PredicateVocabulary load_predicate_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predicate vocabulary: " + path);
  PredicateVocabulary vocab;
  vocab.predicates.push_back(PredicateVocabulary::kBackgroundName);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    if (line.find('\t') != std::string::npos)
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": predicate names must not contain tabs");
    vocab.predicates.push_back(line);
  }
  vocab.validate();
  return vocab;
}

// Format: object1<TAB>predicate<TAB>object2[<TAB>image_id].
inline std::vector<Triple> load_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open triple file: " + path);
  std::vector<Triple> triples;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() != 3 && fields.size() != 4)
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected 3 or 4 tab-separated fields, got " +
                    std::to_string(fields.size()));
    Triple t;
    t.subject = fields[0];
    t.predicate = fields[1];
    t.object = fields[2];
    if (fields.size() == 4) t.image_id = fields[3];
    triples.push_back(std::move(t));
  }
  return triples;
}

// Format: object1<TAB>object2.
inline std::set<NamePair> load_pair_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pair vocabulary: " + path);
  std::set<NamePair> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skippable(line)) continue;
    auto fields = detail::split_tabs(line);
    if (fields.size() != 2)
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected 2 tab-separated fields");
    pairs.insert({fields[0], fields[1]});
  }
  return pairs;
}

}  // namespace cig
