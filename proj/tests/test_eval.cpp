#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "cig/eval.hpp"

using namespace cig;
using Vec = std::vector<double>;

namespace {

ObjectVocabulary toy_vocab() {
  ObjectVocabulary v;
  v.classes = {"issue", "ctx"};
  v.essential_set = {0};
  v.context_set = {1};
  return v;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.feature_dim = 3;
  cfg.num_classes = 2;
  cfg.num_predicates = 2;
  cfg.embed_dim = 2;
  cfg.obj_hidden = 2;
  cfg.edge_hidden = 2;
  cfg.decoder_hidden = 2;
  return cfg;
}

RegionProposal make_proposal(int cls, double x, double conf = 0.9) {
  RegionProposal p;
  p.box = {x, 0.5, 0.2, 0.2};
  p.feature = {x, 0.5 - x, 0.25};
  p.label_probs = std::vector<double>(3, (1.0 - conf) / 2.0);
  p.label_probs[static_cast<size_t>(cls + 1)] = conf;
  return p;
}

ImageRecord make_image(const std::string& id, const std::vector<int>& classes) {
  ImageRecord rec;
  rec.image_id = id;
  double x = 0.2;
  double conf = 0.95;
  for (int cls : classes) {
    rec.proposals.push_back(make_proposal(cls, x, conf));
    x += 0.15;
    conf -= 0.05;  // distinct confidences pin the sequence order
  }
  int n = static_cast<int>(classes.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      Vec u(3);
      for (int k = 0; k < 3; ++k)
        u[static_cast<size_t>(k)] =
            0.5 * (rec.proposals[static_cast<size_t>(i)].feature[static_cast<size_t>(k)] +
                   rec.proposals[static_cast<size_t>(j)].feature[static_cast<size_t>(k)]);
      rec.union_features[{i, j}] = u;
    }
  return rec;
}

void add_gold(ImageRecord& rec, int si, int oi, int predicate) {
  ScoredRelation g;
  g.subject = {rec.proposals[static_cast<size_t>(si)].predicted_class(),
               rec.proposals[static_cast<size_t>(si)].box};
  g.object = {rec.proposals[static_cast<size_t>(oi)].predicted_class(),
              rec.proposals[static_cast<size_t>(oi)].box};
  g.predicate = predicate;
  g.score = 1.0;
  rec.gold.push_back(g);
}

// Pushes the bias for (subject class, object class, predicate) high enough
// that the softmax saturates there.
void saturate(RelationModel& model, int s, int o, int p, double v = 1000.0) {
  int K = model.config.num_classes, P = model.config.num_predicates;
  model.params.at("bias_table").data[static_cast<size_t>((s * K + o) * (P + 1) + p)] = v;
}

}  // namespace

TEST_CASE("recall and precision closed forms") {
  std::set<int> gold = {7};
  std::vector<int> ranked = {7, 3, 5};
  CHECK(recall_at_k(gold, ranked, 1) == 1.0);

  std::set<int> gold2 = {7, 9};
  std::vector<int> top5 = {1, 7, 2, 3, 4};
  CHECK(recall_at_k(gold2, top5, 5) == 0.5);

  CHECK(precision_at_k(std::set<int>{7}, std::vector<int>{7}, 1) == 1.0);
  CHECK(precision_at_k(std::set<int>{7}, std::vector<int>{3, 7}, 1) == 0.0);
  CHECK(precision_at_k(std::set<int>{7}, std::vector<int>{}, 3) == 0.0);
  CHECK_THROWS_AS(recall_at_k(std::set<int>{}, ranked, 1), ValidationError);
  CHECK_THROWS_AS(recall_at_k(gold, ranked, 0), ValidationError);

  // Short rankings divide by their own length, not k.
  CHECK(precision_at_k(std::set<int>{3, 5}, std::vector<int>{3, 5}, 5) == 1.0);
}

TEST_CASE("rank metrics match a brute-force oracle on 1000 fuzz cases") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> item(0, 20);
  std::uniform_int_distribution<int> gold_n(1, 6);
  std::uniform_int_distribution<int> rank_n(0, 12);
  std::uniform_int_distribution<int> kd(1, 12);

  for (int trial = 0; trial < 1000; ++trial) {
    std::set<int> gold;
    int gn = gold_n(rng);
    while (static_cast<int>(gold.size()) < gn) gold.insert(item(rng));

    std::vector<int> pool(21);
    std::iota(pool.begin(), pool.end(), 0);
    shuffle_vector(pool, rng);
    std::vector<int> ranked(pool.begin(), pool.begin() + rank_n(rng));
    int k = kd(rng);

    // Oracle: explicit prefix set intersection.
    std::vector<int> prefix(
        ranked.begin(),
        ranked.begin() + std::min<size_t>(static_cast<size_t>(k), ranked.size()));
    int inter = 0;
    for (int g : gold)
      inter += std::count(prefix.begin(), prefix.end(), g) > 0 ? 1 : 0;

    double want_r = static_cast<double>(inter) / static_cast<double>(gold.size());
    CHECK(recall_at_k(gold, ranked, k) == want_r);

    double want_p =
        ranked.empty() ? 0.0
                       : static_cast<double>(inter) /
                             static_cast<double>(prefix.size());
    CHECK(precision_at_k(gold, ranked, k) == want_p);
  }
}

TEST_CASE("recall is monotone in k and precision counts are integral") {
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<int> item(0, 15);
  for (int trial = 0; trial < 200; ++trial) {
    std::set<int> gold = {item(rng), item(rng)};
    std::vector<int> pool(16);
    std::iota(pool.begin(), pool.end(), 0);
    shuffle_vector(pool, rng);
    std::vector<int> ranked(pool.begin(), pool.begin() + 10);
    double prev = 0;
    for (int k = 1; k <= 12; ++k) {
      double r = recall_at_k(gold, ranked, k);
      CHECK(r >= prev);
      prev = r;
      double p = precision_at_k(gold, ranked, k);
      int upto = std::min<int>(k, 10);
      double count = p * upto;
      CHECK(count == std::floor(count + 0.5));  // integral correct count
    }
  }
}

TEST_CASE("iou closed forms") {
  BoundingBox unit{0.0, 0.0, 1.0, 1.0};
  CHECK(iou(unit, unit) == 1.0);

  BoundingBox far{5.0, 5.0, 1.0, 1.0};
  CHECK(iou(unit, far) == 0.0);

  BoundingBox shifted{0.5, 0.0, 1.0, 1.0};  // half-width shift
  CHECK(iou(unit, shifted) == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(iou(shifted, unit) == iou(unit, shifted));

  // Touching edges intersect with zero area.
  BoundingBox adjacent{1.0, 0.0, 1.0, 1.0};
  CHECK(iou(unit, adjacent) == 0.0);

  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int i = 0; i < 100; ++i) {
    BoundingBox a{u(rng), u(rng), u(rng), u(rng)};
    BoundingBox b{u(rng), u(rng), u(rng), u(rng)};
    double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("cg_generate filters to civic relations and is idempotent") {
  auto vocab = toy_vocab();
  auto model = RelationModel::init(toy_config(), 7);

  SECTION("a saturated civic relation appears at rank 1") {
    saturate(model, 0, 1, 2);
    auto img = make_image("civic", {0, 1, 1});
    auto graph = cg_generate(model, vocab, img);
    REQUIRE(!graph.empty());
    CHECK(graph[0].subject.cls == 0);
    CHECK(graph[0].object.cls == 1);
    CHECK(graph[0].predicate == 2);
    CHECK(graph[0].score == 1.0);

    auto again = cg_generate(model, vocab, img);
    REQUIRE(again.size() == graph.size());
    for (size_t i = 0; i < graph.size(); ++i) CHECK(again[i] == graph[i]);
  }

  SECTION("context-only images give an empty graph") {
    saturate(model, 1, 1, 1);
    auto img = make_image("ctxonly", {1, 1});
    CHECK(cg_generate(model, vocab, img).empty());
  }

  SECTION("at most k relations survive") {
    saturate(model, 0, 1, 2);
    auto img = make_image("many", {0, 1, 1, 1, 1, 1, 1});
    auto graph = cg_generate(model, vocab, img, 3);
    CHECK(graph.size() <= 3);
  }
}

TEST_CASE("greedy matching follows rank order") {
  auto rel = [](int s, int p, int o, double x_s, double x_o) {
    ScoredRelation r;
    r.subject = {s, {x_s, 0.5, 0.2, 0.2}};
    r.object = {o, {x_o, 0.5, 0.2, 0.2}};
    r.predicate = p;
    r.score = 0.5;
    return r;
  };

  // Two predictions with the same triple compete for one gold.
  std::vector<ScoredRelation> preds = {rel(0, 1, 1, 0.3, 0.6),
                                       rel(0, 1, 1, 0.9, 0.6)};
  std::vector<ScoredRelation> gold = {rel(0, 1, 1, 0.3, 0.6)};
  auto cls = greedy_match(preds, gold, false, 0.5);
  CHECK(cls == std::vector<bool>{true, false});  // rank 1 claims it

  auto gen = greedy_match(preds, gold, true, 0.5);
  CHECK(gen == std::vector<bool>{true, false});

  // When rank 1 fails the box check, rank 2 may still ground the gold.
  std::vector<ScoredRelation> preds2 = {rel(0, 1, 1, 0.9, 0.6),
                                        rel(0, 1, 1, 0.3, 0.6)};
  auto gen2 = greedy_match(preds2, gold, true, 0.5);
  CHECK(gen2 == std::vector<bool>{false, true});
  auto cls2 = greedy_match(preds2, gold, false, 0.5);
  CHECK(cls2 == std::vector<bool>{true, false});

  // Triple mismatch never matches regardless of boxes.
  std::vector<ScoredRelation> preds3 = {rel(0, 2, 1, 0.3, 0.6)};
  CHECK(greedy_match(preds3, gold, false, 0.5) == std::vector<bool>{false});
}

TEST_CASE("greedy matching equals an oracle on fuzzed instances") {
  std::mt19937_64 rng(107);
  std::uniform_int_distribution<int> cls(0, 1);
  std::uniform_int_distribution<int> pred(1, 2);
  std::uniform_int_distribution<int> pos(0, 2);
  std::uniform_int_distribution<int> len_p(0, 6);
  std::uniform_int_distribution<int> len_g(0, 4);
  const double xs[3] = {0.3, 0.32, 0.8};

  auto rand_rel = [&]() {
    ScoredRelation r;
    r.subject = {cls(rng), {xs[pos(rng)], 0.5, 0.2, 0.2}};
    r.object = {cls(rng), {xs[pos(rng)], 0.5, 0.2, 0.2}};
    r.predicate = pred(rng);
    r.score = 0.5;
    return r;
  };

  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ScoredRelation> preds, gold;
    int np = len_p(rng), ng = len_g(rng);
    for (int i = 0; i < np; ++i) preds.push_back(rand_rel());
    for (int i = 0; i < ng; ++i) gold.push_back(rand_rel());

    for (bool boxes : {false, true}) {
      auto flags = greedy_match(preds, gold, boxes, 0.5);

      // Oracle: consume golds from an index list, first fit in rank order.
      std::vector<size_t> unused(gold.size());
      std::iota(unused.begin(), unused.end(), 0);
      std::vector<bool> expect(preds.size(), false);
      for (size_t p = 0; p < preds.size(); ++p) {
        for (auto it = unused.begin(); it != unused.end(); ++it) {
          const auto& g = gold[*it];
          bool triple_ok = preds[p].subject.cls == g.subject.cls &&
                           preds[p].object.cls == g.object.cls &&
                           preds[p].predicate == g.predicate;
          bool box_ok = !boxes || (iou(preds[p].subject.box, g.subject.box) >= 0.5 &&
                                   iou(preds[p].object.box, g.object.box) >= 0.5);
          if (triple_ok && box_ok) {
            expect[p] = true;
            unused.erase(it);
            break;
          }
        }
      }
      CHECK(flags == expect);

      // Prefix consistency: flags restricted to the top-k equal a fresh
      // greedy run on the truncated list.
      for (int k = 1; k <= np; ++k) {
        std::vector<ScoredRelation> topk(preds.begin(), preds.begin() + k);
        auto prefix_flags = greedy_match(topk, gold, boxes, 0.5);
        for (int i = 0; i < k; ++i)
          CHECK(prefix_flags[static_cast<size_t>(i)] == flags[static_cast<size_t>(i)]);
      }
    }

    // Grounding only removes matches.
    auto cls_fl = greedy_match(preds, gold, false, 0.5);
    auto gen_fl = greedy_match(preds, gold, true, 0.5);
    int ccount = std::count(cls_fl.begin(), cls_fl.end(), true);
    int gcount = std::count(gen_fl.begin(), gen_fl.end(), true);
    CHECK(gcount <= ccount);
  }
}

TEST_CASE("opcls_eval scores hand-built rankings") {
  auto model = RelationModel::init(toy_config(), 11);
  DomainPartition part;
  part.seen_pairs = {{0, 1}};

  SECTION("gold pair ranked first everywhere gives recall 1") {
    saturate(model, 0, 1, 1);
    std::vector<ImageRecord> test;
    for (int i = 0; i < 3; ++i) {
      auto img = make_image("img" + std::to_string(i), {0, 1, 1});
      add_gold(img, 0, 1, 1);
      test.push_back(img);
    }
    auto rep = opcls_eval(model, test, part);
    CHECK(rep.all.num_images == 3);
    CHECK(rep.all.recall.at(1) == 1.0);
    CHECK(rep.all.recall.at(20) == 1.0);
    CHECK(rep.seen.num_images == 3);
    CHECK(rep.seen.recall.at(1) == 1.0);
    CHECK(rep.unseen.num_images == 0);
  }

  SECTION("two-image arithmetic with one distractor") {
    // Image a has no (ctx, ctx) pair, so the boosted civic pair ranks 1.
    // Image b has one, and the saturated distractor beats the civic pair's
    // sub-saturated probability, pushing the gold pair to rank 2. The civic
    // bias must stay below saturation: two exact 1.0 scores would tie.
    saturate(model, 0, 1, 1, 8.0);
    saturate(model, 1, 1, 2, 1000.0);
    auto a = make_image("a", {0, 1});
    add_gold(a, 0, 1, 1);
    auto b = make_image("b", {0, 1, 1});
    add_gold(b, 0, 1, 1);

    auto rep = opcls_eval(model, {a, b}, part);
    CHECK(rep.all.num_images == 2);
    CHECK(rep.all.recall.at(1) == 0.5);   // (1 + 0) / 2
    CHECK(rep.all.recall.at(5) == 1.0);
    CHECK(rep.all.precision.at(1) == 0.5);

    SECTION("report is invariant under image permutation") {
      auto swapped = opcls_eval(model, {b, a}, part);
      CHECK(swapped.to_json().dump() == rep.to_json().dump());
    }

    SECTION("evaluation is deterministic") {
      auto again = opcls_eval(model, {a, b}, part);
      CHECK(again.to_json().dump() == rep.to_json().dump());
    }
  }

  SECTION("unseen subset is scored separately") {
    DomainPartition split;
    split.seen_pairs = {{1, 0}};
    split.unseen_pairs = {{0, 1}};
    saturate(model, 0, 1, 1);
    auto img = make_image("u", {0, 1});
    add_gold(img, 0, 1, 1);
    auto rep = opcls_eval(model, {img}, split);
    CHECK(rep.unseen.num_images == 1);
    CHECK(rep.unseen.recall.at(1) == 1.0);
    CHECK(rep.seen.num_images == 0);
  }

  SECTION("images without gold are skipped; all-empty is an error") {
    auto with_gold = make_image("g", {0, 1});
    add_gold(with_gold, 0, 1, 1);
    auto without = make_image("n", {0, 1});
    auto rep = opcls_eval(model, {with_gold, without}, part);
    CHECK(rep.all.num_images == 1);

    CHECK_THROWS_AS(opcls_eval(model, {without}, part), ValidationError);
  }

  SECTION("duplicate class pairs collapse in the ranking") {
    saturate(model, 0, 1, 1);
    auto img = make_image("dup", {0, 1, 1});
    add_gold(img, 0, 1, 1);
    auto rep = opcls_eval(model, {img}, part);
    // Ranked class pairs: however many distinct ones exist, the gold (0,1)
    // pair saturates to probability 1 and must sit first.
    CHECK(rep.all.recall.at(1) == 1.0);
  }
}

TEST_CASE("cggen_eval applies triple and grounding conditions") {
  auto vocab = toy_vocab();
  auto model = RelationModel::init(toy_config(), 13);
  saturate(model, 0, 1, 2);

  SECTION("exact reproduction of a single gold gives perfect scores") {
    auto img = make_image("exact", {0, 1});
    add_gold(img, 0, 1, 2);
    auto rep = cggen_eval(model, {img}, vocab);
    CHECK(rep.cls.num_images == 1);
    CHECK(rep.cls.recall.at(1) == 1.0);
    CHECK(rep.cls.precision.at(1) == 1.0);
    CHECK(rep.gen.recall.at(1) == 1.0);
    CHECK(rep.gen.precision.at(1) == 1.0);
  }

  SECTION("shifted gold boxes fail CGGen but pass CGCls") {
    auto img = make_image("shifted", {0, 1});
    add_gold(img, 0, 1, 2);
    img.gold[0].subject.box.x += 10.0;  // far from any proposal
    auto rep = cggen_eval(model, {img}, vocab);
    CHECK(rep.cls.recall.at(1) == 1.0);
    CHECK(rep.gen.recall.at(1) == 0.0);
    CHECK(rep.gen.recall.at(5) == 0.0);
  }

  SECTION("gen recall never exceeds cls recall") {
    std::mt19937_64 rng(109);
    std::uniform_int_distribution<int> coin(0, 1);
    std::vector<ImageRecord> test;
    for (int i = 0; i < 6; ++i) {
      auto img = make_image("r" + std::to_string(i), {0, 1, 1});
      add_gold(img, 0, coin(rng) ? 1 : 2, 2);
      if (coin(rng)) img.gold[0].object.box.x += 10.0;
      test.push_back(img);
    }
    auto rep = cggen_eval(model, test, vocab);
    for (int k : cg_ks()) {
      CHECK(rep.gen.recall.at(k) <= rep.cls.recall.at(k));
      CHECK(rep.gen.precision.at(k) <= rep.cls.precision.at(k));
    }
  }

  SECTION("non-civic gold is ignored and gold-free sets are an error") {
    auto img = make_image("noncivic", {1, 1});
    add_gold(img, 0, 1, 1);  // ctx-ctx relation, not civic
    CHECK_THROWS_AS(cggen_eval(model, {img}, vocab), ValidationError);
  }

  SECTION("permutation invariance") {
    auto a = make_image("pa", {0, 1});
    add_gold(a, 0, 1, 2);
    auto b = make_image("pb", {0, 1, 1});
    add_gold(b, 0, 1, 2);
    auto r1 = cggen_eval(model, {a, b}, vocab);
    auto r2 = cggen_eval(model, {b, a}, vocab);
    CHECK(r1.to_json().dump() == r2.to_json().dump());
  }
}

TEST_CASE("report values stay within [0, 1]") {
  auto model = RelationModel::init(toy_config(), 17);
  auto vocab = toy_vocab();
  DomainPartition part;
  part.seen_pairs = {{0, 1}};
  std::mt19937_64 rng(111);
  std::uniform_int_distribution<int> coin(0, 1);

  std::vector<ImageRecord> test;
  for (int i = 0; i < 8; ++i) {
    auto img = make_image("b" + std::to_string(i), {0, 1, coin(rng)});
    add_gold(img, 0, 1, 1 + coin(rng));
    test.push_back(img);
  }
  auto op = opcls_eval(model, test, part);
  auto cg = cggen_eval(model, test, vocab);
  for (const TaskReport* rep : {&op.all, &op.seen, &op.unseen, &cg.cls, &cg.gen}) {
    for (const auto& [k, v] : rep->recall) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (const auto& [k, v] : rep->precision) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  // Recall monotone in k within each report.
  for (const TaskReport* rep : {&op.all, &cg.cls, &cg.gen}) {
    double prev = 0;
    for (int k : rep->ks) {
      if (!rep->recall.count(k)) continue;
      CHECK(rep->recall.at(k) >= prev);
      prev = rep->recall.at(k);
    }
  }
}
