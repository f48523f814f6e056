#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cig/config.hpp"

using namespace cig;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("cig_config_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << text;
}

}  // namespace

TEST_CASE("config defaults round-trip through json") {
  ExperimentConfig cfg;
  auto echo = ExperimentConfig::from_json(cfg.to_json());
  CHECK(echo.to_json().dump() == cfg.to_json().dump());

  // Every declared key appears in the resolved dump.
  auto j = cfg.to_json();
  CHECK(j.size() == ExperimentConfig::keys().size());
  for (const auto& key : ExperimentConfig::keys()) CHECK(j.contains(key.name));
}

TEST_CASE("unknown keys and wrong types are rejected") {
  CHECK_THROWS_MATCHES(
      ExperimentConfig::from_json({{"sneed", 1}}), ConfigError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("unknown config key")));

  CHECK_THROWS_AS(ExperimentConfig::from_json({{"seed", "one"}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"model_feature_dim", 3.5}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"out_dir", 7}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"model_use_decoder", 1}}),
                  ConfigError);
  CHECK_THROWS_AS(
      ExperimentConfig::from_json(nlohmann::json::array({1, 2, 3})),
      ConfigError);

  // Integers are acceptable where doubles are expected.
  auto cfg = ExperimentConfig::from_json({{"pretrain_lr", 1}});
  CHECK(cfg.pretrain_lr == 1.0);
}

TEST_CASE("relative paths resolve against the config file directory") {
  auto dir = fresh_dir("paths");
  write_file(dir / "exp.json",
             R"({"train_records": "data/train.jsonl",
                 "objects_file": "/abs/objects.txt",
                 "out_dir": "runs/a"})");
  auto cfg = ExperimentConfig::load((dir / "exp.json").string());
  CHECK(cfg.train_records == (dir / "data/train.jsonl").string());
  CHECK(cfg.objects_file == "/abs/objects.txt");
  CHECK(cfg.out_dir == (dir / "runs/a").string());
  CHECK(cfg.test_records.empty());
}

TEST_CASE("config load failures carry the right error type") {
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/exp.json"), IoError);

  auto dir = fresh_dir("badjson");
  write_file(dir / "broken.json", "{ not json");
  CHECK_THROWS_AS(ExperimentConfig::load((dir / "broken.json").string()),
                  ConfigError);
}

TEST_CASE("config validation covers value ranges") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  SECTION("variant string") {
    cfg.adapt_variant = "both";
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.adapt_variant = "g_only";
    CHECK_NOTHROW(cfg.validate());
  }
  SECTION("schedule shape") {
    cfg.adapt_model_steps = cfg.adapt_disc_steps;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
  SECTION("rates and bounds") {
    cfg.pretrain_lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
  SECTION("iou threshold") {
    cfg.eval_iou_threshold = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.eval_iou_threshold = 1.0;
    CHECK_NOTHROW(cfg.validate());
  }
  SECTION("synthetic knobs") {
    cfg.synth_novel_issue_fraction = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("sub-configurations mirror the flat keys") {
  ExperimentConfig cfg;
  cfg.model_feature_dim = 12;
  cfg.adapt_disc_steps = 9;
  cfg.adapt_model_steps = 3;
  cfg.adapt_variant = "g_only";
  cfg.synth_context_classes = 5;

  auto ac = cfg.adapt_config();
  CHECK(ac.n_disc == 9);
  CHECK(ac.n_model == 3);
  CHECK(ac.variant == DiscVariant::kGOnly);

  auto sc = cfg.synth_config();
  CHECK(sc.feature_dim == 12);  // shared with the model
  CHECK(sc.num_context_classes == 5);

  ObjectVocabulary objects;
  objects.classes = {"a", "b", "c"};
  objects.essential_set = {0};
  objects.context_set = {1, 2};
  PredicateVocabulary predicates;
  predicates.predicates = {"__background__", "on", "near"};
  auto mc = cfg.model_config(objects, predicates);
  CHECK(mc.feature_dim == 12);
  CHECK(mc.num_classes == 3);
  CHECK(mc.num_predicates == 2);
  CHECK(mc.use_decoder);
}

TEST_CASE("partition files round-trip by class name") {
  ObjectVocabulary objects;
  objects.classes = {"pothole", "garbage", "road", "bin"};
  objects.essential_set = {0, 1};
  objects.context_set = {2, 3};

  DomainPartition part;
  part.seen_pairs = {{0, 2}, {1, 3}};
  part.unseen_pairs = {{1, 2}};

  auto dir = fresh_dir("partition");
  auto path = (dir / "partition.tsv").string();
  save_partition(path, part, objects);
  auto back = load_partition(path, objects);
  CHECK(back.seen_pairs == part.seen_pairs);
  CHECK(back.unseen_pairs == part.unseen_pairs);

  SECTION("unknown class names are rejected") {
    write_file(dir / "bad.tsv", "pothole\tcurb\tseen\n");
    CHECK_THROWS_AS(load_partition((dir / "bad.tsv").string(), objects),
                    ValidationError);
  }
  SECTION("bad tags are rejected") {
    write_file(dir / "tag.tsv", "pothole\troad\tmaybe\n");
    CHECK_THROWS_AS(load_partition((dir / "tag.tsv").string(), objects),
                    IoError);
  }
  SECTION("comments and blank lines are skipped") {
    write_file(dir / "comment.tsv", "# header\n\npothole\troad\tseen\n");
    auto p = load_partition((dir / "comment.tsv").string(), objects);
    CHECK(p.seen_pairs == std::set<ClassPair>{{0, 2}});
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_partition((dir / "nope.tsv").string(), objects),
                    IoError);
  }
}

TEST_CASE("triples round-trip through the tsv format") {
  std::vector<Triple> triples = {{"pothole", "on", "road", ""},
                                 {"garbage", "near", "bin", "img_7"}};
  auto dir = fresh_dir("triples");
  auto path = (dir / "triples.tsv").string();
  save_triples(path, triples);
  auto back = load_triples(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].subject == "pothole");
  CHECK(back[0].predicate == "on");
  CHECK(back[0].object == "road");
  CHECK(back[1].image_id == "img_7");
}
