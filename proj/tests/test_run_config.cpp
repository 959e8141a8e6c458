#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "hiclass/run_config.hpp"
#include "test_util.hpp"

using namespace hiclass;

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

const char* kFullConfig = R"({
  "taxonomy": "tax.json",
  "dataset": {
    "feature_dim": 16,
    "patches_per_bag": {"min": 4, "max": 9},
    "slides_per_fine_class": {"train": 3, "val": 1, "test": 1},
    "per_class_slides": {"Xanthoma": {"train": 1, "val": 1, "test": 1}},
    "coarse_center_scale": 8.0,
    "fine_offset_scale": 2.0,
    "patch_noise_scale": 0.3,
    "background_patch_fraction": 0.25,
    "master_seed": 17
  },
  "model": {
    "aggregate_dim": 32,
    "split_dim": 16,
    "class_feature_dim": 16,
    "attention_dim": 16,
    "integration": "bidirectional",
    "aggregator": "attention"
  },
  "loss": {
    "enable_con": true,
    "enable_int": false,
    "enable_gce": true,
    "alpha": 0.5,
    "weights": {"ce_coarse": 1.0, "ce_fine": 2.0, "con": 1.0, "int": 1.0, "gce": 0.5}
  },
  "train": {
    "epochs": 7,
    "lr_initial": 0.0002,
    "lr_final": 0.00002,
    "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "seed": 11,
    "shuffle_each_epoch": true,
    "anneal_per_epoch": false,
    "checkpoint_policy": "last",
    "checkpoint_every": 3
  },
  "output_dir": "out"
})";

}  // namespace

TEST_CASE("full config parses with resolved relative paths", "[run_config]") {
  testutil::ScratchDir dir("cfg");
  default_gastric_taxonomy().save((dir.path() / "tax.json").string());
  write_file(dir.path() / "run.json", kFullConfig);

  const RunConfig cfg = RunConfig::load(dir.path() / "run.json");
  REQUIRE(cfg.taxonomy.has_value());
  REQUIRE(cfg.taxonomy->num_fine() == 14);
  REQUIRE(cfg.taxonomy_path == dir.path() / "tax.json");

  REQUIRE(cfg.dataset.has_value());
  REQUIRE(cfg.dataset->feature_dim == 16);
  REQUIRE(cfg.dataset->patches_min == 4);
  REQUIRE(cfg.dataset->patches_max == 9);
  REQUIRE(cfg.dataset->per_class_slides.at("Xanthoma").train == 1);
  REQUIRE(cfg.dataset->master_seed == 17);

  REQUIRE(cfg.model.has_value());
  REQUIRE(cfg.model->aggregate_dim == 32);
  REQUIRE(cfg.model->integration == IntegrationMode::bidirectional);

  REQUIRE(cfg.loss.has_value());
  REQUIRE_FALSE(cfg.loss->enable_int);
  REQUIRE(cfg.loss->alpha == 0.5);
  REQUIRE(cfg.loss->weight_ce_fine == 2.0);
  REQUIRE(cfg.loss->weight_gce == 0.5);

  REQUIRE(cfg.train.has_value());
  REQUIRE(cfg.train->epochs == 7);
  REQUIRE(cfg.train->checkpoint_policy == CheckpointPolicy::last);

  REQUIRE(cfg.output_dir == dir.path() / "out");
}

TEST_CASE("unknown keys are rejected at every level", "[run_config]") {
  testutil::ScratchDir dir("cfgbad");
  default_gastric_taxonomy().save((dir.path() / "tax.json").string());

  write_file(dir.path() / "top.json", R"({"taxonomy": "tax.json", "runs": 3})");
  REQUIRE_THROWS_WITH(RunConfig::load(dir.path() / "top.json"),
                      Catch::Matchers::ContainsSubstring("runs"));

  write_file(dir.path() / "model.json",
             R"({"model": {"aggregate_dim": 32, "split_dim": 16, "hidden": 1}})");
  REQUIRE_THROWS_WITH(RunConfig::load(dir.path() / "model.json"),
                      Catch::Matchers::ContainsSubstring("hidden"));

  write_file(dir.path() / "weights.json",
             R"({"loss": {"weights": {"ce": 1.0}}})");
  REQUIRE_THROWS_WITH(RunConfig::load(dir.path() / "weights.json"),
                      Catch::Matchers::ContainsSubstring("ce"));

  write_file(
      dir.path() / "dataset.json",
      R"({"taxonomy": "tax.json", "dataset": {"feature_dmi": 16}})");
  REQUIRE_THROWS_WITH(RunConfig::load(dir.path() / "dataset.json"),
                      Catch::Matchers::ContainsSubstring("feature_dmi"));
}

TEST_CASE("config validation failures carry context", "[run_config]") {
  testutil::ScratchDir dir("cfgval");
  default_gastric_taxonomy().save((dir.path() / "tax.json").string());

  write_file(dir.path() / "negweight.json",
             R"({"loss": {"weights": {"gce": -1.0}}})");
  REQUIRE_THROWS_AS(RunConfig::load(dir.path() / "negweight.json"),
                    std::invalid_argument);

  write_file(dir.path() / "badsplit.json",
             R"({"model": {"aggregate_dim": 30, "split_dim": 16}})");
  REQUIRE_THROWS_AS(RunConfig::load(dir.path() / "badsplit.json"),
                    std::invalid_argument);

  write_file(dir.path() / "orphandata.json",
             R"({"dataset": {"feature_dim": 8}})");
  REQUIRE_THROWS_WITH(RunConfig::load(dir.path() / "orphandata.json"),
                      Catch::Matchers::ContainsSubstring("taxonomy"));

  write_file(dir.path() / "missingtax.json",
             R"({"taxonomy": "no_such_file.json"})");
  REQUIRE_THROWS_WITH(RunConfig::load(dir.path() / "missingtax.json"),
                      Catch::Matchers::ContainsSubstring("no_such_file.json"));

  REQUIRE_THROWS_WITH(RunConfig::load(dir.path() / "absent.json"),
                      Catch::Matchers::ContainsSubstring("absent.json"));

  write_file(dir.path() / "notjson.json", "{nope");
  REQUIRE_THROWS_WITH(RunConfig::load(dir.path() / "notjson.json"),
                      Catch::Matchers::ContainsSubstring("parse error"));
}

TEST_CASE("sections are optional and default cleanly", "[run_config]") {
  testutil::ScratchDir dir("cfgmin");
  write_file(dir.path() / "empty.json", "{}");
  const RunConfig cfg = RunConfig::load(dir.path() / "empty.json");
  REQUIRE_FALSE(cfg.taxonomy.has_value());
  REQUIRE_FALSE(cfg.dataset.has_value());
  REQUIRE_FALSE(cfg.model.has_value());
  REQUIRE_FALSE(cfg.loss.has_value());
  REQUIRE_FALSE(cfg.train.has_value());
  REQUIRE_FALSE(cfg.output_dir.has_value());
}
