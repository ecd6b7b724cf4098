#include <filesystem>
#include <fstream>

#include "badiff/config.hpp"
#include "doctest.h"

using namespace badiff;

TEST_CASE("defaults cover every key and build every config object") {
  Config cfg;
  for (const auto& [k, v] : Config::default_keys()) {
    CHECK(cfg.get(k) == v);
  }
  CHECK_NOTHROW(cfg.dataset_spec());
  CHECK_NOTHROW(cfg.model_config());
  CHECK_NOTHROW(cfg.train_config());
  CHECK_NOTHROW(cfg.policy_run_config());

  ModelConfig mc = cfg.model_config();
  CHECK(mc.denoiser.levels == std::vector<int>{32, 64});
  CHECK(mc.denoiser.blocks_per_level == 2);
  CHECK(mc.denoiser.entropy_embed_dim == 128);
  CHECK(mc.schedule_steps == 200);
  CHECK(mc.budget.lo == 0.2);
  CHECK(mc.budget.hi == 2.0);

  TrainConfig tc = cfg.train_config();
  CHECK(tc.weights.lambda_ent == 0.1);
  CHECK(tc.weights.lambda_cal == 1e-3);
  CHECK(tc.weights.lambda_stop == 1e-2);
  CHECK(tc.adam.lr == 1e-4);
  CHECK(tc.adam.clip_norm == 1.0);
}

TEST_CASE("unknown keys are rejected") {
  Config cfg;
  CHECK_THROWS_AS(cfg.set("data.unknown", "3"), format_error);
  CHECK_THROWS_AS(Config::from_text("no.such.key = 1\n"), format_error);
  CHECK_THROWS_AS(Config::from_text("data.count 12\n"), format_error);
}

TEST_CASE("parse -> serialize -> parse is stable") {
  Config cfg = Config::from_text(
      "# comment line\n"
      "data.count = 7\n"
      "model.levels = 8,16\n"
      "train.lambda_ent = 0.25\n");
  std::string once = cfg.serialize();
  Config again = Config::from_text(once);
  CHECK(again.serialize() == once);
  CHECK(again.get_int("data.count") == 7);
  CHECK(again.get_double("train.lambda_ent") == 0.25);
  CHECK(again.model_config().denoiser.levels == std::vector<int>{8, 16});
}

TEST_CASE("type errors are loud") {
  Config cfg = Config::from_text("data.count = pear\n");
  CHECK_THROWS_AS(cfg.get_int("data.count"), format_error);
  Config cfg2 = Config::from_text("train.refresh_labels = maybe\n");
  CHECK_THROWS_AS(cfg2.get_bool("train.refresh_labels"), format_error);
  Config cfg3 = Config::from_text("train.stop_budget = sometimes\n");
  CHECK_THROWS_AS(cfg3.train_config(), format_error);
}

TEST_CASE("config file io") {
  auto path = (std::filesystem::temp_directory_path() / "badiff_cfg_test.cfg").string();
  {
    std::ofstream out(path);
    out << "data.size = 24\n\n# trailing comment\nmodel.groups = 4\n";
  }
  Config cfg = Config::from_file(path);
  CHECK(cfg.get_int("data.size") == 24);
  CHECK(cfg.get_int("model.groups") == 4);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Config::from_file(path), format_error);
}
