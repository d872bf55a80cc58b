#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "rcc/config.hpp"
#include "rcc/errors.hpp"
#include "temp_dir.hpp"

using namespace rcc;
using nlohmann::json;

namespace {

json minimal_json() {
  return json{{"data",
               {{"synthetic",
                 {{"slides", json::array({{{"slide_id", "a"},
                                           {"diagnosis", "ccRCC"},
                                           {"split", "training"}}})}}}}}};
}

config::ExperimentConfig write_and_load(const json& j, testutil::TempDir& tmp,
                                        const std::string& name = "config.json") {
  const auto path = tmp.file(name);
  testutil::write_text(path, j.dump(2));
  return config::load_experiment_config(path);
}

}  // namespace

TEST_CASE("a minimal config fills every documented default") {
  testutil::TempDir tmp("cfg");
  auto cfg = write_and_load(minimal_json(), tmp);

  CHECK(cfg.name == "experiment");
  CHECK(cfg.seed == 0);
  CHECK(cfg.ssl.K == 2);
  CHECK(cfg.ssl.T == doctest::Approx(0.5));
  CHECK(cfg.ssl.alpha == doctest::Approx(0.75));
  CHECK(cfg.ssl.lambda_max == doctest::Approx(15.0));
  CHECK(cfg.ssl.finetune_lambda == doctest::Approx(15.0));
  CHECK(cfg.ssl.ramp_steps == 1024);
  CHECK(cfg.patch.src_size == 2000);
  CHECK(cfg.patch.out_size == 224);
  CHECK(cfg.patch.stride == 0);
  CHECK(cfg.patch.exclude_point_windows);
  CHECK(cfg.detector_model.num_classes == 2);
  CHECK(cfg.subtyper_model.num_classes == 4);
  CHECK(cfg.detector_train.epochs == 25);
  CHECK(cfg.detector_train.finetune_epochs == 5);
  CHECK(cfg.subtype.mu == doctest::Approx(5.0));
  CHECK(cfg.subtype.detector_threshold == doctest::Approx(0.5));
  CHECK(cfg.subtype.mode == subtyping::SubtypeMode::kHybrid4Class);
  CHECK_FALSE(cfg.config_hash.empty());

  REQUIRE(cfg.synthetic.has_value());
  CHECK(cfg.synthetic->slides.size() == 1);
  CHECK(cfg.synthetic->subtype_hues.at(1) == doctest::Approx(275.0));
  CHECK(cfg.synthetic->subtype_hues.at(2) == doctest::Approx(215.0));
  CHECK(cfg.synthetic->subtype_hues.at(3) == doctest::Approx(155.0));
}

TEST_CASE("explicit finetune_lambda wins over the lambda_max default") {
  testutil::TempDir tmp("cfg");
  auto j = minimal_json();
  j["ssl"] = {{"lambda_max", 40.0}};
  auto follows = write_and_load(j, tmp, "a.json");
  CHECK(follows.ssl.finetune_lambda == doctest::Approx(40.0));

  j["ssl"] = {{"lambda_max", 40.0}, {"finetune_lambda", 2.5}};
  auto pinned = write_and_load(j, tmp, "b.json");
  CHECK(pinned.ssl.finetune_lambda == doctest::Approx(2.5));
}

TEST_CASE("config hash covers behavior and ignores labels") {
  testutil::TempDir tmp("cfg");
  auto base = write_and_load(minimal_json(), tmp, "base.json");

  auto renamed_json = minimal_json();
  renamed_json["name"] = "other-name";
  renamed_json["out_dir"] = "elsewhere";
  auto renamed = write_and_load(renamed_json, tmp, "renamed.json");
  CHECK(renamed.config_hash == base.config_hash);

  auto reseeded_json = minimal_json();
  reseeded_json["seed"] = 7;
  auto reseeded = write_and_load(reseeded_json, tmp, "reseeded.json");
  CHECK(reseeded.config_hash != base.config_hash);

  auto repatched_json = minimal_json();
  repatched_json["patch"] = {{"src_size", 1000}};
  auto repatched = write_and_load(repatched_json, tmp, "repatched.json");
  CHECK(repatched.config_hash != base.config_hash);

  // Stability: loading the identical file twice gives the identical hash.
  auto again = write_and_load(minimal_json(), tmp, "again.json");
  CHECK(again.config_hash == base.config_hash);
}

TEST_CASE("unknown keys are named in the error") {
  testutil::TempDir tmp("cfg");
  auto j = minimal_json();
  j["lerning_rate"] = 0.1;
  const auto path = tmp.file("typo.json");
  testutil::write_text(path, j.dump());
  try {
    config::load_experiment_config(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lerning_rate") != std::string::npos);
  }

  auto nested = minimal_json();
  nested["ssl"] = {{"KK", 2}};
  testutil::write_text(tmp.file("nested.json"), nested.dump());
  CHECK_THROWS_AS(config::load_experiment_config(tmp.file("nested.json")), ConfigError);
}

TEST_CASE("exactly one data source is required") {
  testutil::TempDir tmp("cfg");
  auto both = minimal_json();
  both["data"]["slide_index"] = "slides.json";
  testutil::write_text(tmp.file("both.json"), both.dump());
  CHECK_THROWS_AS(config::load_experiment_config(tmp.file("both.json")), ConfigError);

  json neither{{"data", json::object()}};
  testutil::write_text(tmp.file("neither.json"), neither.dump());
  CHECK_THROWS_AS(config::load_experiment_config(tmp.file("neither.json")), ConfigError);
}

TEST_CASE("bad values are rejected at load time") {
  testutil::TempDir tmp("cfg");
  auto reject = [&](json j, const std::string& name) {
    testutil::write_text(tmp.file(name), j.dump());
    CHECK_THROWS_AS(config::load_experiment_config(tmp.file(name)), ConfigError);
  };

  auto j = minimal_json();
  j["detector"] = {{"train", {{"lr", 0.0}}}};
  reject(j, "lr.json");

  j = minimal_json();
  j["detector"] = {{"train", {{"epochs", 0}}}};
  reject(j, "epochs.json");

  j = minimal_json();
  j["ssl"] = {{"T", 0.0}};
  reject(j, "T.json");

  j = minimal_json();
  j["ssl"] = {{"alpha", 0.0}};
  reject(j, "alpha.json");

  j = minimal_json();
  j["patch"] = {{"src_size", 100}, {"out_size", 224}};
  reject(j, "outsize.json");

  j = minimal_json();
  j["data"]["synthetic"]["num_regions"] = 0;
  reject(j, "regions.json");

  j = minimal_json();
  j["data"]["synthetic"]["region_radius_frac"] = {0.3, 0.1};
  reject(j, "radius.json");

  j = minimal_json();
  j["data"]["synthetic"]["slides"].push_back(
      {{"slide_id", "a"}, {"diagnosis", "pRCC"}, {"split", "test"}});
  reject(j, "dupe.json");

  j = minimal_json();
  j["subtyper"] = {{"mode", "quadratic"}};
  reject(j, "mode.json");

  testutil::write_text(tmp.file("mangled.json"), "{ not json");
  CHECK_THROWS_AS(config::load_experiment_config(tmp.file("mangled.json")), ConfigError);
  CHECK_THROWS_AS(config::load_experiment_config(tmp.file("missing.json")), ConfigError);
}

TEST_CASE("relative paths resolve against the config directory") {
  testutil::TempDir tmp("cfg");
  json j{{"out_dir", "runs/exp1"}, {"data", {{"slide_index", "slides/index.json"}}}};
  const auto path = tmp.file("config.json");
  testutil::write_text(path, j.dump());
  auto cfg = config::load_experiment_config(path);
  CHECK(cfg.out_dir == tmp.path() / "runs/exp1");
  CHECK(cfg.slide_index == tmp.path() / "slides/index.json");

  json abs{{"out_dir", "/tmp/abs-out"}, {"data", {{"slide_index", "/tmp/abs.json"}}}};
  testutil::write_text(tmp.file("abs.json"), abs.dump());
  auto acfg = config::load_experiment_config(tmp.file("abs.json"));
  CHECK(acfg.out_dir == std::filesystem::path("/tmp/abs-out"));
  CHECK(acfg.slide_index == std::filesystem::path("/tmp/abs.json"));
}

TEST_CASE("every stage seed derives from the experiment seed") {
  testutil::TempDir tmp("cfg");
  auto j = minimal_json();
  j["seed"] = 1234;
  auto cfg = write_and_load(j, tmp);
  CHECK(cfg.patch.seed == 1234);
  CHECK(cfg.detector_train.seed == 1234);
  CHECK(cfg.subtyper_train.seed == 1234);
  CHECK(cfg.detector_model.init_seed == 1234);
  CHECK(cfg.subtyper_model.init_seed == 1234);
}

TEST_CASE("overrides rewrite derived seeds and the hash") {
  testutil::TempDir tmp("cfg");
  auto cfg = write_and_load(minimal_json(), tmp);
  const std::string before = cfg.config_hash;

  config::ConfigOverrides ov;
  ov.seed = 99;
  config::apply_overrides(cfg, ov);
  CHECK(cfg.seed == 99);
  CHECK(cfg.patch.seed == 99);
  CHECK(cfg.detector_model.init_seed == 99);
  CHECK(cfg.config_hash != before);

  auto cfg2 = write_and_load(minimal_json(), tmp, "two.json");
  config::ConfigOverrides dir_only;
  dir_only.out_dir = "/tmp/elsewhere";
  config::apply_overrides(cfg2, dir_only);
  CHECK(cfg2.out_dir == std::filesystem::path("/tmp/elsewhere"));
  CHECK(cfg2.config_hash == before);  // out_dir stays outside the hash
}

TEST_CASE("config json round trips through its canonical form") {
  testutil::TempDir tmp("cfg");
  auto j = minimal_json();
  j["seed"] = 5;
  j["patch"] = {{"src_size", 1000}, {"out_size", 128}, {"stride", 500}};
  j["subtyper"] = {{"mu", 2.5}, {"mode", "ce_4class"}};
  auto cfg = write_and_load(j, tmp);

  json canon = config::config_to_json(cfg);
  auto back = config::config_from_json(canon, tmp.path());
  CHECK(config::hash_config(back) == cfg.config_hash);
  CHECK(back.patch.src_size == 1000);
  CHECK(back.subtype.mu == doctest::Approx(2.5));
  CHECK(back.subtype.mode == subtyping::SubtypeMode::kCe4Class);
  CHECK(back.seed == 5);
}
