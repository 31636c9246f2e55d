#include "doctest.h"
#include "json.hpp"
#include "lift/common.hpp"
#include "lift/config.hpp"
#include "test_util.hpp"

using namespace lift;

TEST_CASE("golden defaults") {
  const EngineConfig cfg = parse_config("{}");
  CHECK(cfg.grid.pillar_size_x == 0.15);
  CHECK(cfg.grid.pillar_size_y == 0.15);
  CHECK(cfg.grid.x_min == -54.0);
  CHECK(cfg.grid.x_max == 54.0);
  CHECK(cfg.grid.y_min == -54.0);
  CHECK(cfg.grid.y_max == 54.0);
  CHECK(cfg.grid.z_min == -5.0);
  CHECK(cfg.grid.z_max == 3.0);
  CHECK(cfg.grid.max_points_per_pillar == 20);
  CHECK(cfg.network.encoder_out == 64);
  CHECK(cfg.network.stage_channels == std::array<int, 4>{64, 64, 128, 128});
  CHECK(cfg.network.stage_depths == std::array<int, 4>{6, 12, 6, 6});
  CHECK(cfg.network.align_channels == 128);
  CHECK(cfg.network.num_classes == 10);
  CHECK(cfg.features.center_offsets);
  CHECK(!cfg.features.normalize_intensity);
  CHECK(cfg.calibration.kind == CalibrationMode::Kind::kMinMax);
}

TEST_CASE("dump is complete and parses back") {
  const std::string text = dump_config(EngineConfig{});
  const auto j = nlohmann::json::parse(text);
  for (const char* k : {"grid", "features", "network", "decode", "calibration"}) CHECK(j.contains(k));
  EngineConfig c = parse_config(text);
  CHECK(dump_config(c) == text);

  auto edited = j;
  edited["network"]["stage_depths"] = {1, 2, 3, 4};
  edited["network"]["stage_channels"] = {8, 8, 16, 16};
  edited["network"]["align_channels"] = 16;
  edited["calibration"]["mode"] = "percentile";
  edited["calibration"]["percentile"] = 99.5;
  c = parse_config(edited.dump());
  CHECK(c.network.stage_depths == std::array<int, 4>{1, 2, 3, 4});
  CHECK(c.calibration.kind == CalibrationMode::Kind::kPercentile);
  CHECK(c.calibration.percentile == 99.5);
}

TEST_CASE("unknown keys and wrong types are rejected with the key path") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"gird": {}})"), doctest::Contains("gird"), FormatError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"grid": {"x_mn": 1}})"), doctest::Contains("grid.x_mn"), FormatError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"grid": {"x_min": "a"}})"), doctest::Contains("grid.x_min"), FormatError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"network": {"stage_depths": [1, 2]}})"),
                       doctest::Contains("network.stage_depths"), FormatError);
  CHECK_THROWS_AS(parse_config("{"), FormatError);
  CHECK_THROWS_AS(parse_config(R"({"calibration": {"mode": "median"}})"), FormatError);
}

TEST_CASE("semantic validation") {
  CHECK_THROWS_AS(parse_config(R"({"grid": {"pillar_size_x": 0.17}})"), ParameterError);
  CHECK_THROWS_AS(parse_config(R"({"decode": {"score_threshold": 2}})"), ParameterError);
  CHECK_THROWS_AS(parse_config(R"({"network": {"encoder_out": 7}})"), ParameterError);
}

TEST_CASE("load from file") {
  testutil::TempDir dir;
  testutil::write_text(dir / "c.json", R"({"decode": {"top_k": 7}})");
  CHECK(load_config(dir / "c.json").decode.top_k == 7);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);
}

TEST_CASE("published schema matches the defaults") {
  const auto schema = nlohmann::json::parse(testutil::read_text(LIFT_SCHEMA_PATH));
  const auto dump = nlohmann::json::parse(dump_config(EngineConfig{}));
  CHECK(schema["additionalProperties"] == false);
  for (const auto& [section, body] : schema["properties"].items()) {
    REQUIRE(dump.contains(section));
    CHECK(body["additionalProperties"] == false);
    CHECK(body["properties"].size() == dump[section].size());
    for (const auto& [key, spec] : body["properties"].items()) {
      INFO(section << "." << key);
      REQUIRE(dump[section].contains(key));
      CHECK(spec["default"] == dump[section][key]);
    }
  }
}
