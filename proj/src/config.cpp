#include "lift/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lift/common.hpp"

namespace lift {
namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& path,
                    std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw FormatError("config: '" + path + "' must be an object");
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!known.contains(key)) {
      throw FormatError("config: unknown key '" + (path.empty() ? key : path + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& path, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string where = path + "." + key;
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw FormatError("config: '" + where + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw FormatError("config: '" + where + "' must be an integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw FormatError("config: '" + where + "' must be a number");
  }
  out = v.get<T>();
}

void read_array4(const json& obj, const char* key, const std::string& path,
                 std::array<int, 4>& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  const std::string where = path + "." + key;
  if (!v.is_array() || v.size() != 4) {
    throw FormatError("config: '" + where + "' must be an array of 4 integers");
  }
  for (std::size_t n = 0; n < 4; ++n) {
    if (!v[n].is_number_integer()) {
      throw FormatError("config: '" + where + "' must be an array of 4 integers");
    }
    out[n] = v[n].get<int>();
  }
}

}  // namespace

void EngineConfig::validate() const {
  grid.validate();
  network.validate();
  if (!(decode.score_threshold >= 0.0 && decode.score_threshold <= 1.0)) {
    throw ParameterError("score_threshold must lie in [0, 1]");
  }
  if (decode.top_k < 0) throw ParameterError("top_k must be non-negative");
  if (calibration.kind == CalibrationMode::Kind::kPercentile &&
      !(calibration.percentile > 0.0 && calibration.percentile <= 100.0)) {
    throw ParameterError("calibration percentile must lie in (0, 100]");
  }
}

EngineConfig parse_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  EngineConfig cfg;
  reject_unknown(root, "", {"grid", "features", "network", "decode", "calibration"});

  if (root.contains("grid")) {
    const json& g = root["grid"];
    reject_unknown(g, "grid", {"x_min", "x_max", "y_min", "y_max", "z_min", "z_max",
                               "pillar_size_x", "pillar_size_y", "max_points_per_pillar"});
    read(g, "x_min", "grid", cfg.grid.x_min);
    read(g, "x_max", "grid", cfg.grid.x_max);
    read(g, "y_min", "grid", cfg.grid.y_min);
    read(g, "y_max", "grid", cfg.grid.y_max);
    read(g, "z_min", "grid", cfg.grid.z_min);
    read(g, "z_max", "grid", cfg.grid.z_max);
    read(g, "pillar_size_x", "grid", cfg.grid.pillar_size_x);
    read(g, "pillar_size_y", "grid", cfg.grid.pillar_size_y);
    read(g, "max_points_per_pillar", "grid", cfg.grid.max_points_per_pillar);
  }
  if (root.contains("features")) {
    const json& f = root["features"];
    reject_unknown(f, "features", {"normalize_intensity", "center_offsets"});
    read(f, "normalize_intensity", "features", cfg.features.normalize_intensity);
    read(f, "center_offsets", "features", cfg.features.center_offsets);
  }
  if (root.contains("network")) {
    const json& n = root["network"];
    reject_unknown(n, "network", {"encoder_out", "stage_channels", "stage_depths",
                                  "align_channels", "head_channels", "num_classes"});
    read(n, "encoder_out", "network", cfg.network.encoder_out);
    read_array4(n, "stage_channels", "network", cfg.network.stage_channels);
    read_array4(n, "stage_depths", "network", cfg.network.stage_depths);
    read(n, "align_channels", "network", cfg.network.align_channels);
    read(n, "head_channels", "network", cfg.network.head_channels);
    read(n, "num_classes", "network", cfg.network.num_classes);
  }
  if (root.contains("decode")) {
    const json& d = root["decode"];
    reject_unknown(d, "decode", {"score_threshold", "top_k"});
    read(d, "score_threshold", "decode", cfg.decode.score_threshold);
    read(d, "top_k", "decode", cfg.decode.top_k);
  }
  if (root.contains("calibration")) {
    const json& c = root["calibration"];
    reject_unknown(c, "calibration", {"mode", "percentile"});
    std::string mode = "minmax";
    if (c.contains("mode")) {
      if (!c["mode"].is_string()) throw FormatError("config: 'calibration.mode' must be a string");
      mode = c["mode"].get<std::string>();
    }
    if (mode == "minmax") {
      cfg.calibration = CalibrationMode::minmax();
    } else if (mode == "percentile") {
      cfg.calibration = CalibrationMode::clipped(99.9);
    } else {
      throw FormatError("config: 'calibration.mode' must be \"minmax\" or \"percentile\"");
    }
    read(c, "percentile", "calibration", cfg.calibration.percentile);
  }
  cfg.validate();
  return cfg;
}

EngineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const EngineConfig& cfg) {
  json root;
  root["grid"] = {{"x_min", cfg.grid.x_min},
                  {"x_max", cfg.grid.x_max},
                  {"y_min", cfg.grid.y_min},
                  {"y_max", cfg.grid.y_max},
                  {"z_min", cfg.grid.z_min},
                  {"z_max", cfg.grid.z_max},
                  {"pillar_size_x", cfg.grid.pillar_size_x},
                  {"pillar_size_y", cfg.grid.pillar_size_y},
                  {"max_points_per_pillar", cfg.grid.max_points_per_pillar}};
  root["features"] = {{"normalize_intensity", cfg.features.normalize_intensity},
                      {"center_offsets", cfg.features.center_offsets}};
  root["network"] = {{"encoder_out", cfg.network.encoder_out},
                     {"stage_channels", cfg.network.stage_channels},
                     {"stage_depths", cfg.network.stage_depths},
                     {"align_channels", cfg.network.align_channels},
                     {"head_channels", cfg.network.head_channels},
                     {"num_classes", cfg.network.num_classes}};
  root["decode"] = {{"score_threshold", cfg.decode.score_threshold},
                    {"top_k", cfg.decode.top_k}};
  const bool pct = cfg.calibration.kind == CalibrationMode::Kind::kPercentile;
  root["calibration"] = {{"mode", pct ? "percentile" : "minmax"},
                         {"percentile", cfg.calibration.percentile}};
  return root.dump(2) + "\n";
}

}  // namespace lift
