#ifndef LIFT_CONFIG_HPP
#define LIFT_CONFIG_HPP

#include <filesystem>
#include <string>
#include <string_view>

#include "lift/network.hpp"
#include "lift/pillarizer.hpp"
#include "lift/quant.hpp"

namespace lift {

/// Everything an inference run needs besides weights. Defaults: 0.15 m
/// pillars over +-54 m XY and [-5, 3] m Z, stage widths 64/64/128/128 and
/// depths 6/12/6/6.
struct EngineConfig {
  GridConfig grid;
  FeatureConfig features;
  NetworkConfig network;
  DecodeParams decode;
  CalibrationMode calibration;

  void validate() const;
};

/// Parses a JSON config. Missing keys keep their defaults; unknown keys and
/// wrongly typed values raise FormatError naming the key path.
EngineConfig parse_config(std::string_view json_text);
EngineConfig load_config(const std::filesystem::path& path);

/// Full config with every key spelled out (pretty-printed JSON).
std::string dump_config(const EngineConfig& cfg);

}  // namespace lift

#endif  // LIFT_CONFIG_HPP
