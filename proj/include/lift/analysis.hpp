#ifndef LIFT_ANALYSIS_HPP
#define LIFT_ANALYSIS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "lift/config.hpp"
#include "lift/pillarizer.hpp"
#include "lift/sparse.hpp"
#include "lift/types.hpp"

namespace lift {

/// Upper bound on per-cloud complexity, in MAC.
inline constexpr double kMacBudget = 30e9;

/// Tap pairs in the rulebook times cin * cout.
uint64_t count_macs_layer(const Rulebook& rb, int cin, int cout);

struct LayerMacs {
  std::string name;
  std::string kind;  // "dbpfn", "submanifold", "downsample"
  uint64_t taps = 0;  // rulebook pairs, or points for the encoder
  uint64_t macs = 0;
};

struct MacReport {
  std::vector<LayerMacs> layers;
  uint64_t total = 0;
  double budget = kMacBudget;

  double gmac() const { return static_cast<double>(total) / 1e9; }
  bool within_budget() const { return static_cast<double>(total) <= budget; }
  /// Appends another report's layers (for directory aggregation).
  void merge(const MacReport& other);
};

/**
 * Builds every rulebook of the inference graph for these pillars without
 * arithmetic and sums tap pairs * cin * cout per layer. The encoder counts
 * points * f_in * half; the multi-scale additions are not multiplies.
 */
MacReport count_macs_network(const PillarSet& pillars, const EngineConfig& cfg);
MacReport count_macs_network(const PointCloud& cloud, const EngineConfig& cfg);

std::string format_mac_table(const MacReport& report);
std::string mac_report_json(const MacReport& report);

/**
 * Im2Col line-buffer cells for a streaming window over a row-major grid.
 * 2D: width * (k_y - 1) + k_x.
 * 3D: depth * width * (k_y - 1) + width * (k_z - 1) + k_x.
 * dims = {width, height[, depth]}. Throws ParameterError for non-positive
 * values, even context sizes or mismatched ranks.
 */
uint64_t im2col_buffer_cells(const std::vector<int64_t>& dims,
                             const std::vector<int64_t>& context);

/// macs_per_cycle * clock_hz / cloud_rate_hz, in MAC. Throws ParameterError
/// for non-positive inputs.
double dpu_budget(int64_t macs_per_cycle, double clock_hz, double cloud_rate_hz);

}  // namespace lift

#endif  // LIFT_ANALYSIS_HPP
