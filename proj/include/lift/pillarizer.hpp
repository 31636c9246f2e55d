#ifndef LIFT_PILLARIZER_HPP
#define LIFT_PILLARIZER_HPP

#include <cstddef>
#include <span>
#include <vector>

#include "lift/common.hpp"
#include "lift/quant.hpp"
#include "lift/types.hpp"

namespace lift {

struct GridConfig {
  double x_min = -54.0;
  double x_max = 54.0;
  double y_min = -54.0;
  double y_max = 54.0;
  double z_min = -5.0;
  double z_max = 3.0;
  double pillar_size_x = 0.15;
  double pillar_size_y = 0.15;
  int max_points_per_pillar = 20;

  /// Throws ParameterError on empty ranges or ranges that are not a whole
  /// number of pillars (1e-9 m tolerance).
  void validate() const;
  int width() const;
  int height() const;
};

struct FeatureConfig {
  bool normalize_intensity = false;  // divide intensity by 255
  bool center_offsets = true;        // append dx/dy to the pillar center

  /// 7 without offsets, 9 with.
  int feature_count() const { return center_offsets ? 9 : 7; }
};

// Feature slots in the per-point vector.
enum FeatureIndex : int {
  kXCoarse = 0,
  kXDetail = 1,
  kYCoarse = 2,
  kYDetail = 3,
  kZCoarse = 4,
  kZDetail = 5,
  kIntensity = 6,
  kDxCenter = 7,
  kDyCenter = 8,
};

struct CoarseDetail {
  double coarse = 0.0;
  double detail = 0.0;
};

/// Lattice step of the coarse feature: (v_max - v_min) / 256.
double coarse_resolution(double v_min, double v_max);

/**
 * Splits a coordinate into an 8-bit lattice part and a remainder:
 * coarse = floor(v / res) * res, detail = v - coarse, with
 * res = 2^-8 * (v_max - v_min). Throws RangeError for v outside
 * [v_min, v_max).
 */
CoarseDetail coarse_detail_split(double v, double v_min, double v_max);

/// Input-feature quantization implied by the coarse/detail split. Coarse
/// values are multiples of res, so scale = res represents them exactly; the
/// detail lies in [0, res) and gets scale res / 256 with zero point -128.
QuantParams coarse_quant_params(double v_min, double v_max);
QuantParams detail_quant_params(double v_min, double v_max);

struct PillarSet {
  int width = 0;
  int height = 0;
  int feature_dim = 0;
  // Pillars in canonical (j, i) order; pillar p owns points
  // [offsets[p], offsets[p + 1]) of `features` (row-major, feature_dim wide).
  std::vector<Coord> coords;
  std::vector<std::size_t> offsets{0};
  std::vector<float> features;

  std::size_t range_discarded = 0;
  std::size_t truncation_discarded = 0;

  std::size_t pillar_count() const { return coords.size(); }
  std::size_t point_count() const { return offsets.back(); }
  std::size_t points_in(std::size_t pillar) const {
    return offsets[pillar + 1] - offsets[pillar];
  }
  std::span<const float> point(std::size_t global_index) const {
    return {features.data() + global_index * static_cast<std::size_t>(feature_dim),
            static_cast<std::size_t>(feature_dim)};
  }
};

/// Computes the feature vector of one in-range point assigned to `cell`.
void point_features(const Point& p, Coord cell, const GridConfig& grid,
                    const FeatureConfig& features, std::span<float> out);

/**
 * Assigns in-range points (half-open intervals on every axis) to pillars
 * i = floor((x - x_min) / pillar_size_x), j likewise. Points keep cloud order
 * within a pillar and anything past max_points_per_pillar is dropped.
 */
PillarSet pillarize(const PointCloud& cloud, const GridConfig& grid,
                    const FeatureConfig& features = {});

}  // namespace lift

#endif  // LIFT_PILLARIZER_HPP
