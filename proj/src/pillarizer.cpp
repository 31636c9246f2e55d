#include "lift/pillarizer.hpp"

#include <algorithm>
#include <cmath>

namespace lift {
namespace {

int cell_count(double lo, double hi, double size, const char* axis) {
  if (!(size > 0.0) || !std::isfinite(size)) {
    throw ParameterError(std::string("pillar size along ") + axis + " must be positive");
  }
  const double cells = (hi - lo) / size;
  const double rounded = std::round(cells);
  if (rounded < 1.0 || std::abs(rounded * size - (hi - lo)) > 1e-9) {
    throw ParameterError(std::string(axis) +
                         " range is not a whole number of pillars");
  }
  return static_cast<int>(rounded);
}

}  // namespace

void GridConfig::validate() const {
  for (double v : {x_min, x_max, y_min, y_max, z_min, z_max}) {
    if (!std::isfinite(v)) throw ParameterError("grid bounds must be finite");
  }
  if (!(x_max > x_min) || !(y_max > y_min) || !(z_max > z_min)) {
    throw ParameterError("grid ranges must satisfy max > min on every axis");
  }
  if (max_points_per_pillar <= 0) {
    throw ParameterError("max_points_per_pillar must be positive");
  }
  (void)width();
  (void)height();
}

int GridConfig::width() const { return cell_count(x_min, x_max, pillar_size_x, "x"); }
int GridConfig::height() const { return cell_count(y_min, y_max, pillar_size_y, "y"); }

double coarse_resolution(double v_min, double v_max) {
  return std::ldexp(v_max - v_min, -8);
}

CoarseDetail coarse_detail_split(double v, double v_min, double v_max) {
  if (!(v >= v_min) || !(v < v_max)) {
    throw RangeError("coordinate " + std::to_string(v) + " outside [" +
                     std::to_string(v_min) + ", " + std::to_string(v_max) + ")");
  }
  const double res = coarse_resolution(v_min, v_max);
  CoarseDetail out;
  out.coarse = std::floor(v / res) * res;
  out.detail = v - out.coarse;
  // v / res can round up across a lattice boundary; step back one cell.
  if (out.detail < 0.0) {
    out.coarse -= res;
    out.detail = v - out.coarse;
  }
  return out;
}

QuantParams coarse_quant_params(double v_min, double v_max) {
  const double res = coarse_resolution(v_min, v_max);
  const double first = std::floor(v_min / res);
  const double zp = -128.0 - first;
  if (zp < -128.0 || zp > 127.0) {
    // Lattice does not fit an int8 offset; fall back to the generic range rule.
    return params_from_range(v_min, v_max);
  }
  return {static_cast<float>(res), static_cast<int32_t>(zp)};
}

QuantParams detail_quant_params(double v_min, double v_max) {
  return {static_cast<float>(coarse_resolution(v_min, v_max) / 256.0), -128};
}

void point_features(const Point& p, Coord cell, const GridConfig& grid,
                    const FeatureConfig& features, std::span<float> out) {
  const CoarseDetail x = coarse_detail_split(p.x, grid.x_min, grid.x_max);
  const CoarseDetail y = coarse_detail_split(p.y, grid.y_min, grid.y_max);
  const CoarseDetail z = coarse_detail_split(p.z, grid.z_min, grid.z_max);
  out[kXCoarse] = static_cast<float>(x.coarse);
  out[kXDetail] = static_cast<float>(x.detail);
  out[kYCoarse] = static_cast<float>(y.coarse);
  out[kYDetail] = static_cast<float>(y.detail);
  out[kZCoarse] = static_cast<float>(z.coarse);
  out[kZDetail] = static_cast<float>(z.detail);
  out[kIntensity] = features.normalize_intensity ? p.intensity / 255.0f : p.intensity;
  if (features.center_offsets) {
    const double cx = grid.x_min + (cell.i + 0.5) * grid.pillar_size_x;
    const double cy = grid.y_min + (cell.j + 0.5) * grid.pillar_size_y;
    out[kDxCenter] = static_cast<float>(static_cast<double>(p.x) - cx);
    out[kDyCenter] = static_cast<float>(static_cast<double>(p.y) - cy);
  }
}

PillarSet pillarize(const PointCloud& cloud, const GridConfig& grid,
                    const FeatureConfig& features) {
  grid.validate();
  const int width = grid.width();
  const int height = grid.height();
  const int fdim = features.feature_count();

  PillarSet out;
  out.width = width;
  out.height = height;
  out.feature_dim = fdim;

  // Per point: its cell in row-major order, or -1 when out of range.
  std::vector<int64_t> cell_of(cloud.size(), -1);
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    const Point& p = cloud.points[n];
    const double x = p.x, y = p.y, z = p.z;
    if (!(x >= grid.x_min && x < grid.x_max && y >= grid.y_min && y < grid.y_max &&
          z >= grid.z_min && z < grid.z_max)) {
      ++out.range_discarded;
      continue;
    }
    const int i = std::min(width - 1, static_cast<int>(std::floor((x - grid.x_min) / grid.pillar_size_x)));
    const int j = std::min(height - 1, static_cast<int>(std::floor((y - grid.y_min) / grid.pillar_size_y)));
    cell_of[n] = static_cast<int64_t>(j) * width + i;
  }

  // Stable counting sort by cell keeps cloud order inside each pillar.
  std::vector<std::size_t> order;
  order.reserve(cloud.size());
  for (std::size_t n = 0; n < cloud.size(); ++n) {
    if (cell_of[n] >= 0) order.push_back(n);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cell_of[a] < cell_of[b]; });

  const auto cap = static_cast<std::size_t>(grid.max_points_per_pillar);
  std::size_t run_start = 0;
  while (run_start < order.size()) {
    std::size_t run_end = run_start;
    const int64_t cell = cell_of[order[run_start]];
    while (run_end < order.size() && cell_of[order[run_end]] == cell) ++run_end;
    const std::size_t keep = std::min(cap, run_end - run_start);
    out.truncation_discarded += (run_end - run_start) - keep;

    const Coord c{static_cast<int32_t>(cell % width), static_cast<int32_t>(cell / width)};
    out.coords.push_back(c);
    for (std::size_t k = 0; k < keep; ++k) {
      const std::size_t base = out.features.size();
      out.features.resize(base + static_cast<std::size_t>(fdim));
      point_features(cloud.points[order[run_start + k]], c, grid, features,
                     std::span<float>(out.features.data() + base, static_cast<std::size_t>(fdim)));
    }
    out.offsets.push_back(out.offsets.back() + keep);
    run_start = run_end;
  }
  return out;
}

}  // namespace lift
