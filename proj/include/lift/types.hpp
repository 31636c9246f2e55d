#ifndef LIFT_TYPES_HPP
#define LIFT_TYPES_HPP

#include <cstddef>
#include <cstdint>
#include <vector>

namespace lift {

struct Point {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  float intensity = 0.0f;
};

struct PointCloud {
  std::vector<Point> points;
  int source_stride = 4;
  // Records rejected at ingestion for non-finite coordinates.
  std::size_t dropped_non_finite = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct DetectionBox {
  int class_id = 0;
  double score = 0.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double l = 1.0;
  double w = 1.0;
  double h = 1.0;
  double yaw = 0.0;  // (-pi, pi]
};

}  // namespace lift

#endif  // LIFT_TYPES_HPP
