#include <cmath>

#include "doctest.h"
#include "lift/common.hpp"
#include "lift/pillarizer.hpp"
#include "lift/random.hpp"

using namespace lift;

TEST_CASE("coarse/detail split: worked values") {
  CHECK(coarse_resolution(-54, 54) == 0.421875);

  auto s = coarse_detail_split(0.0, -54, 54);
  CHECK(s.coarse == 0.0);
  CHECK(s.detail == 0.0);

  s = coarse_detail_split(10.0, -54, 54);
  CHECK(s.coarse == 9.703125);
  CHECK(s.detail == 0.296875);

  s = coarse_detail_split(-54.0, -54, 54);
  CHECK(s.coarse == -54.0);
  CHECK(s.detail == 0.0);
}

TEST_CASE("coarse/detail split: range errors") {
  CHECK_THROWS_AS(coarse_detail_split(54.0, -54, 54), RangeError);
  CHECK_THROWS_AS(coarse_detail_split(-54.001, -54, 54), RangeError);
  CHECK_THROWS_AS(coarse_detail_split(std::nan(""), -54, 54), RangeError);
}

TEST_CASE("coarse/detail split: detail bounds and reconstruction") {
  Rng rng(11);
  const double res = coarse_resolution(-5, 3);
  for (int n = 0; n < 20000; ++n) {
    const double v = rng.uniform(-5, 3);
    const auto s = coarse_detail_split(v, -5, 3);
    CHECK(s.detail >= 0.0);
    CHECK(s.detail < res);
    CHECK(std::fabs(s.coarse + s.detail - v) <= 1e-6);
    const double k = s.coarse / res;
    CHECK(k == std::floor(k));
  }
}

TEST_CASE("feature quant params follow the lattice") {
  const QuantParams c = coarse_quant_params(-54, 54);
  CHECK(c.scale == 0.421875f);
  const QuantParams d = detail_quant_params(-54, 54);
  CHECK(d.scale == static_cast<float>(0.421875 / 256));
  CHECK(d.zero_point == -128);
  // every coarse lattice value is representable exactly
  for (double v : {-54.0, -0.421875, 0.0, 9.703125, 53.578125}) {
    const int8_t q = quantize(v, c);
    CHECK(dequantize(q, c) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("grid config validation") {
  GridConfig g;
  CHECK(g.width() == 720);
  CHECK(g.height() == 720);
  g.pillar_size_x = 0.17;
  CHECK_THROWS_AS(g.validate(), ParameterError);
  g = GridConfig{};
  g.x_max = g.x_min;
  CHECK_THROWS_AS(g.validate(), ParameterError);
  g = GridConfig{};
  g.max_points_per_pillar = 0;
  CHECK_THROWS_AS(g.validate(), ParameterError);
}

TEST_CASE("pillarize: empty cloud") {
  const PillarSet p = pillarize(PointCloud{}, GridConfig{});
  CHECK(p.pillar_count() == 0);
  CHECK(p.point_count() == 0);
  CHECK(p.width == 720);
  CHECK(p.feature_dim == 9);
}

TEST_CASE("pillarize: corner point lands in pillar (0, 0)") {
  PointCloud cloud;
  cloud.points.push_back({-53.95f, -53.95f, 0.0f, 0.5f});
  const PillarSet p = pillarize(cloud, GridConfig{});
  REQUIRE(p.pillar_count() == 1);
  CHECK(p.coords[0] == Coord{0, 0});
  CHECK(p.points_in(0) == 1);
  const auto f = p.point(0);
  CHECK(f[kIntensity] == 0.5f);
  CHECK(std::fabs(f[kXCoarse] + f[kXDetail] - (-53.95f)) <= 1e-6);
  CHECK(std::fabs(f[kDxCenter] - (-53.95 - (-54 + 0.075))) <= 1e-6);
}

TEST_CASE("pillarize: truncation keeps the first points") {
  GridConfig g;
  PointCloud cloud;
  for (int n = 0; n < 25; ++n) cloud.points.push_back({1.0f, 1.0f, 0.0f, static_cast<float>(n)});
  const PillarSet p = pillarize(cloud, g);
  REQUIRE(p.pillar_count() == 1);
  CHECK(p.points_in(0) == 20);
  CHECK(p.truncation_discarded == 5);
  for (std::size_t n = 0; n < 20; ++n) CHECK(p.point(n)[kIntensity] == static_cast<float>(n));
}

TEST_CASE("pillarize: half-open ranges") {
  PointCloud cloud;
  cloud.points.push_back({54.0f, 0.0f, 0.0f, 0.0f});
  cloud.points.push_back({0.0f, 54.0f, 0.0f, 0.0f});
  cloud.points.push_back({0.0f, 0.0f, 3.0f, 0.0f});
  cloud.points.push_back({-54.0f, -54.0f, -5.0f, 0.0f});
  const PillarSet p = pillarize(cloud, GridConfig{});
  CHECK(p.point_count() == 1);
  CHECK(p.range_discarded == 3);
}

TEST_CASE("pillarize: conservation, reconstruction, offsets, ordering") {
  Rng rng(3);
  GridConfig g;
  g.x_min = -6;
  g.x_max = 6;
  g.y_min = -3;
  g.y_max = 3;
  g.max_points_per_pillar = 4;
  PointCloud cloud;
  for (int n = 0; n < 4000; ++n)
    cloud.points.push_back({static_cast<float>(rng.uniform(-7, 7)), static_cast<float>(rng.uniform(-4, 4)),
                            static_cast<float>(rng.uniform(-6, 4)), static_cast<float>(rng.uniform(0, 255))});
  const PillarSet p = pillarize(cloud, g);
  CHECK(p.point_count() + p.range_discarded + p.truncation_discarded == cloud.size());

  for (std::size_t k = 0; k < p.pillar_count(); ++k) {
    CHECK(p.points_in(k) >= 1);
    CHECK(p.points_in(k) <= 4);
    CHECK(p.coords[k].i >= 0);
    CHECK(p.coords[k].i < p.width);
    CHECK(p.coords[k].j >= 0);
    CHECK(p.coords[k].j < p.height);
    if (k > 0) CHECK(CanonicalLess{}(p.coords[k - 1], p.coords[k]));
    for (std::size_t n = p.offsets[k]; n < p.offsets[k + 1]; ++n) {
      const auto f = p.point(n);
      const double x = f[kXCoarse] + static_cast<double>(f[kXDetail]);
      const double y = f[kYCoarse] + static_cast<double>(f[kYDetail]);
      CHECK(std::floor((x - g.x_min) / g.pillar_size_x) == doctest::Approx(p.coords[k].i));
      CHECK(std::floor((y - g.y_min) / g.pillar_size_y) == doctest::Approx(p.coords[k].j));
      CHECK(std::fabs(f[kDxCenter]) <= g.pillar_size_x / 2 + 1e-6);
      CHECK(std::fabs(f[kDyCenter]) <= g.pillar_size_y / 2 + 1e-6);
      CHECK(f[kXDetail] >= 0.0f);
      CHECK(f[kXDetail] < coarse_resolution(g.x_min, g.x_max));
    }
  }
}

TEST_CASE("pillarize: reconstruction against the source points") {
  Rng rng(5);
  PointCloud cloud;
  for (int n = 0; n < 2000; ++n)
    cloud.points.push_back({static_cast<float>(rng.uniform(-54, 54)), static_cast<float>(rng.uniform(-54, 54)),
                            static_cast<float>(rng.uniform(-5, 3)), 1.0f});
  GridConfig g;
  g.max_points_per_pillar = 1000;
  const PillarSet p = pillarize(cloud, g);
  REQUIRE(p.point_count() == cloud.size());
  // pillar-major order: match each feature row back to its point by coordinates
  std::size_t matched = 0;
  for (std::size_t n = 0; n < p.point_count(); ++n) {
    const auto f = p.point(n);
    const double x = static_cast<double>(f[kXCoarse]) + f[kXDetail];
    const double y = static_cast<double>(f[kYCoarse]) + f[kYDetail];
    const double z = static_cast<double>(f[kZCoarse]) + f[kZDetail];
    for (const Point& pt : cloud.points) {
      if (std::fabs(pt.x - x) <= 1e-6 && std::fabs(pt.y - y) <= 1e-6 && std::fabs(pt.z - z) <= 1e-6) {
        ++matched;
        break;
      }
    }
  }
  CHECK(matched == cloud.size());
}

TEST_CASE("pillarize: feature options") {
  PointCloud cloud;
  cloud.points.push_back({0.1f, 0.1f, 0.0f, 255.0f});
  FeatureConfig fc;
  fc.center_offsets = false;
  fc.normalize_intensity = true;
  const PillarSet p = pillarize(cloud, GridConfig{}, fc);
  CHECK(p.feature_dim == 7);
  CHECK(p.point(0)[kIntensity] == 1.0f);
}

TEST_CASE("effective localization step") {
  const double res = coarse_resolution(-54, 54);
  CHECK(res == 108.0 / 256);
  CHECK(res / 256 == 108.0 / 65536);
  CHECK(res / 256 < 0.002);
}
