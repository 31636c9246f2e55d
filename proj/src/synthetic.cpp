#include "lift/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lift {
namespace {

constexpr double kBranchGammaLo = 0.3;
constexpr double kBranchGammaHi = 0.9;

}  // namespace

std::vector<double> glorot_kernel(Rng& rng, int kernel, int cin, int cout) {
  const double area = static_cast<double>(kernel) * kernel;
  const double b = std::sqrt(6.0 / (area * cin + area * cout));
  std::vector<double> w(static_cast<std::size_t>(kernel * kernel * cin * cout));
  for (double& v : w) v = rng.uniform(-b, b);
  return w;
}

BnParams random_bn(Rng& rng, int channels, double gamma_lo, double gamma_hi) {
  BnParams bn;
  for (int c = 0; c < channels; ++c) {
    bn.gamma.push_back(rng.uniform(gamma_lo, gamma_hi));
    bn.beta.push_back(rng.uniform(-0.1, 0.1));
    bn.running_mean.push_back(rng.uniform(-0.1, 0.1));
    bn.running_var.push_back(rng.uniform(0.5, 1.5));
  }
  return bn;
}

RepConvLayer random_repconv(Rng& rng, ConvKind kind, int cin, int cout, bool with_identity) {
  RepConvLayer layer;
  layer.kind = kind;
  layer.cin = cin;
  layer.cout = cout;
  layer.kernel3x3 = glorot_kernel(rng, 3, cin, cout);
  layer.bn3x3 = random_bn(rng, cout, kBranchGammaLo, kBranchGammaHi);
  layer.kernel1x1 = glorot_kernel(rng, 1, cin, cout);
  layer.bn1x1 = random_bn(rng, cout, kBranchGammaLo, kBranchGammaHi);
  if (with_identity) layer.identity = random_bn(rng, cout, kBranchGammaLo, kBranchGammaHi);
  return layer;
}

TrainWeights gen_train_weights(const EngineConfig& cfg, uint64_t seed, WeightInit init) {
  cfg.validate();
  const NetworkConfig& n = cfg.network;
  const bool ident = init == WeightInit::kIdentity;
  Rng rng(seed);
  auto bn = [&](int c) { return ident ? BnParams::identity(c) : random_bn(rng, c); };

  TrainWeights w;
  w.encoder.f_in = cfg.features.feature_count();
  w.encoder.half = n.encoder_half();
  w.encoder.weight = glorot_kernel(rng, 1, w.encoder.f_in, w.encoder.half);
  w.encoder.bias.assign(static_cast<std::size_t>(w.encoder.half), 0.0);
  w.encoder.bn = bn(w.encoder.half);

  w.stages.resize(4);
  for (int s = 0; s < 4; ++s) {
    const int cout = n.stage_channels[static_cast<std::size_t>(s)];
    for (int l = 0; l <= n.stage_depths[static_cast<std::size_t>(s)]; ++l) {
      const bool down = l == 0;
      const int cin = down ? n.stage_input_channels(s) : cout;
      RepConvLayer layer = random_repconv(rng, down ? ConvKind::kDownsample : ConvKind::kSubmanifold,
                                          cin, cout, !down);
      if (ident) {
        std::fill(layer.kernel3x3.begin(), layer.kernel3x3.end(), 0.0);
        if (!down) std::fill(layer.kernel1x1.begin(), layer.kernel1x1.end(), 0.0);
        layer.bn3x3 = BnParams::identity(cout);
        layer.bn1x1 = BnParams::identity(cout);
        if (layer.identity) layer.identity = BnParams::identity(cout);
      }
      w.stages[static_cast<std::size_t>(s)].push_back(std::move(layer));
    }
  }

  auto conv_bn = [&](int k, int cin, int cout) {
    ConvBn cb;
    cb.conv = ConvWeights::zeros(k, cin, cout);
    cb.conv.weight = glorot_kernel(rng, k, cin, cout);
    cb.bn = bn(cout);
    return cb;
  };
  auto plain = [&](int cin, int cout, double bias) {
    ConvWeights c = ConvWeights::zeros(1, cin, cout);
    c.weight = glorot_kernel(rng, 1, cin, cout);
    std::fill(c.bias.begin(), c.bias.end(), bias);
    return c;
  };
  w.align = conv_bn(1, n.stage_channels[1], n.align_channels);
  w.heatmap_hidden = conv_bn(3, n.align_channels, n.head_channels);
  // Center-head convention: a negative prior keeps most sites below threshold.
  w.heatmap_out = plain(n.head_channels, n.num_classes, -2.19);
  w.regression_hidden = conv_bn(3, n.align_channels, n.head_channels);
  w.regression_out = plain(n.head_channels, kRegressionChannels, 0.0);
  return w;
}

PointCloud gen_cloud(const GridConfig& grid, uint64_t seed, const SceneParams& scene) {
  grid.validate();
  Rng rng(seed);
  PointCloud cloud;
  cloud.source_stride = 4;
  const double cx = (grid.x_min + grid.x_max) / 2;
  const double cy = (grid.y_min + grid.y_max) / 2;
  const double ground = std::clamp(-1.8, grid.z_min, grid.z_max);
  auto inside = [&](const Point& p) {
    return p.x >= grid.x_min && p.x < grid.x_max && p.y >= grid.y_min && p.y < grid.y_max &&
           p.z >= grid.z_min && p.z < grid.z_max;
  };
  auto push = [&](Point p) {
    if (inside(p)) cloud.points.push_back(p);
  };

  for (int n = 0; n < scene.ground_points; ++n) {
    // Uniform radius gives the 1/r areal density of a spinning sensor.
    const double r = rng.uniform(1.0, scene.max_radius);
    const double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
    push({static_cast<float>(cx + r * std::cos(a)), static_cast<float>(cy + r * std::sin(a)),
          static_cast<float>(ground + rng.uniform(-0.05, 0.05)),
          static_cast<float>(rng.uniform(0.0, 40.0))});
  }
  for (int o = 0; o < scene.objects; ++o) {
    const double r = rng.uniform(4.0, scene.max_radius);
    const double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double ox = cx + r * std::cos(a);
    const double oy = cy + r * std::sin(a);
    const double len = rng.uniform(3.5, 5.0);
    const double wid = rng.uniform(1.6, 2.1);
    const double hgt = rng.uniform(1.4, 1.9);
    const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const double refl = rng.uniform(30.0, 200.0);
    for (int p = 0; p < scene.points_per_object; ++p) {
      // Points on the box surface: one coordinate pinned to a face.
      double u = rng.uniform(-0.5, 0.5) * len;
      double v = rng.uniform(-0.5, 0.5) * wid;
      if (rng.chance(0.5)) {
        u = rng.chance(0.5) ? -len / 2 : len / 2;
      } else {
        v = rng.chance(0.5) ? -wid / 2 : wid / 2;
      }
      const double h = rng.uniform(0.0, hgt);
      push({static_cast<float>(ox + u * std::cos(yaw) - v * std::sin(yaw)),
            static_cast<float>(oy + u * std::sin(yaw) + v * std::cos(yaw)),
            static_cast<float>(ground + h), static_cast<float>(refl + rng.uniform(-20.0, 20.0))});
    }
  }
  return cloud;
}

}  // namespace lift
