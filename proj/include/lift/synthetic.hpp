#ifndef LIFT_SYNTHETIC_HPP
#define LIFT_SYNTHETIC_HPP

#include <cstdint>

#include "lift/config.hpp"
#include "lift/network.hpp"
#include "lift/random.hpp"
#include "lift/types.hpp"

namespace lift {

// Seeded stand-ins for trained weights and recorded scans. All draws come from
// Rng, so a seed yields the same bytes on every platform.

enum class WeightInit {
  kRandom,    // Glorot-uniform kernels, randomized normalization statistics
  kIdentity,  // pass-through normalization, 3x3 kernels zero; see gen_train_weights
};

/// Uniform in [-b, b], b = sqrt(6 / (fan_in + fan_out)) with
/// fan = kernel^2 * channels. Layout [ky][kx][cin][cout].
std::vector<double> glorot_kernel(Rng& rng, int kernel, int cin, int cout);

/// gamma uniform in [gamma_lo, gamma_hi], running_var in [0.5, 1.5], beta and
/// running_mean in [-0.1, 0.1].
BnParams random_bn(Rng& rng, int channels, double gamma_lo = 0.5, double gamma_hi = 1.5);

/// Branch gammas are drawn from [0.3, 0.9] so that three summed branches keep
/// activations near unit scale through a deep stage. `with_identity` adds the
/// BN-only identity branch (needs cin == cout).
RepConvLayer random_repconv(Rng& rng, ConvKind kind, int cin, int cout, bool with_identity);

/**
 * Training-form weights for `cfg`. Submanifold layers carry an identity branch.
 * kIdentity makes every normalization a pass-through and zeroes the 3x3
 * branches; 1x1 kernels stay random only in layers without an identity branch,
 * so each layer reduces to a single exact product and fusion is bit-exact.
 */
TrainWeights gen_train_weights(const EngineConfig& cfg, uint64_t seed,
                               WeightInit init = WeightInit::kRandom);

struct SceneParams {
  int ground_points = 3000;
  int objects = 8;
  int points_per_object = 150;
  double max_radius = 40.0;
};

/// Ground returns around the sensor plus box-shaped objects, restricted to
/// the grid's ranges. Intensity in [0, 255).
PointCloud gen_cloud(const GridConfig& grid, uint64_t seed, const SceneParams& scene = {});

}  // namespace lift

#endif  // LIFT_SYNTHETIC_HPP
