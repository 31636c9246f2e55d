#ifndef LIFT_NETWORK_HPP
#define LIFT_NETWORK_HPP

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lift/pillarizer.hpp"
#include "lift/reparam.hpp"
#include "lift/sparse.hpp"
#include "lift/types.hpp"

namespace lift {

/// Regression channel layout of the head.
enum RegressionChannel : int {
  kRegOffsetX = 0,
  kRegOffsetY = 1,
  kRegZ = 2,
  kRegLogL = 3,
  kRegLogW = 4,
  kRegLogH = 5,
  kRegYawSin = 6,
  kRegYawCos = 7,
  kRegressionChannels = 8,
};

struct NetworkConfig {
  int encoder_out = 64;
  std::array<int, 4> stage_channels{64, 64, 128, 128};
  std::array<int, 4> stage_depths{6, 12, 6, 6};
  int align_channels = 128;
  int head_channels = 64;
  int num_classes = 10;

  int encoder_half() const { return encoder_out / 2; }
  /// Input channels of stage s (0-based).
  int stage_input_channels(int s) const {
    return s == 0 ? encoder_out : stage_channels[static_cast<std::size_t>(s - 1)];
  }
  /// Throws ParameterError for non-positive sizes, an odd encoder width, or
  /// stage 3/4 widths that differ from align_channels.
  void validate() const;
};

/// Overall downsampling of the head grid relative to the pillar grid.
inline constexpr int kHeadStride = 4;

/// Per-point linear map of the Dual-Bound Pillar Feature Net. Weight layout is
/// [f_in][half]; no activation follows the optional normalization.
struct DbpfnParams {
  int f_in = 0;
  int half = 0;
  std::vector<double> weight;
  std::vector<double> bias;
  std::optional<BnParams> bn;

  void validate() const;
  /// Same map with normalization folded into weight and bias.
  DbpfnParams folded() const;
  /// As a 1x1 kernel (cin = f_in, cout = half), normalization folded.
  ConvWeights as_kernel() const;
};

/// Convolution followed by inference-mode normalization (training form of
/// the alignment and head hidden layers). conv.bias is unused.
struct ConvBn {
  ConvWeights conv;
  BnParams bn;

  ConvWeights folded() const;
};

struct TrainWeights {
  DbpfnParams encoder;
  std::vector<std::vector<RepConvLayer>> stages;  // layer 0 downsamples
  ConvBn align;
  ConvBn heatmap_hidden;
  ConvWeights heatmap_out;
  ConvBn regression_hidden;
  ConvWeights regression_out;
};

struct HeadWeights {
  ConvWeights heatmap_hidden;
  ConvWeights heatmap_out;
  ConvWeights regression_hidden;
  ConvWeights regression_out;
};

struct FusedWeights {
  DbpfnParams encoder;  // normalization folded
  std::vector<std::vector<FusedConvLayer>> stages;
  ConvWeights align;
  HeadWeights head;
};

FusedWeights fuse_network(const TrainWeights& train);

/// Callbacks threaded through a forward pass. `observe` sees every activation
/// tensor by name; `trace` records executed operators as "op:name".
struct ForwardHooks {
  std::function<void(std::string_view name, std::span<const float> values, int channels)> observe;
  std::vector<std::string>* trace = nullptr;

  void record(std::string_view op, std::string_view name) const;
  void emit(std::string_view name, const RealTensor& t) const;
};

/// Activation names, shared by calibration, the weight file and traces.
std::string stage_layer_name(int stage, int layer);  // 0-based -> "stage{S}.layer{L}", S from 1

/**
 * Dual-bound pillar encoding: every point goes through the linear map with no
 * activation, then the pillar feature is concat(channel max, channel min)
 * over its points (width 2 * half). Active set = pillar set.
 */
RealTensor dbpfn_encode(const PillarSet& pillars, const DbpfnParams& params);

struct BackboneOutput {
  RealTensor s2;
  RealTensor s3;
  RealTensor s4;
  std::array<std::size_t, 4> stage_sites{};
};

/// 4 stages of (stride-2 downsampler + depth submanifold layers), ReLU after
/// every layer. Returns stage 2, 3 and 4 outputs.
BackboneOutput run_backbone(const RealTensor& x,
                            const std::vector<std::vector<FusedConvLayer>>& stages,
                            const ForwardHooks& hooks = {});
BackboneOutput run_backbone(const RealTensor& x,
                            const std::vector<std::vector<RepConvLayer>>& stages,
                            const ForwardHooks& hooks = {});

/// 1x1 submanifold alignment of s2 (ReLU), then s3 and s4 added onto s2's
/// active set with projection factors 2 and 4.
RealTensor fuse_scales(const RealTensor& s2, const RealTensor& s3, const RealTensor& s4,
                       const ConvWeights& align, const ForwardHooks& hooks = {});

struct HeadOutput {
  RealTensor heatmap;     // num_classes logits
  RealTensor regression;  // kRegressionChannels
};

/// Two submanifold branches: 3x3 conv + ReLU, then 1x1 conv.
HeadOutput run_head(const RealTensor& x, const HeadWeights& head,
                    const ForwardHooks& hooks = {});

struct DecodeParams {
  double score_threshold = 0.1;
  int top_k = 500;
};

/**
 * Per class: score = sigmoid(logit), kept where it equals the 3x3 sparse max
 * pool of scores and reaches the threshold. The global top_k by score (ties:
 * class, j, i ascending) become boxes centered at
 * (i + 0.5 + offset) * cell + min, offsets clamped to [-0.5, 0.5], sizes
 * exp(clamp(log size, -5, 5)), yaw = atan2(sin, cos) in (-pi, pi].
 */
std::vector<DetectionBox> decode(const RealTensor& heatmap, const RealTensor& regression,
                                 const GridConfig& grid, const DecodeParams& params);

/// Bounds for regressed quantities used by decode.
inline constexpr double kMaxCenterOffset = 0.5;
inline constexpr double kMaxLogSize = 5.0;

// ---------------------------------------------------------------------------
// Inference graph description

struct GraphNode {
  std::string op;    // "encoder", "conv", "add"
  std::string name;  // activation name
};

/// Operators of the fused inference network in execution order.
std::vector<GraphNode> inference_graph(const NetworkConfig& cfg);

}  // namespace lift

#endif  // LIFT_NETWORK_HPP
