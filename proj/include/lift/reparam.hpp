#ifndef LIFT_REPARAM_HPP
#define LIFT_REPARAM_HPP

#include <optional>
#include <vector>

#include "lift/sparse.hpp"

namespace lift {

/// Inference-mode batch normalization:
/// y = gamma * (x - running_mean) / sqrt(running_var + eps) + beta.
struct BnParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double epsilon = 1e-5;

  /// gamma = 1, beta = 0, mean = 0, var = 1 - eps: an exact pass-through.
  static BnParams identity(int channels, double epsilon = 1e-5);

  int channels() const { return static_cast<int>(gamma.size()); }
  void validate() const;

  /// gamma / sqrt(var + eps) for channel c.
  double factor(std::size_t c) const;
  /// beta - mean * factor for channel c.
  double shift(std::size_t c) const;
  double apply(std::size_t c, double x) const {
    return (x - running_mean[c]) * factor(c) + beta[c];
  }
};

enum class ConvKind { kSubmanifold, kSparse, kDownsample };

const char* to_string(ConvKind kind);

/// Training-form reparameterizable convolution: a 3x3 conv + BN branch, a
/// 1x1 conv + BN branch and, when shapes allow, a BN-only identity branch.
/// Kernels are bias-free and use the [ky][kx][cin][cout] layout.
struct RepConvLayer {
  ConvKind kind = ConvKind::kSubmanifold;
  int cin = 0;
  int cout = 0;
  std::vector<double> kernel3x3;
  BnParams bn3x3;
  std::vector<double> kernel1x1;
  BnParams bn1x1;
  std::optional<BnParams> identity;

  int stride() const { return kind == ConvKind::kDownsample ? 2 : 1; }

  /// Throws ShapeError for buffer mismatches and StructuralError when the
  /// identity branch is present without Cin == Cout and stride 1.
  void validate() const;
};

/// Single-branch inference form of a RepConvLayer.
struct FusedConvLayer {
  ConvKind kind = ConvKind::kSubmanifold;
  ConvWeights weights;  // 3x3

  int stride() const { return kind == ConvKind::kDownsample ? 2 : 1; }
};

/// Folds inference BN into a bias-free kernel:
/// kernel'[..., c] = kernel[..., c] * factor[c], bias'[c] = shift[c].
ConvWeights fold_bn(const std::vector<double>& kernel, int ksize, int cin, int cout,
                    const BnParams& bn);

/// Folds every branch, pads the 1x1 and identity branches into the 3x3 center
/// tap and sums kernels and biases.
FusedConvLayer fuse(const RepConvLayer& layer);

/// Rulebook whose output set follows `kind` (kernel 3).
Rulebook rulebook_for(ConvKind kind, const ActiveSetPtr& in);

/// Evaluates the three branches on the output set of the 3x3 branch and sums
/// them (pre-activation when act is kNone).
RealTensor apply_training_form(const RepConvLayer& layer, const RealTensor& x,
                               Activation act = Activation::kNone);

RealTensor apply_fused(const FusedConvLayer& layer, const RealTensor& x,
                       Activation act = Activation::kNone);

/// max |a - b| / max(max |b|, floor) over all entries; both tensors must share
/// an active set and channel count.
double max_relative_deviation(const RealTensor& a, const RealTensor& b,
                              double floor = 1e-12);

}  // namespace lift

#endif  // LIFT_REPARAM_HPP
