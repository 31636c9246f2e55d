#include "lift/reparam.hpp"

#include <algorithm>
#include <cmath>

namespace lift {

BnParams BnParams::identity(int channels, double epsilon) {
  const auto n = static_cast<std::size_t>(channels);
  BnParams bn;
  bn.gamma.assign(n, 1.0);
  bn.beta.assign(n, 0.0);
  bn.running_mean.assign(n, 0.0);
  bn.running_var.assign(n, 1.0 - epsilon);
  bn.epsilon = epsilon;
  return bn;
}

void BnParams::validate() const {
  const std::size_t n = gamma.size();
  if (n == 0 || beta.size() != n || running_mean.size() != n || running_var.size() != n) {
    throw ShapeError("normalization parameter lengths differ");
  }
  if (!(epsilon > 0.0)) throw ParameterError("normalization epsilon must be positive");
  for (double v : running_var) {
    if (!(v >= 0.0)) throw ParameterError("running variance must be non-negative");
  }
}

double BnParams::factor(std::size_t c) const {
  return gamma[c] / std::sqrt(running_var[c] + epsilon);
}

double BnParams::shift(std::size_t c) const {
  return beta[c] - running_mean[c] * factor(c);
}

const char* to_string(ConvKind kind) {
  switch (kind) {
    case ConvKind::kSubmanifold: return "submanifold";
    case ConvKind::kSparse: return "sparse";
    case ConvKind::kDownsample: return "downsample";
  }
  return "unknown";
}

void RepConvLayer::validate() const {
  if (cin <= 0 || cout <= 0) throw ShapeError("channel counts must be positive");
  const auto io = static_cast<std::size_t>(cin) * static_cast<std::size_t>(cout);
  if (kernel3x3.size() != 9 * io) throw ShapeError("3x3 branch kernel has the wrong size");
  if (kernel1x1.size() != io) throw ShapeError("1x1 branch kernel has the wrong size");
  bn3x3.validate();
  bn1x1.validate();
  if (bn3x3.channels() != cout || bn1x1.channels() != cout) {
    throw ShapeError("branch normalization width differs from output channels");
  }
  if (identity) {
    if (cin != cout || stride() != 1) {
      throw StructuralError("identity branch requires Cin == Cout and stride 1");
    }
    identity->validate();
    if (identity->channels() != cout) throw ShapeError("identity normalization width mismatch");
  }
}

ConvWeights fold_bn(const std::vector<double>& kernel, int ksize, int cin, int cout,
                    const BnParams& bn) {
  bn.validate();
  if (bn.channels() != cout) throw ShapeError("normalization width differs from cout");
  ConvWeights w = ConvWeights::zeros(ksize, cin, cout);
  if (kernel.size() != w.weight.size()) throw ShapeError("kernel has the wrong size");
  const auto co_n = static_cast<std::size_t>(cout);
  for (std::size_t n = 0; n < kernel.size(); ++n) w.weight[n] = kernel[n] * bn.factor(n % co_n);
  for (std::size_t c = 0; c < co_n; ++c) w.bias[c] = bn.shift(c);
  return w;
}

FusedConvLayer fuse(const RepConvLayer& layer) {
  layer.validate();
  const int cin = layer.cin;
  const int cout = layer.cout;
  FusedConvLayer out;
  out.kind = layer.kind;
  out.weights = fold_bn(layer.kernel3x3, 3, cin, cout, layer.bn3x3);
  const ConvWeights one = fold_bn(layer.kernel1x1, 1, cin, cout, layer.bn1x1);
  for (int ci = 0; ci < cin; ++ci) {
    for (int co = 0; co < cout; ++co) out.weights.at(1, 1, ci, co) += one.at(0, 0, ci, co);
  }
  for (std::size_t c = 0; c < static_cast<std::size_t>(cout); ++c) out.weights.bias[c] += one.bias[c];
  if (layer.identity) {
    const BnParams& bn = *layer.identity;
    for (int c = 0; c < cout; ++c) {
      out.weights.at(1, 1, c, c) += bn.factor(static_cast<std::size_t>(c));
      out.weights.bias[static_cast<std::size_t>(c)] += bn.shift(static_cast<std::size_t>(c));
    }
  }
  return out;
}

Rulebook rulebook_for(ConvKind kind, const ActiveSetPtr& in) {
  switch (kind) {
    case ConvKind::kSubmanifold: return build_submanifold_rulebook(in, 3);
    case ConvKind::kSparse: return build_regular_rulebook(in, 3, 1);
    case ConvKind::kDownsample: return build_regular_rulebook(in, 3, 2);
  }
  throw ParameterError("unknown convolution kind");
}

RealTensor apply_training_form(const RepConvLayer& layer, const RealTensor& x,
                               Activation act) {
  layer.validate();
  if (x.channels() != layer.cin) {
    throw ShapeError("input has " + std::to_string(x.channels()) + " channels, layer expects " +
                     std::to_string(layer.cin));
  }
  const Rulebook rb3 = rulebook_for(layer.kind, x.active_ptr());
  const Rulebook rb1 = build_rulebook(x.active_ptr(), rb3.output, 1, layer.stride());

  ConvWeights w3 = ConvWeights::zeros(3, layer.cin, layer.cout);
  w3.weight = layer.kernel3x3;
  ConvWeights w1 = ConvWeights::zeros(1, layer.cin, layer.cout);
  w1.weight = layer.kernel1x1;
  const std::vector<double> conv3 = conv_accumulate(x, rb3, w3);
  const std::vector<double> conv1 = conv_accumulate(x, rb1, w1);

  const auto cout = static_cast<std::size_t>(layer.cout);
  const std::size_t n_out = rb3.output->size();
  std::vector<double> sum(n_out * cout);
  for (std::size_t o = 0; o < n_out; ++o) {
    // The identity branch reads the same coordinate (stride 1), or nothing.
    const int32_t src = rb1.neighbors[o];
    for (std::size_t c = 0; c < cout; ++c) {
      double v = layer.bn3x3.apply(c, conv3[o * cout + c]) +
                 layer.bn1x1.apply(c, conv1[o * cout + c]);
      if (layer.identity) {
        const double in = src < 0 ? 0.0 : x.row(static_cast<std::size_t>(src))[c];
        v += layer.identity->apply(c, in);
      }
      sum[o * cout + c] = v;
    }
  }
  return finish_real(rb3, layer.cout, sum, act);
}

RealTensor apply_fused(const FusedConvLayer& layer, const RealTensor& x, Activation act) {
  return conv(x, rulebook_for(layer.kind, x.active_ptr()), layer.weights, act);
}

double max_relative_deviation(const RealTensor& a, const RealTensor& b, double floor) {
  if (a.channels() != b.channels() || !a.active().same_coords(b.active())) {
    throw ShapeError("tensors differ in active set or channel count");
  }
  double max_abs = 0.0;
  double max_diff = 0.0;
  const auto fa = a.features();
  const auto fb = b.features();
  for (std::size_t n = 0; n < fa.size(); ++n) {
    max_abs = std::max(max_abs, std::abs(static_cast<double>(fb[n])));
    max_diff = std::max(max_diff, std::abs(static_cast<double>(fa[n]) - fb[n]));
  }
  return max_diff / std::max(max_abs, floor);
}

}  // namespace lift
