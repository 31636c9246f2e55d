#include "lift/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lift/parallel.hpp"

namespace lift {

// ---------------------------------------------------------------------------
// ActiveSet

ActiveSet::ActiveSet(int width, int height, std::vector<Coord> coords)
    : width_(width), height_(height), coords_(std::move(coords)) {
  const int64_t cells = static_cast<int64_t>(width_) * height_;
  if (cells <= kDenseLimit) {
    dense_.assign(static_cast<std::size_t>(cells), -1);
    for (std::size_t n = 0; n < coords_.size(); ++n) {
      const Coord c = coords_[n];
      dense_[static_cast<std::size_t>(c.j) * width_ + c.i] = static_cast<int32_t>(n);
    }
  } else {
    sparse_.reserve(coords_.size());
    for (std::size_t n = 0; n < coords_.size(); ++n) {
      const Coord c = coords_[n];
      sparse_.emplace(static_cast<int64_t>(c.j) * width_ + c.i, static_cast<int32_t>(n));
    }
  }
}

ActiveSetPtr ActiveSet::make(int width, int height, std::vector<Coord> coords) {
  if (width < 0 || height < 0) throw ShapeError("negative grid extent");
  for (const Coord& c : coords) {
    if (c.i < 0 || c.i >= width || c.j < 0 || c.j >= height) {
      throw RangeError("coordinate (" + std::to_string(c.i) + ", " +
                       std::to_string(c.j) + ") outside the " + std::to_string(width) +
                       "x" + std::to_string(height) + " grid");
    }
  }
  std::sort(coords.begin(), coords.end(), CanonicalLess{});
  if (std::adjacent_find(coords.begin(), coords.end()) != coords.end()) {
    throw RangeError("duplicate active coordinate");
  }
  return std::shared_ptr<const ActiveSet>(new ActiveSet(width, height, std::move(coords)));
}

ActiveSetPtr ActiveSet::make_sorted(int width, int height, std::vector<Coord> coords) {
  return std::shared_ptr<const ActiveSet>(new ActiveSet(width, height, std::move(coords)));
}

int32_t ActiveSet::find(Coord c) const {
  if (c.i < 0 || c.i >= width_ || c.j < 0 || c.j >= height_) return -1;
  const int64_t key = static_cast<int64_t>(c.j) * width_ + c.i;
  if (!dense_.empty() || sparse_.empty()) {
    return dense_.empty() ? -1 : dense_[static_cast<std::size_t>(key)];
  }
  const auto it = sparse_.find(key);
  return it == sparse_.end() ? -1 : it->second;
}

// ---------------------------------------------------------------------------
// SparseTensor

template <typename T>
SparseTensor<T>::SparseTensor(ActiveSetPtr set, int channels, std::vector<T> features,
                              std::optional<QuantParams> quant)
    : set_(std::move(set)),
      channels_(channels),
      features_(std::move(features)),
      quant_(quant) {
  if (channels_ <= 0) throw ShapeError("channel count must be positive");
  if (features_.size() != set_->size() * static_cast<std::size_t>(channels_)) {
    throw ShapeError("feature buffer holds " + std::to_string(features_.size()) +
                     " values, expected " + std::to_string(set_->size()) + " x " +
                     std::to_string(channels_));
  }
  if constexpr (std::is_same_v<T, int8_t>) {
    if (!quant_) throw ShapeError("int8 tensor requires quantization parameters");
  }
  if (quant_) quant_->validate();
}

template <typename T>
SparseTensor<T> SparseTensor<T>::from_entries(int width, int height, int channels,
                                              std::span<const Coord> coords,
                                              std::span<const T> features,
                                              std::optional<QuantParams> quant) {
  if (channels <= 0 || features.size() != coords.size() * static_cast<std::size_t>(channels)) {
    throw ShapeError("feature count does not match coordinates x channels");
  }
  std::vector<std::size_t> order(coords.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return CanonicalLess{}(coords[a], coords[b]);
  });
  std::vector<Coord> sorted(coords.begin(), coords.end());
  auto set = ActiveSet::make(width, height, std::move(sorted));
  std::vector<T> rows(features.size());
  const auto ch = static_cast<std::size_t>(channels);
  for (std::size_t n = 0; n < order.size(); ++n) {
    std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(order[n] * ch), ch,
                rows.begin() + static_cast<std::ptrdiff_t>(n * ch));
  }
  return SparseTensor(std::move(set), channels, std::move(rows), quant);
}

template class SparseTensor<float>;
template class SparseTensor<int8_t>;

RealTensor dequantize_tensor(const QTensor& x) {
  const QuantParams qp = *x.quant();
  std::vector<float> out(x.features().size());
  const auto in = x.features();
  for (std::size_t n = 0; n < in.size(); ++n) out[n] = static_cast<float>(dequantize(in[n], qp));
  return RealTensor(x.active_ptr(), x.channels(), std::move(out));
}

QTensor quantize_tensor(const RealTensor& x, const QuantParams& qp) {
  std::vector<int8_t> out(x.features().size());
  const auto in = x.features();
  for (std::size_t n = 0; n < in.size(); ++n) out[n] = quantize(in[n], qp);
  return QTensor(x.active_ptr(), x.channels(), std::move(out), qp);
}

// ---------------------------------------------------------------------------
// Weights and rulebooks

ConvWeights ConvWeights::zeros(int kernel, int cin, int cout) {
  ConvWeights w;
  w.kernel = kernel;
  w.cin = cin;
  w.cout = cout;
  w.weight.assign(static_cast<std::size_t>(kernel) * kernel * cin * cout, 0.0);
  w.bias.assign(static_cast<std::size_t>(cout), 0.0);
  return w;
}

void ConvWeights::validate() const {
  if (kernel <= 0 || kernel % 2 == 0) throw ShapeError("kernel size must be odd");
  if (cin <= 0 || cout <= 0) throw ShapeError("channel counts must be positive");
  if (weight.size() != static_cast<std::size_t>(kernel) * kernel * cin * cout) {
    throw ShapeError("kernel buffer does not match its declared shape");
  }
  if (bias.size() != static_cast<std::size_t>(cout)) throw ShapeError("bias length mismatch");
}

std::size_t Rulebook::pair_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.size();
  return n;
}

int conv_output_extent(int extent, int kernel, int stride) {
  if (extent <= 0) return 0;
  const int pad = kernel / 2;
  return (extent + 2 * pad - kernel) / stride + 1;
}

ActiveSetPtr regular_output_set(const ActiveSet& in, int kernel, int stride) {
  if (kernel <= 0 || kernel % 2 == 0 || stride <= 0) {
    throw ParameterError("kernel must be odd and stride positive");
  }
  const int pad = kernel / 2;
  const int out_w = conv_output_extent(in.width(), kernel, stride);
  const int out_h = conv_output_extent(in.height(), kernel, stride);
  // Candidate outputs: every o with stride * o + d - pad == c for an active c.
  std::vector<Coord> candidates;
  candidates.reserve(in.size() * static_cast<std::size_t>(kernel * kernel) /
                     static_cast<std::size_t>(stride * stride) + 1);
  for (const Coord& c : in.coords()) {
    for (int dy = 0; dy < kernel; ++dy) {
      const int ny = c.j - dy + pad;
      if (ny < 0 || ny % stride != 0 || ny / stride >= out_h) continue;
      for (int dx = 0; dx < kernel; ++dx) {
        const int nx = c.i - dx + pad;
        if (nx < 0 || nx % stride != 0 || nx / stride >= out_w) continue;
        candidates.push_back({nx / stride, ny / stride});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(), CanonicalLess{});
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  return ActiveSet::make_sorted(out_w, out_h, std::move(candidates));
}

Rulebook build_rulebook(ActiveSetPtr in, ActiveSetPtr out, int kernel, int stride) {
  if (kernel <= 0 || kernel % 2 == 0 || stride <= 0) {
    throw ParameterError("kernel must be odd and stride positive");
  }
  Rulebook rb;
  rb.kernel = kernel;
  rb.stride = stride;
  const int pad = kernel / 2;
  const std::size_t taps = static_cast<std::size_t>(kernel) * kernel;
  rb.pairs.resize(taps);
  rb.neighbors.assign(out->size() * taps, -1);
  for (std::size_t o = 0; o < out->size(); ++o) {
    const Coord oc = (*out)[o];
    for (int dy = 0; dy < kernel; ++dy) {
      for (int dx = 0; dx < kernel; ++dx) {
        const Coord src{stride * oc.i + dx - pad, stride * oc.j + dy - pad};
        const int32_t idx = in->find(src);
        if (idx < 0) continue;
        const std::size_t k = static_cast<std::size_t>(dy) * kernel + dx;
        rb.pairs[k].push_back({idx, static_cast<int32_t>(o)});
        rb.neighbors[o * taps + k] = idx;
      }
    }
  }
  rb.input = std::move(in);
  rb.output = std::move(out);
  return rb;
}

Rulebook build_submanifold_rulebook(ActiveSetPtr in, int kernel) {
  ActiveSetPtr out = in;
  return build_rulebook(std::move(in), std::move(out), kernel, 1);
}

Rulebook build_regular_rulebook(ActiveSetPtr in, int kernel, int stride) {
  ActiveSetPtr out = regular_output_set(*in, kernel, stride);
  return build_rulebook(std::move(in), std::move(out), kernel, stride);
}

// ---------------------------------------------------------------------------
// Real convolution

namespace {

void check_conv_shapes(int x_channels, const Rulebook& rb, int kernel, int cin) {
  if (x_channels != cin) {
    throw ShapeError("input has " + std::to_string(x_channels) +
                     " channels, kernel expects " + std::to_string(cin));
  }
  if (kernel != rb.kernel) throw ShapeError("kernel size differs from rulebook");
}

}  // namespace

std::vector<double> conv_accumulate(const RealTensor& x, const Rulebook& rb,
                                    const ConvWeights& w) {
  w.validate();
  check_conv_shapes(x.channels(), rb, w.kernel, w.cin);
  if (x.active_ptr() != rb.input && !x.active().same_coords(*rb.input)) {
    throw ShapeError("tensor active set differs from the rulebook input");
  }
  const std::size_t n_out = rb.output->size();
  const auto cout = static_cast<std::size_t>(w.cout);
  const auto cin = static_cast<std::size_t>(w.cin);
  const std::size_t taps = rb.offsets();
  std::vector<double> acc(n_out * cout);
  parallel_for(n_out, [&](std::size_t begin, std::size_t end) {
    for (std::size_t o = begin; o < end; ++o) {
      double* dst = acc.data() + o * cout;
      std::copy(w.bias.begin(), w.bias.end(), dst);
      for (std::size_t k = 0; k < taps; ++k) {
        const int32_t src = rb.neighbors[o * taps + k];
        if (src < 0) continue;
        const float* xin = x.features().data() + static_cast<std::size_t>(src) * cin;
        const double* wk = w.weight.data() + k * cin * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double v = xin[ci];
          if (v == 0.0) continue;
          const double* wrow = wk + ci * cout;
          for (std::size_t co = 0; co < cout; ++co) dst[co] += v * wrow[co];
        }
      }
    }
  }, 64);
  return acc;
}

RealTensor finish_real(const Rulebook& rb, int cout, std::span<const double> acc,
                       Activation act) {
  std::vector<float> out(acc.size());
  for (std::size_t n = 0; n < acc.size(); ++n) {
    const double v = act == Activation::kRelu ? std::max(acc[n], 0.0) : acc[n];
    out[n] = static_cast<float>(v);
  }
  return RealTensor(rb.output, cout, std::move(out));
}

RealTensor conv(const RealTensor& x, const Rulebook& rb, const ConvWeights& w,
                Activation act) {
  return finish_real(rb, w.cout, conv_accumulate(x, rb, w), act);
}

RealTensor submanifold_conv(const RealTensor& x, const ConvWeights& w, Activation act) {
  return conv(x, build_submanifold_rulebook(x.active_ptr(), w.kernel), w, act);
}

RealTensor regular_conv(const RealTensor& x, const ConvWeights& w, Activation act) {
  return conv(x, build_regular_rulebook(x.active_ptr(), w.kernel, 1), w, act);
}

RealTensor sparse_conv_stride2(const RealTensor& x, const ConvWeights& w, Activation act) {
  if (w.kernel != 3) throw ShapeError("downsampling convolution uses a 3x3 kernel");
  return conv(x, build_regular_rulebook(x.active_ptr(), 3, 2), w, act);
}

// ---------------------------------------------------------------------------
// INT8 convolution

QConvParams QConvParams::from_real(const ConvWeights& w) {
  w.validate();
  QConvParams q;
  q.kernel = w.kernel;
  q.cin = w.cin;
  q.cout = w.cout;
  q.weight = quantize_per_channel(w.weight, w.cout, q.weight_scales);
  q.bias.assign(w.bias.begin(), w.bias.end());
  return q;
}

ConvWeights QConvParams::dequantized() const {
  validate();
  ConvWeights w = ConvWeights::zeros(kernel, cin, cout);
  for (std::size_t n = 0; n < weight.size(); ++n) {
    w.weight[n] = weight[n] * static_cast<double>(weight_scales[n % static_cast<std::size_t>(cout)]);
  }
  w.bias.assign(bias.begin(), bias.end());
  return w;
}

void QConvParams::validate() const {
  if (kernel <= 0 || kernel % 2 == 0) throw ShapeError("kernel size must be odd");
  if (cin <= 0 || cout <= 0) throw ShapeError("channel counts must be positive");
  if (weight.size() != static_cast<std::size_t>(kernel) * kernel * cin * cout ||
      weight_scales.size() != static_cast<std::size_t>(cout) ||
      bias.size() != static_cast<std::size_t>(cout)) {
    throw ShapeError("quantized kernel buffers do not match the declared shape");
  }
}

double min_output_scale(double input_scale, std::span<const float> weight_scales) {
  double max_w = 0.0;
  for (float s : weight_scales) max_w = std::max(max_w, static_cast<double>(s));
  // Keeps every per-channel factor strictly below kMaxRequantFactor.
  return input_scale * max_w / (kMaxRequantFactor * 0.999);
}

QConvLayer QConvLayer::prepare(QConvParams params, QuantParams input, QuantParams output,
                               Activation act) {
  params.validate();
  input.validate();
  output.validate();
  QConvLayer layer;
  layer.input = input;
  layer.output = output;
  layer.act = act;
  const auto cout = static_cast<std::size_t>(params.cout);
  layer.bias_q.resize(cout);
  layer.requant.resize(cout);
  for (std::size_t c = 0; c < cout; ++c) {
    const double acc_scale =
        static_cast<double>(input.scale) * static_cast<double>(params.weight_scales[c]);
    const double b = round_half_even(static_cast<double>(params.bias[c]) / acc_scale);
    layer.bias_q[c] = static_cast<int32_t>(std::clamp(b, -2147483648.0, 2147483647.0));
    layer.requant[c] = Requantizer::from_factor(acc_scale / static_cast<double>(output.scale),
                                                output.zero_point);
  }
  layer.params = std::move(params);
  return layer;
}

std::vector<int32_t> conv_accumulate_int8(const QTensor& x, const Rulebook& rb,
                                          const QConvLayer& layer) {
  const QConvParams& w = layer.params;
  check_conv_shapes(x.channels(), rb, w.kernel, w.cin);
  if (x.active_ptr() != rb.input && !x.active().same_coords(*rb.input)) {
    throw ShapeError("tensor active set differs from the rulebook input");
  }
  if (!(*x.quant() == layer.input)) {
    throw ShapeError("input quantization differs from the layer's calibrated input");
  }
  const int32_t zp = layer.input.zero_point;
  const std::size_t n_out = rb.output->size();
  const auto cout = static_cast<std::size_t>(w.cout);
  const auto cin = static_cast<std::size_t>(w.cin);
  const std::size_t taps = rb.offsets();
  std::vector<int32_t> acc(n_out * cout);
  parallel_for(n_out, [&](std::size_t begin, std::size_t end) {
    for (std::size_t o = begin; o < end; ++o) {
      int32_t* dst = acc.data() + o * cout;
      std::copy(layer.bias_q.begin(), layer.bias_q.end(), dst);
      for (std::size_t k = 0; k < taps; ++k) {
        const int32_t src = rb.neighbors[o * taps + k];
        if (src < 0) continue;
        const int8_t* xin = x.features().data() + static_cast<std::size_t>(src) * cin;
        const int8_t* wk = w.weight.data() + k * cin * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const int32_t v = static_cast<int32_t>(xin[ci]) - zp;
          if (v == 0) continue;
          const int8_t* wrow = wk + ci * cout;
          for (std::size_t co = 0; co < cout; ++co) dst[co] += v * static_cast<int32_t>(wrow[co]);
        }
      }
    }
  }, 64);
  return acc;
}

QTensor conv(const QTensor& x, const Rulebook& rb, const QConvLayer& layer) {
  const std::vector<int32_t> acc = conv_accumulate_int8(x, rb, layer);
  const auto cout = static_cast<std::size_t>(layer.params.cout);
  std::vector<int8_t> out(acc.size());
  for (std::size_t n = 0; n < acc.size(); ++n) {
    const Requantizer& r = layer.requant[n % cout];
    out[n] = layer.act == Activation::kRelu ? r.apply_relu(acc[n]) : r.apply(acc[n]);
  }
  return QTensor(rb.output, layer.params.cout, std::move(out), layer.output);
}

QTensor submanifold_conv(const QTensor& x, const QConvLayer& layer) {
  return conv(x, build_submanifold_rulebook(x.active_ptr(), layer.params.kernel), layer);
}

QTensor regular_conv(const QTensor& x, const QConvLayer& layer) {
  return conv(x, build_regular_rulebook(x.active_ptr(), layer.params.kernel, 1), layer);
}

QTensor sparse_conv_stride2(const QTensor& x, const QConvLayer& layer) {
  if (layer.params.kernel != 3) throw ShapeError("downsampling convolution uses a 3x3 kernel");
  return conv(x, build_regular_rulebook(x.active_ptr(), 3, 2), layer);
}

// ---------------------------------------------------------------------------
// Addition and pooling

namespace {

void check_projection(int base_channels, int other_channels, int base_w, int base_h,
                      int other_w, int other_h, int factor) {
  if (factor != 2 && factor != 4) throw ParameterError("projection factor must be 2 or 4");
  if (base_channels != other_channels) {
    throw ShapeError("cannot add tensors with " + std::to_string(base_channels) + " and " +
                     std::to_string(other_channels) + " channels");
  }
  const int exp_w = (base_w + factor - 1) / factor;
  const int exp_h = (base_h + factor - 1) / factor;
  if (other_w != exp_w || other_h != exp_h) {
    throw ShapeError("coarse tensor grid does not match base grid / factor");
  }
}

}  // namespace

RealTensor sparse_add_projected(const RealTensor& base, const RealTensor& other, int factor) {
  check_projection(base.channels(), other.channels(), base.width(), base.height(),
                   other.width(), other.height(), factor);
  std::vector<float> out(base.features().begin(), base.features().end());
  const auto ch = static_cast<std::size_t>(base.channels());
  for (std::size_t n = 0; n < base.size(); ++n) {
    const Coord c = base.coords()[n];
    const auto src = other.at({c.i / factor, c.j / factor});
    if (src.empty()) continue;
    for (std::size_t k = 0; k < ch; ++k) out[n * ch + k] += src[k];
  }
  return RealTensor(base.active_ptr(), base.channels(), std::move(out));
}

QTensor sparse_add_projected(const QTensor& base, const QTensor& other, int factor,
                             const QuantParams& output) {
  check_projection(base.channels(), other.channels(), base.width(), base.height(),
                   other.width(), other.height(), factor);
  output.validate();
  const QuantParams qb = *base.quant();
  const QuantParams qo = *other.quant();
  const Requantizer rb = Requantizer::from_factor(
      static_cast<double>(qb.scale) / static_cast<double>(output.scale), 0);
  const Requantizer ro = Requantizer::from_factor(
      static_cast<double>(qo.scale) / static_cast<double>(output.scale), 0);
  const auto ch = static_cast<std::size_t>(base.channels());
  std::vector<int8_t> out(base.features().size());
  for (std::size_t n = 0; n < base.size(); ++n) {
    const Coord c = base.coords()[n];
    const auto b = base.row(n);
    const auto src = other.at({c.i / factor, c.j / factor});
    for (std::size_t k = 0; k < ch; ++k) {
      int64_t v = output.zero_point + rb.scale(static_cast<int32_t>(b[k]) - qb.zero_point);
      if (!src.empty()) v += ro.scale(static_cast<int32_t>(src[k]) - qo.zero_point);
      out[n * ch + k] = saturate_int8(v);
    }
  }
  return QTensor(base.active_ptr(), base.channels(), std::move(out), output);
}

template <typename T>
SparseTensor<T> sparse_max_pool(const SparseTensor<T>& x, int kernel) {
  if (kernel <= 0 || kernel % 2 == 0) throw ParameterError("pool size must be odd");
  const Rulebook rb = build_submanifold_rulebook(x.active_ptr(), kernel);
  const auto ch = static_cast<std::size_t>(x.channels());
  const std::size_t taps = rb.offsets();
  std::vector<T> out(x.features().begin(), x.features().end());
  for (std::size_t o = 0; o < x.size(); ++o) {
    for (std::size_t k = 0; k < taps; ++k) {
      const int32_t src = rb.neighbors[o * taps + k];
      if (src < 0) continue;
      const auto row = x.row(static_cast<std::size_t>(src));
      for (std::size_t c = 0; c < ch; ++c) out[o * ch + c] = std::max(out[o * ch + c], row[c]);
    }
  }
  return SparseTensor<T>(x.active_ptr(), x.channels(), std::move(out), x.quant());
}

template RealTensor sparse_max_pool(const RealTensor&, int);
template QTensor sparse_max_pool(const QTensor&, int);

}  // namespace lift
