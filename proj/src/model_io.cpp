#include "lift/model_io.hpp"

#include <set>

namespace lift {
namespace {

std::string dims_text(const std::vector<uint32_t>& dims) {
  std::string s = "[";
  for (std::size_t n = 0; n < dims.size(); ++n) {
    if (n) s += ", ";
    s += std::to_string(dims[n]);
  }
  return s + "]";
}

uint32_t u(int v) { return static_cast<uint32_t>(v); }

// ---------------------------------------------------------------------------
// Writing

void put_bn(WeightFile& wf, const std::string& prefix, const BnParams& bn) {
  const std::vector<uint32_t> d{u(bn.channels())};
  wf.add_f32(prefix + ".gamma", d, std::span<const double>(bn.gamma));
  wf.add_f32(prefix + ".beta", d, std::span<const double>(bn.beta));
  wf.add_f32(prefix + ".mean", d, std::span<const double>(bn.running_mean));
  wf.add_f32(prefix + ".var", d, std::span<const double>(bn.running_var));
  wf.add_f32(prefix + ".eps", {1}, std::vector<float>{static_cast<float>(bn.epsilon)});
}

std::vector<uint32_t> kernel_dims(int k, int cin, int cout) { return {u(k), u(k), u(cin), u(cout)}; }

void put_kernel(WeightFile& wf, const std::string& name, const std::vector<double>& w, int k,
                int cin, int cout) {
  wf.add_f32(name, kernel_dims(k, cin, cout), std::span<const double>(w));
}

void put_conv(WeightFile& wf, const std::string& prefix, const ConvWeights& w) {
  put_kernel(wf, prefix + ".weight", w.weight, w.kernel, w.cin, w.cout);
  wf.add_f32(prefix + ".bias", {u(w.cout)}, std::span<const double>(w.bias));
}

void put_marker(WeightFile& wf, const std::string& activation, const QuantParams& qp) {
  NamedTensor t;
  t.name = "act." + activation;
  t.dtype = DType::kI8;
  t.dims = {0};
  t.quant = TensorQuant{false, 0, {qp.scale}, {qp.zero_point}};
  wf.add(std::move(t));
}

void put_qconv(WeightFile& wf, const std::string& prefix, const QConvParams& q) {
  NamedTensor t;
  t.name = prefix + ".weight";
  t.dtype = DType::kI8;
  t.dims = kernel_dims(q.kernel, q.cin, q.cout);
  t.quant = TensorQuant{true, 3, q.weight_scales, std::vector<int32_t>(q.weight_scales.size(), 0)};
  t.i8 = q.weight;
  wf.add(std::move(t));
  wf.add_f32(prefix + ".bias", {u(q.cout)}, q.bias);
}

// ---------------------------------------------------------------------------
// Reading

class Loader {
 public:
  explicit Loader(const WeightFile& wf) : wf_(wf) {}

  const NamedTensor& tensor(const std::string& name, const std::vector<uint32_t>& dims,
                            DType dtype) {
    const NamedTensor& t = wf_.get(name);
    if (t.dtype != dtype) {
      throw FormatError("tensor " + name + " has dtype " +
                        (t.dtype == DType::kF32 ? "f32" : "i8") + ", expected " +
                        (dtype == DType::kF32 ? "f32" : "i8"));
    }
    if (t.dims != dims) {
      throw ShapeError("tensor " + name + " has shape " + dims_text(t.dims) + ", expected " +
                       dims_text(dims));
    }
    used_.insert(name);
    return t;
  }

  std::vector<double> f64(const std::string& name, const std::vector<uint32_t>& dims) {
    const NamedTensor& t = tensor(name, dims, DType::kF32);
    return {t.f32.begin(), t.f32.end()};
  }

  BnParams bn(const std::string& prefix, int channels) {
    const std::vector<uint32_t> d{u(channels)};
    BnParams b;
    b.gamma = f64(prefix + ".gamma", d);
    b.beta = f64(prefix + ".beta", d);
    b.running_mean = f64(prefix + ".mean", d);
    b.running_var = f64(prefix + ".var", d);
    b.epsilon = f64(prefix + ".eps", {1})[0];
    b.validate();
    return b;
  }

  bool has(const std::string& name) const { return wf_.contains(name); }

  ConvWeights conv(const std::string& prefix, int k, int cin, int cout) {
    ConvWeights w = ConvWeights::zeros(k, cin, cout);
    w.weight = f64(prefix + ".weight", kernel_dims(k, cin, cout));
    w.bias = f64(prefix + ".bias", {u(cout)});
    return w;
  }

  QConvParams qconv(const std::string& prefix, int k, int cin, int cout) {
    const NamedTensor& t = tensor(prefix + ".weight", kernel_dims(k, cin, cout), DType::kI8);
    if (!t.quant->per_channel || t.quant->axis != 3) {
      throw FormatError("tensor " + t.name + " must be quantized per output channel");
    }
    for (int32_t z : t.quant->zero_points) {
      if (z != 0) throw FormatError("tensor " + t.name + " must be symmetric (zero point 0)");
    }
    QConvParams q;
    q.kernel = k;
    q.cin = cin;
    q.cout = cout;
    q.weight = t.i8;
    q.weight_scales = t.quant->scales;
    q.bias = tensor(prefix + ".bias", {u(cout)}, DType::kF32).f32;
    return q;
  }

  QuantParams marker(const std::string& activation) {
    const NamedTensor& t = tensor("act." + activation, {0}, DType::kI8);
    if (t.quant->per_channel) throw FormatError("tensor " + t.name + " must be per-tensor");
    return {t.quant->scales[0], t.quant->zero_points[0]};
  }

  /// Throws FormatError for the first tensor nothing consumed.
  void finish() const {
    for (const NamedTensor& t : wf_.tensors()) {
      if (!used_.contains(t.name)) throw FormatError("unexpected tensor " + t.name);
    }
  }

 private:
  const WeightFile& wf_;
  std::set<std::string> used_;
};

struct StageShape {
  int cin;
  int cout;
};

StageShape stage_shape(const NetworkConfig& n, int s, int l) {
  const int cout = n.stage_channels[static_cast<std::size_t>(s)];
  return {l == 0 ? n.stage_input_channels(s) : cout, cout};
}

int stage_layers(const NetworkConfig& n, int s) {
  return n.stage_depths[static_cast<std::size_t>(s)] + 1;
}

}  // namespace

const char* to_string(WeightForm form) {
  switch (form) {
    case WeightForm::kTraining: return "training";
    case WeightForm::kFused: return "fused";
    case WeightForm::kQuantized: return "int8";
  }
  return "unknown";
}

WeightForm detect_form(const WeightFile& file) {
  if (file.contains("stage1.layer0.conv3x3.weight")) return WeightForm::kTraining;
  if (const NamedTensor* t = file.find("stage1.layer0.fused.weight")) {
    return t->dtype == DType::kI8 ? WeightForm::kQuantized : WeightForm::kFused;
  }
  throw FormatError("unrecognized weight file: no stage1.layer0 convolution tensors");
}

WeightFile to_weight_file(const TrainWeights& w) {
  WeightFile wf;
  w.encoder.validate();
  wf.add_f32("encoder.linear.weight", {u(w.encoder.f_in), u(w.encoder.half)},
             std::span<const double>(w.encoder.weight));
  wf.add_f32("encoder.linear.bias", {u(w.encoder.half)}, std::span<const double>(w.encoder.bias));
  if (w.encoder.bn) put_bn(wf, "encoder.bn", *w.encoder.bn);
  for (std::size_t s = 0; s < w.stages.size(); ++s) {
    for (std::size_t l = 0; l < w.stages[s].size(); ++l) {
      const RepConvLayer& layer = w.stages[s][l];
      layer.validate();
      const std::string p = stage_layer_name(static_cast<int>(s), static_cast<int>(l));
      put_kernel(wf, p + ".conv3x3.weight", layer.kernel3x3, 3, layer.cin, layer.cout);
      put_bn(wf, p + ".conv3x3", layer.bn3x3);
      put_kernel(wf, p + ".conv1x1.weight", layer.kernel1x1, 1, layer.cin, layer.cout);
      put_bn(wf, p + ".conv1x1", layer.bn1x1);
      if (layer.identity) put_bn(wf, p + ".identity", *layer.identity);
    }
  }
  auto put_conv_bn = [&](const std::string& p, const ConvBn& cb) {
    put_kernel(wf, p + ".conv.weight", cb.conv.weight, cb.conv.kernel, cb.conv.cin, cb.conv.cout);
    put_bn(wf, p + ".conv", cb.bn);
  };
  put_conv_bn("align", w.align);
  put_conv_bn("head.heatmap.hidden", w.heatmap_hidden);
  put_conv(wf, "head.heatmap.out", w.heatmap_out);
  put_conv_bn("head.regression.hidden", w.regression_hidden);
  put_conv(wf, "head.regression.out", w.regression_out);
  return wf;
}

WeightFile to_weight_file(const FusedWeights& w) {
  WeightFile wf;
  const DbpfnParams enc = w.encoder.folded();
  wf.add_f32("encoder.linear.weight", {u(enc.f_in), u(enc.half)},
             std::span<const double>(enc.weight));
  wf.add_f32("encoder.linear.bias", {u(enc.half)}, std::span<const double>(enc.bias));
  for (std::size_t s = 0; s < w.stages.size(); ++s) {
    for (std::size_t l = 0; l < w.stages[s].size(); ++l) {
      put_conv(wf, stage_layer_name(static_cast<int>(s), static_cast<int>(l)) + ".fused",
               w.stages[s][l].weights);
    }
  }
  put_conv(wf, "align.fused", w.align);
  put_conv(wf, "head.heatmap.hidden.fused", w.head.heatmap_hidden);
  put_conv(wf, "head.heatmap.out", w.head.heatmap_out);
  put_conv(wf, "head.regression.hidden.fused", w.head.regression_hidden);
  put_conv(wf, "head.regression.out", w.head.regression_out);
  return wf;
}

WeightFile to_weight_file(const QuantizedModel& m) {
  WeightFile wf;
  for (std::size_t f = 0; f < m.input.size(); ++f) {
    put_marker(wf, "input." + std::to_string(f), m.input[f]);
  }
  {
    const QConvParams& e = m.encoder;
    e.validate();
    NamedTensor t;
    t.name = "encoder.linear.weight";
    t.dtype = DType::kI8;
    t.dims = {u(e.cin), u(e.cout)};
    t.quant = TensorQuant{true, 1, e.weight_scales, std::vector<int32_t>(e.weight_scales.size(), 0)};
    t.i8 = e.weight;
    wf.add(std::move(t));
    wf.add_f32("encoder.linear.bias", {u(e.cout)}, e.bias);
    put_marker(wf, "encoder", m.encoder_out);
  }
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (std::size_t l = 0; l < m.stages[s].size(); ++l) {
      const std::string p = stage_layer_name(static_cast<int>(s), static_cast<int>(l));
      put_qconv(wf, p + ".fused", m.stages[s][l]);
      put_marker(wf, p, m.stage_out[s][l]);
    }
  }
  put_qconv(wf, "align.fused", m.align);
  put_marker(wf, "align", m.align_out);
  put_marker(wf, "fuse.add1", m.add1_out);
  put_marker(wf, "fuse.add2", m.add2_out);
  put_qconv(wf, "head.heatmap.hidden.fused", m.heatmap_hidden);
  put_marker(wf, "head.heatmap.hidden", m.heatmap_hidden_out);
  put_qconv(wf, "head.heatmap.out", m.heatmap_out);
  put_marker(wf, "head.heatmap.out", m.heatmap_out_out);
  put_qconv(wf, "head.regression.hidden.fused", m.regression_hidden);
  put_marker(wf, "head.regression.hidden", m.regression_hidden_out);
  put_qconv(wf, "head.regression.out", m.regression_out);
  put_marker(wf, "head.regression.out", m.regression_out_out);
  return wf;
}

TrainWeights read_train_weights(const WeightFile& file, const EngineConfig& cfg) {
  const NetworkConfig& n = cfg.network;
  const int f_in = cfg.features.feature_count();
  const int half = n.encoder_half();
  Loader ld(file);
  TrainWeights w;
  w.encoder.f_in = f_in;
  w.encoder.half = half;
  w.encoder.weight = ld.f64("encoder.linear.weight", {u(f_in), u(half)});
  w.encoder.bias = ld.f64("encoder.linear.bias", {u(half)});
  if (ld.has("encoder.bn.gamma")) w.encoder.bn = ld.bn("encoder.bn", half);
  w.stages.resize(4);
  for (int s = 0; s < 4; ++s) {
    for (int l = 0; l < stage_layers(n, s); ++l) {
      const auto [cin, cout] = stage_shape(n, s, l);
      const std::string p = stage_layer_name(s, l);
      RepConvLayer layer;
      layer.kind = l == 0 ? ConvKind::kDownsample : ConvKind::kSubmanifold;
      layer.cin = cin;
      layer.cout = cout;
      layer.kernel3x3 = ld.f64(p + ".conv3x3.weight", kernel_dims(3, cin, cout));
      layer.bn3x3 = ld.bn(p + ".conv3x3", cout);
      layer.kernel1x1 = ld.f64(p + ".conv1x1.weight", kernel_dims(1, cin, cout));
      layer.bn1x1 = ld.bn(p + ".conv1x1", cout);
      if (ld.has(p + ".identity.gamma")) layer.identity = ld.bn(p + ".identity", cout);
      layer.validate();
      w.stages[static_cast<std::size_t>(s)].push_back(std::move(layer));
    }
  }
  auto conv_bn = [&](const std::string& p, int k, int cin, int cout) {
    ConvBn cb;
    cb.conv = ConvWeights::zeros(k, cin, cout);
    cb.conv.weight = ld.f64(p + ".conv.weight", kernel_dims(k, cin, cout));
    cb.bn = ld.bn(p + ".conv", cout);
    return cb;
  };
  w.align = conv_bn("align", 1, n.stage_channels[1], n.align_channels);
  w.heatmap_hidden = conv_bn("head.heatmap.hidden", 3, n.align_channels, n.head_channels);
  w.heatmap_out = ld.conv("head.heatmap.out", 1, n.head_channels, n.num_classes);
  w.regression_hidden = conv_bn("head.regression.hidden", 3, n.align_channels, n.head_channels);
  w.regression_out = ld.conv("head.regression.out", 1, n.head_channels, kRegressionChannels);
  ld.finish();
  return w;
}

FusedWeights read_fused_weights(const WeightFile& file, const EngineConfig& cfg) {
  const NetworkConfig& n = cfg.network;
  const int f_in = cfg.features.feature_count();
  const int half = n.encoder_half();
  Loader ld(file);
  FusedWeights w;
  w.encoder.f_in = f_in;
  w.encoder.half = half;
  w.encoder.weight = ld.f64("encoder.linear.weight", {u(f_in), u(half)});
  w.encoder.bias = ld.f64("encoder.linear.bias", {u(half)});
  w.stages.resize(4);
  for (int s = 0; s < 4; ++s) {
    for (int l = 0; l < stage_layers(n, s); ++l) {
      const auto [cin, cout] = stage_shape(n, s, l);
      w.stages[static_cast<std::size_t>(s)].push_back(
          {l == 0 ? ConvKind::kDownsample : ConvKind::kSubmanifold,
           ld.conv(stage_layer_name(s, l) + ".fused", 3, cin, cout)});
    }
  }
  w.align = ld.conv("align.fused", 1, n.stage_channels[1], n.align_channels);
  w.head.heatmap_hidden = ld.conv("head.heatmap.hidden.fused", 3, n.align_channels, n.head_channels);
  w.head.heatmap_out = ld.conv("head.heatmap.out", 1, n.head_channels, n.num_classes);
  w.head.regression_hidden =
      ld.conv("head.regression.hidden.fused", 3, n.align_channels, n.head_channels);
  w.head.regression_out = ld.conv("head.regression.out", 1, n.head_channels, kRegressionChannels);
  ld.finish();
  return w;
}

QuantizedModel read_quantized_model(const WeightFile& file, const EngineConfig& cfg) {
  const NetworkConfig& n = cfg.network;
  const int f_in = cfg.features.feature_count();
  const int half = n.encoder_half();
  Loader ld(file);
  QuantizedModel m;
  for (int f = 0; f < f_in; ++f) m.input.push_back(ld.marker("input." + std::to_string(f)));
  {
    const NamedTensor& t = ld.tensor("encoder.linear.weight", {u(f_in), u(half)}, DType::kI8);
    if (!t.quant->per_channel || t.quant->axis != 1) {
      throw FormatError("tensor encoder.linear.weight must be quantized per output channel");
    }
    m.encoder.kernel = 1;
    m.encoder.cin = f_in;
    m.encoder.cout = half;
    m.encoder.weight = t.i8;
    m.encoder.weight_scales = t.quant->scales;
    m.encoder.bias = ld.tensor("encoder.linear.bias", {u(half)}, DType::kF32).f32;
    m.encoder_out = ld.marker("encoder");
  }
  m.stages.resize(4);
  m.stage_out.resize(4);
  for (int s = 0; s < 4; ++s) {
    for (int l = 0; l < stage_layers(n, s); ++l) {
      const auto [cin, cout] = stage_shape(n, s, l);
      const std::string p = stage_layer_name(s, l);
      m.stages[static_cast<std::size_t>(s)].push_back(ld.qconv(p + ".fused", 3, cin, cout));
      m.stage_out[static_cast<std::size_t>(s)].push_back(ld.marker(p));
    }
  }
  m.align = ld.qconv("align.fused", 1, n.stage_channels[1], n.align_channels);
  m.align_out = ld.marker("align");
  m.add1_out = ld.marker("fuse.add1");
  m.add2_out = ld.marker("fuse.add2");
  m.heatmap_hidden = ld.qconv("head.heatmap.hidden.fused", 3, n.align_channels, n.head_channels);
  m.heatmap_hidden_out = ld.marker("head.heatmap.hidden");
  m.heatmap_out = ld.qconv("head.heatmap.out", 1, n.head_channels, n.num_classes);
  m.heatmap_out_out = ld.marker("head.heatmap.out");
  m.regression_hidden =
      ld.qconv("head.regression.hidden.fused", 3, n.align_channels, n.head_channels);
  m.regression_hidden_out = ld.marker("head.regression.hidden");
  m.regression_out = ld.qconv("head.regression.out", 1, n.head_channels, kRegressionChannels);
  m.regression_out_out = ld.marker("head.regression.out");
  ld.finish();
  return m;
}

EngineConfig config_from_weights(const WeightFile& file, EngineConfig base) {
  const WeightForm form = detect_form(file);
  const std::string branch = form == WeightForm::kTraining ? ".conv3x3.weight" : ".fused.weight";
  const std::string single = form == WeightForm::kTraining ? ".conv.weight" : ".fused.weight";
  auto dims = [&](const std::string& name, std::size_t rank) {
    const NamedTensor& t = file.get(name);
    if (t.dims.size() != rank) throw ShapeError("tensor " + name + " has rank " +
                                                std::to_string(t.dims.size()));
    return t.dims;
  };
  const auto enc = dims("encoder.linear.weight", 2);
  if (enc[0] != 7 && enc[0] != 9) {
    throw ShapeError("tensor encoder.linear.weight has " + std::to_string(enc[0]) +
                     " input features, expected 7 or 9");
  }
  base.features.center_offsets = enc[0] == 9;
  NetworkConfig& n = base.network;
  n.encoder_out = static_cast<int>(enc[1]) * 2;
  for (int s = 0; s < 4; ++s) {
    n.stage_channels[static_cast<std::size_t>(s)] =
        static_cast<int>(dims(stage_layer_name(s, 0) + branch, 4)[3]);
    int depth = 0;
    while (file.contains(stage_layer_name(s, depth + 1) + branch)) ++depth;
    n.stage_depths[static_cast<std::size_t>(s)] = depth;
  }
  n.align_channels = static_cast<int>(dims("align" + single, 4)[3]);
  n.head_channels = static_cast<int>(dims("head.heatmap.hidden" + single, 4)[3]);
  n.num_classes = static_cast<int>(dims("head.heatmap.out.weight", 4)[3]);
  base.validate();
  return base;
}

}  // namespace lift
