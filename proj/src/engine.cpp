#include "lift/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "lift/parallel.hpp"

namespace lift {
namespace {

StageStats base_stats(const PillarSet& pillars) {
  StageStats s;
  s.points = pillars.point_count();
  s.pillars = pillars.pillar_count();
  return s;
}

void observe_input(const PillarSet& pillars, const ForwardHooks& hooks) {
  if (hooks.observe) hooks.observe("input", pillars.features, pillars.feature_dim);
}

InferenceResult finish(const EngineConfig& cfg, StageStats stats, const BackboneOutput& bb,
                       HeadOutput head) {
  InferenceResult r;
  stats.stage_sites = bb.stage_sites;
  stats.head_sites = head.heatmap.size();
  r.boxes = decode(head.heatmap, head.regression, cfg.grid, cfg.decode);
  r.heatmap = std::move(head.heatmap);
  r.regression = std::move(head.regression);
  r.stats = stats;
  return r;
}

// Raises the scale to `min_scale` when needed. The zero point is kept, so the
// representable range only grows.
QuantParams floor_scale(QuantParams qp, double min_scale) {
  if (static_cast<double>(qp.scale) < min_scale) qp.scale = static_cast<float>(min_scale);
  return qp;
}

QuantParams with_floor(const ActivationObserver& obs, const std::string& name,
                       CalibrationMode mode, double min_scale) {
  return floor_scale(obs.params(name, mode), min_scale);
}

void emit_q(const ForwardHooks& hooks, std::string_view name, const QTensor& t) {
  if (hooks.observe) hooks.emit(name, dequantize_tensor(t));
}

}  // namespace

FusedWeights dequantize_model(const QuantizedModel& m) {
  FusedWeights w;
  const ConvWeights enc = m.encoder.dequantized();
  if (m.input.size() != static_cast<std::size_t>(enc.cin)) {
    throw ShapeError("input quantization count differs from encoder inputs");
  }
  w.encoder.f_in = enc.cin;
  w.encoder.half = enc.cout;
  w.encoder.weight = enc.weight;
  w.encoder.bias = enc.bias;
  const auto h = static_cast<std::size_t>(enc.cout);
  for (std::size_t n = 0; n < w.encoder.weight.size(); ++n) {
    w.encoder.weight[n] /= static_cast<double>(m.input[n / h].scale);
  }
  w.stages.resize(m.stages.size());
  for (std::size_t s = 0; s < m.stages.size(); ++s) {
    for (std::size_t l = 0; l < m.stages[s].size(); ++l) {
      w.stages[s].push_back({l == 0 ? ConvKind::kDownsample : ConvKind::kSubmanifold,
                             m.stages[s][l].dequantized()});
    }
  }
  w.align = m.align.dequantized();
  w.head.heatmap_hidden = m.heatmap_hidden.dequantized();
  w.head.heatmap_out = m.heatmap_out.dequantized();
  w.head.regression_hidden = m.regression_hidden.dequantized();
  w.head.regression_out = m.regression_out.dequantized();
  return w;
}

InferenceResult infer(const PillarSet& pillars, const EngineConfig& cfg,
                      const FusedWeights& weights, const ForwardHooks& hooks) {
  observe_input(pillars, hooks);
  const RealTensor enc = dbpfn_encode(pillars, weights.encoder);
  hooks.record("encoder", "encoder");
  hooks.emit("encoder", enc);
  const BackboneOutput bb = run_backbone(enc, weights.stages, hooks);
  const RealTensor fused = fuse_scales(bb.s2, bb.s3, bb.s4, weights.align, hooks);
  return finish(cfg, base_stats(pillars), bb, run_head(fused, weights.head, hooks));
}

InferenceResult infer(const PillarSet& pillars, const EngineConfig& cfg,
                      const TrainWeights& weights, const ForwardHooks& hooks) {
  observe_input(pillars, hooks);
  const RealTensor enc = dbpfn_encode(pillars, weights.encoder);
  hooks.record("encoder", "encoder");
  hooks.emit("encoder", enc);
  const BackboneOutput bb = run_backbone(enc, weights.stages, hooks);
  const RealTensor fused = fuse_scales(bb.s2, bb.s3, bb.s4, weights.align.folded(), hooks);
  HeadWeights head{weights.heatmap_hidden.folded(), weights.heatmap_out,
                   weights.regression_hidden.folded(), weights.regression_out};
  return finish(cfg, base_stats(pillars), bb, run_head(fused, head, hooks));
}

QTensor dbpfn_encode_int8(const PillarSet& pillars, std::span<const QuantParams> input,
                          const QConvParams& encoder, const QuantParams& output) {
  if (encoder.kernel != 1) throw ShapeError("encoder kernel must be 1x1");
  if (pillars.feature_dim != encoder.cin || input.size() != static_cast<std::size_t>(encoder.cin)) {
    throw ShapeError("pillar features have " + std::to_string(pillars.feature_dim) +
                     " entries, encoder expects " + std::to_string(encoder.cin));
  }
  const QConvLayer layer = QConvLayer::prepare(encoder, QuantParams{1.0f, 0}, output,
                                               Activation::kNone);
  const auto h = static_cast<std::size_t>(encoder.cout);
  const auto f_in = static_cast<std::size_t>(encoder.cin);
  const std::size_t n = pillars.pillar_count();
  std::vector<int8_t> out(n * 2 * h);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<int32_t> centered(f_in);
    std::vector<int32_t> acc(h);
    for (std::size_t p = begin; p < end; ++p) {
      int8_t* dst = out.data() + p * 2 * h;
      std::fill(dst, dst + h, std::numeric_limits<int8_t>::min());
      std::fill(dst + h, dst + 2 * h, std::numeric_limits<int8_t>::max());
      for (std::size_t pt = pillars.offsets[p]; pt < pillars.offsets[p + 1]; ++pt) {
        const auto x = pillars.point(pt);
        for (std::size_t f = 0; f < f_in; ++f) {
          centered[f] = static_cast<int32_t>(quantize(x[f], input[f])) - input[f].zero_point;
        }
        std::copy(layer.bias_q.begin(), layer.bias_q.end(), acc.begin());
        for (std::size_t f = 0; f < f_in; ++f) {
          const int8_t* wrow = encoder.weight.data() + f * h;
          for (std::size_t c = 0; c < h; ++c) acc[c] += centered[f] * wrow[c];
        }
        for (std::size_t c = 0; c < h; ++c) {
          const int8_t v = layer.requant[c].apply(acc[c]);
          dst[c] = std::max(dst[c], v);
          dst[h + c] = std::min(dst[h + c], v);
        }
      }
    }
  }, 256);
  return QTensor(ActiveSet::make_sorted(pillars.width, pillars.height, pillars.coords),
                 encoder.cout * 2, std::move(out), output);
}

InferenceResult infer(const PillarSet& pillars, const EngineConfig& cfg,
                      const QuantizedModel& m, const ForwardHooks& hooks) {
  if (m.stages.size() != 4 || m.stage_out.size() != 4) {
    throw ShapeError("quantized backbone needs exactly 4 stages");
  }
  observe_input(pillars, hooks);
  QTensor cur = dbpfn_encode_int8(pillars, m.input, m.encoder, m.encoder_out);
  hooks.record("encoder", "encoder");
  emit_q(hooks, "encoder", cur);

  BackboneOutput sites;
  std::optional<QTensor> s2, s3, s4;
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& layers = m.stages[s];
    if (layers.empty() || m.stage_out[s].size() != layers.size()) {
      throw ShapeError("stage " + std::to_string(s + 1) + " has inconsistent layer counts");
    }
    std::optional<Rulebook> subm;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string name = stage_layer_name(static_cast<int>(s), static_cast<int>(l));
      const QConvLayer layer =
          QConvLayer::prepare(layers[l], *cur.quant(), m.stage_out[s][l], Activation::kRelu);
      if (l == 0) {
        cur = conv(cur, build_regular_rulebook(cur.active_ptr(), 3, 2), layer);
      } else {
        if (!subm) subm = build_submanifold_rulebook(cur.active_ptr(), 3);
        cur = conv(cur, *subm, layer);
      }
      hooks.record("conv", name);
      emit_q(hooks, name, cur);
    }
    sites.stage_sites[s] = cur.size();
    if (s == 1) s2 = cur;
    if (s == 2) s3 = cur;
    if (s == 3) s4 = cur;
  }

  const QConvLayer align = QConvLayer::prepare(m.align, *s2->quant(), m.align_out,
                                               Activation::kRelu);
  const QTensor aligned = conv(*s2, build_submanifold_rulebook(s2->active_ptr(), 1), align);
  hooks.record("conv", "align");
  emit_q(hooks, "align", aligned);
  const QTensor add1 = sparse_add_projected(aligned, *s3, 2, m.add1_out);
  hooks.record("add", "fuse.add1");
  emit_q(hooks, "fuse.add1", add1);
  const QTensor add2 = sparse_add_projected(add1, *s4, 4, m.add2_out);
  hooks.record("add", "fuse.add2");
  emit_q(hooks, "fuse.add2", add2);

  const Rulebook rb3 = build_submanifold_rulebook(add2.active_ptr(), 3);
  const Rulebook rb1 = build_submanifold_rulebook(add2.active_ptr(), 1);
  auto branch = [&](const char* prefix, const QConvParams& hidden, const QuantParams& hidden_out,
                    const QConvParams& outp, const QuantParams& out_q) {
    const std::string base = std::string("head.") + prefix;
    const QTensor h = conv(add2, rb3,
                           QConvLayer::prepare(hidden, m.add2_out, hidden_out, Activation::kRelu));
    hooks.record("conv", base + ".hidden");
    emit_q(hooks, base + ".hidden", h);
    const QTensor o = conv(h, rb1, QConvLayer::prepare(outp, hidden_out, out_q, Activation::kNone));
    hooks.record("conv", base + ".out");
    emit_q(hooks, base + ".out", o);
    return dequantize_tensor(o);
  };
  HeadOutput head;
  head.heatmap = branch("heatmap", m.heatmap_hidden, m.heatmap_hidden_out, m.heatmap_out,
                        m.heatmap_out_out);
  head.regression = branch("regression", m.regression_hidden, m.regression_hidden_out,
                           m.regression_out, m.regression_out_out);
  if (head.regression.channels() != kRegressionChannels) {
    throw ShapeError("regression branch must produce 8 channels");
  }
  return finish(cfg, base_stats(pillars), sites, std::move(head));
}

// ---------------------------------------------------------------------------
// Calibration

void ActivationObserver::Stats::add(float v) {
  const double d = v;
  if (count == 0) {
    min = max = d;
  } else {
    min = std::min(min, d);
    max = std::max(max, d);
  }
  ++count;
  if (seen++ % stride == 0) sample.push_back(v);
  if (sample.size() >= kSampleCap) {
    // Keep every other retained sample and halve the intake rate.
    std::size_t w = 0;
    for (std::size_t r = 0; r < sample.size(); r += 2) sample[w++] = sample[r];
    sample.resize(w);
    stride *= 2;
  }
}

void ActivationObserver::record(std::string_view name, std::span<const float> values,
                                int channels) {
  if (name == "input") {
    const auto ch = static_cast<std::size_t>(channels);
    for (std::size_t n = 0; n < values.size(); ++n) {
      const std::string key = "input." + std::to_string(n % ch);
      auto it = stats_.find(key);
      if (it == stats_.end()) it = stats_.emplace(key, Stats{}).first;
      it->second.add(values[n]);
    }
    return;
  }
  auto it = stats_.find(name);
  if (it == stats_.end()) it = stats_.emplace(std::string(name), Stats{}).first;
  for (float v : values) it->second.add(v);
}

ForwardHooks ActivationObserver::hooks() {
  ForwardHooks h;
  h.observe = [this](std::string_view name, std::span<const float> values, int channels) {
    record(name, values, channels);
  };
  return h;
}

const ActivationObserver::Stats& ActivationObserver::get(const std::string& name) const {
  const auto it = stats_.find(name);
  if (it == stats_.end() || it->second.count == 0) {
    throw CalibrationError("no calibration samples for activation " + name);
  }
  return it->second;
}

QuantParams ActivationObserver::params(const std::string& name, CalibrationMode mode) const {
  const Stats& s = get(name);
  if (mode.kind == CalibrationMode::Kind::kMinMax) return params_from_range(s.min, s.max);
  return calibrate(std::span<const float>(s.sample), mode);
}

QuantizedModel quantize_model(const FusedWeights& weights, const EngineConfig& cfg,
                              const ActivationObserver& obs) {
  cfg.validate();
  const CalibrationMode mode = cfg.calibration;
  const GridConfig& g = cfg.grid;
  QuantizedModel m;

  const int f_in = weights.encoder.f_in;
  m.input.resize(static_cast<std::size_t>(f_in));
  for (int f = 0; f < f_in; ++f) {
    QuantParams& qp = m.input[static_cast<std::size_t>(f)];
    switch (f) {
      case kXCoarse: qp = coarse_quant_params(g.x_min, g.x_max); break;
      case kXDetail: qp = detail_quant_params(g.x_min, g.x_max); break;
      case kYCoarse: qp = coarse_quant_params(g.y_min, g.y_max); break;
      case kYDetail: qp = detail_quant_params(g.y_min, g.y_max); break;
      case kZCoarse: qp = coarse_quant_params(g.z_min, g.z_max); break;
      case kZDetail: qp = detail_quant_params(g.z_min, g.z_max); break;
      case kDxCenter: qp = params_from_range(-g.pillar_size_x / 2, g.pillar_size_x / 2); break;
      case kDyCenter: qp = params_from_range(-g.pillar_size_y / 2, g.pillar_size_y / 2); break;
      default: qp = obs.params("input." + std::to_string(f), mode); break;
    }
  }

  ConvWeights enc = weights.encoder.as_kernel();
  const auto h = static_cast<std::size_t>(enc.cout);
  for (std::size_t n = 0; n < enc.weight.size(); ++n) {
    enc.weight[n] *= static_cast<double>(m.input[n / h].scale);
  }
  m.encoder = QConvParams::from_real(enc);
  m.encoder_out = with_floor(obs, "encoder", mode, min_output_scale(1.0, m.encoder.weight_scales));

  double in_scale = m.encoder_out.scale;
  m.stages.resize(weights.stages.size());
  m.stage_out.resize(weights.stages.size());
  for (std::size_t s = 0; s < weights.stages.size(); ++s) {
    for (std::size_t l = 0; l < weights.stages[s].size(); ++l) {
      QConvParams q = QConvParams::from_real(weights.stages[s][l].weights);
      const QuantParams out =
          with_floor(obs, stage_layer_name(static_cast<int>(s), static_cast<int>(l)), mode,
                     min_output_scale(in_scale, q.weight_scales));
      m.stages[s].push_back(std::move(q));
      m.stage_out[s].push_back(out);
      in_scale = out.scale;
    }
  }
  if (m.stage_out.size() != 4 || m.stage_out[1].empty() || m.stage_out[2].empty() ||
      m.stage_out[3].empty()) {
    throw ShapeError("backbone needs exactly 4 non-empty stages");
  }
  const QuantParams s2 = m.stage_out[1].back();
  const QuantParams s3 = m.stage_out[2].back();
  const QuantParams s4 = m.stage_out[3].back();

  m.align = QConvParams::from_real(weights.align);
  m.align_out = with_floor(obs, "align", mode, min_output_scale(s2.scale, m.align.weight_scales));
  auto add_floor = [](float a, float b) {
    return std::max<double>(a, b) / (kMaxRequantFactor * 0.999);
  };
  m.add1_out = with_floor(obs, "fuse.add1", mode, add_floor(m.align_out.scale, s3.scale));
  m.add2_out = with_floor(obs, "fuse.add2", mode, add_floor(m.add1_out.scale, s4.scale));

  const HeadWeights& hw = weights.head;
  m.heatmap_hidden = QConvParams::from_real(hw.heatmap_hidden);
  m.heatmap_hidden_out = with_floor(obs, "head.heatmap.hidden", mode,
                                    min_output_scale(m.add2_out.scale, m.heatmap_hidden.weight_scales));
  m.heatmap_out = QConvParams::from_real(hw.heatmap_out);
  m.heatmap_out_out = with_floor(obs, "head.heatmap.out", mode,
                                 min_output_scale(m.heatmap_hidden_out.scale, m.heatmap_out.weight_scales));
  m.regression_hidden = QConvParams::from_real(hw.regression_hidden);
  m.regression_hidden_out =
      with_floor(obs, "head.regression.hidden", mode,
                 min_output_scale(m.add2_out.scale, m.regression_hidden.weight_scales));
  m.regression_out = QConvParams::from_real(hw.regression_out);
  m.regression_out_out =
      with_floor(obs, "head.regression.out", mode,
                 min_output_scale(m.regression_hidden_out.scale, m.regression_out.weight_scales));
  return m;
}

QuantizedModel calibrate_model(const FusedWeights& weights, const EngineConfig& cfg,
                               std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw CalibrationError("calibration needs at least one point cloud");
  ActivationObserver obs;
  const ForwardHooks hooks = obs.hooks();
  for (const PointCloud& cloud : clouds) infer_cloud(cloud, cfg, weights, hooks);
  return quantize_model(weights, cfg, obs);
}

}  // namespace lift
