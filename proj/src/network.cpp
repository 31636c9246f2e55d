#include "lift/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "lift/parallel.hpp"

namespace lift {

void NetworkConfig::validate() const {
  if (encoder_out <= 0 || encoder_out % 2 != 0) {
    throw ParameterError("encoder_out must be a positive even number");
  }
  for (std::size_t s = 0; s < 4; ++s) {
    if (stage_channels[s] <= 0) throw ParameterError("stage channels must be positive");
    if (stage_depths[s] < 0) throw ParameterError("stage depths must be non-negative");
  }
  if (align_channels <= 0 || head_channels <= 0 || num_classes <= 0) {
    throw ParameterError("align_channels, head_channels and num_classes must be positive");
  }
  if (stage_channels[2] != align_channels || stage_channels[3] != align_channels) {
    throw ParameterError("stage 3 and 4 widths must equal align_channels");
  }
}

void DbpfnParams::validate() const {
  if (f_in <= 0 || half <= 0) throw ShapeError("encoder dimensions must be positive");
  if (weight.size() != static_cast<std::size_t>(f_in) * half) {
    throw ShapeError("encoder weight must be f_in x half");
  }
  if (bias.size() != static_cast<std::size_t>(half)) throw ShapeError("encoder bias length");
  if (bn) {
    bn->validate();
    if (bn->channels() != half) throw ShapeError("encoder normalization width");
  }
}

DbpfnParams DbpfnParams::folded() const {
  validate();
  DbpfnParams out = *this;
  out.bn.reset();
  if (!bn) return out;
  const auto h = static_cast<std::size_t>(half);
  for (std::size_t n = 0; n < weight.size(); ++n) out.weight[n] = weight[n] * bn->factor(n % h);
  for (std::size_t c = 0; c < h; ++c) out.bias[c] = bn->apply(c, bias[c]);
  return out;
}

ConvWeights DbpfnParams::as_kernel() const {
  const DbpfnParams f = folded();
  ConvWeights w = ConvWeights::zeros(1, f_in, half);
  w.weight = f.weight;
  w.bias = f.bias;
  return w;
}

ConvWeights ConvBn::folded() const {
  return fold_bn(conv.weight, conv.kernel, conv.cin, conv.cout, bn);
}

FusedWeights fuse_network(const TrainWeights& train) {
  FusedWeights out;
  out.encoder = train.encoder.folded();
  out.stages.resize(train.stages.size());
  for (std::size_t s = 0; s < train.stages.size(); ++s) {
    for (const RepConvLayer& layer : train.stages[s]) out.stages[s].push_back(fuse(layer));
  }
  out.align = train.align.folded();
  out.head.heatmap_hidden = train.heatmap_hidden.folded();
  out.head.heatmap_out = train.heatmap_out;
  out.head.regression_hidden = train.regression_hidden.folded();
  out.head.regression_out = train.regression_out;
  return out;
}

void ForwardHooks::record(std::string_view op, std::string_view name) const {
  if (trace) trace->push_back(std::string(op) + ":" + std::string(name));
}

void ForwardHooks::emit(std::string_view name, const RealTensor& t) const {
  if (observe) observe(name, t.features(), t.channels());
}

std::string stage_layer_name(int stage, int layer) {
  return "stage" + std::to_string(stage + 1) + ".layer" + std::to_string(layer);
}

RealTensor dbpfn_encode(const PillarSet& pillars, const DbpfnParams& params) {
  params.validate();
  if (pillars.feature_dim != params.f_in) {
    throw ShapeError("pillar features have " + std::to_string(pillars.feature_dim) +
                     " entries, encoder expects " + std::to_string(params.f_in));
  }
  const auto h = static_cast<std::size_t>(params.half);
  const auto f_in = static_cast<std::size_t>(params.f_in);
  const std::size_t n = pillars.pillar_count();
  std::vector<float> out(n * 2 * h);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<double> y(h);
    for (std::size_t p = begin; p < end; ++p) {
      float* dst = out.data() + p * 2 * h;
      std::fill(dst, dst + h, -std::numeric_limits<float>::infinity());
      std::fill(dst + h, dst + 2 * h, std::numeric_limits<float>::infinity());
      for (std::size_t pt = pillars.offsets[p]; pt < pillars.offsets[p + 1]; ++pt) {
        const auto x = pillars.point(pt);
        std::copy(params.bias.begin(), params.bias.end(), y.begin());
        for (std::size_t f = 0; f < f_in; ++f) {
          const double v = x[f];
          const double* wrow = params.weight.data() + f * h;
          for (std::size_t c = 0; c < h; ++c) y[c] += v * wrow[c];
        }
        for (std::size_t c = 0; c < h; ++c) {
          const auto v = static_cast<float>(params.bn ? params.bn->apply(c, y[c]) : y[c]);
          dst[c] = std::max(dst[c], v);
          dst[h + c] = std::min(dst[h + c], v);
        }
      }
    }
  }, 256);
  return RealTensor(ActiveSet::make_sorted(pillars.width, pillars.height, pillars.coords),
                    params.half * 2, std::move(out));
}

namespace {

void check_stage_count(std::size_t stages) {
  if (stages != 4) throw ShapeError("backbone needs exactly 4 stages");
}

}  // namespace

BackboneOutput run_backbone(const RealTensor& x,
                            const std::vector<std::vector<FusedConvLayer>>& stages,
                            const ForwardHooks& hooks) {
  check_stage_count(stages.size());
  BackboneOutput out;
  RealTensor cur = x;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& layers = stages[s];
    if (layers.empty() || layers.front().kind != ConvKind::kDownsample) {
      throw StructuralError("stage " + std::to_string(s + 1) + " must start with a downsampler");
    }
    std::optional<Rulebook> subm;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string name = stage_layer_name(static_cast<int>(s), static_cast<int>(l));
      const FusedConvLayer& layer = layers[l];
      if (l == 0) {
        cur = conv(cur, build_regular_rulebook(cur.active_ptr(), 3, 2), layer.weights,
                   Activation::kRelu);
      } else {
        if (layer.kind != ConvKind::kSubmanifold) {
          throw StructuralError(name + " must be a submanifold layer");
        }
        if (!subm) subm = build_submanifold_rulebook(cur.active_ptr(), 3);
        cur = conv(cur, *subm, layer.weights, Activation::kRelu);
      }
      hooks.record("conv", name);
      hooks.emit(name, cur);
    }
    out.stage_sites[s] = cur.size();
    if (s == 1) out.s2 = cur;
    if (s == 2) out.s3 = cur;
    if (s == 3) out.s4 = cur;
  }
  return out;
}

BackboneOutput run_backbone(const RealTensor& x,
                            const std::vector<std::vector<RepConvLayer>>& stages,
                            const ForwardHooks& hooks) {
  check_stage_count(stages.size());
  BackboneOutput out;
  RealTensor cur = x;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const auto& layers = stages[s];
    if (layers.empty() || layers.front().kind != ConvKind::kDownsample) {
      throw StructuralError("stage " + std::to_string(s + 1) + " must start with a downsampler");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string name = stage_layer_name(static_cast<int>(s), static_cast<int>(l));
      const RepConvLayer& layer = layers[l];
      cur = apply_training_form(layer, cur, Activation::kRelu);
      hooks.record("conv", name + ".conv3x3");
      hooks.record("conv", name + ".conv1x1");
      if (layer.identity) hooks.record("identity", name + ".identity");
      hooks.record("add", name + ".branch_sum");
      hooks.emit(name, cur);
    }
    out.stage_sites[s] = cur.size();
    if (s == 1) out.s2 = cur;
    if (s == 2) out.s3 = cur;
    if (s == 3) out.s4 = cur;
  }
  return out;
}

RealTensor fuse_scales(const RealTensor& s2, const RealTensor& s3, const RealTensor& s4,
                       const ConvWeights& align, const ForwardHooks& hooks) {
  if (align.kernel != 1) throw ShapeError("alignment layer must be 1x1");
  RealTensor aligned = conv(s2, build_submanifold_rulebook(s2.active_ptr(), 1), align,
                            Activation::kRelu);
  hooks.record("conv", "align");
  hooks.emit("align", aligned);
  RealTensor add1 = sparse_add_projected(aligned, s3, 2);
  hooks.record("add", "fuse.add1");
  hooks.emit("fuse.add1", add1);
  RealTensor add2 = sparse_add_projected(add1, s4, 4);
  hooks.record("add", "fuse.add2");
  hooks.emit("fuse.add2", add2);
  return add2;
}

HeadOutput run_head(const RealTensor& x, const HeadWeights& head, const ForwardHooks& hooks) {
  if (head.heatmap_hidden.kernel != 3 || head.regression_hidden.kernel != 3 ||
      head.heatmap_out.kernel != 1 || head.regression_out.kernel != 1) {
    throw ShapeError("head uses 3x3 hidden and 1x1 output convolutions");
  }
  if (head.regression_out.cout != kRegressionChannels) {
    throw ShapeError("regression branch must produce 8 channels");
  }
  const Rulebook rb3 = build_submanifold_rulebook(x.active_ptr(), 3);
  const Rulebook rb1 = build_submanifold_rulebook(x.active_ptr(), 1);
  HeadOutput out;

  RealTensor hidden = conv(x, rb3, head.heatmap_hidden, Activation::kRelu);
  hooks.record("conv", "head.heatmap.hidden");
  hooks.emit("head.heatmap.hidden", hidden);
  out.heatmap = conv(hidden, rb1, head.heatmap_out);
  hooks.record("conv", "head.heatmap.out");
  hooks.emit("head.heatmap.out", out.heatmap);

  hidden = conv(x, rb3, head.regression_hidden, Activation::kRelu);
  hooks.record("conv", "head.regression.hidden");
  hooks.emit("head.regression.hidden", hidden);
  out.regression = conv(hidden, rb1, head.regression_out);
  hooks.record("conv", "head.regression.out");
  hooks.emit("head.regression.out", out.regression);
  return out;
}

std::vector<DetectionBox> decode(const RealTensor& heatmap, const RealTensor& regression,
                                 const GridConfig& grid, const DecodeParams& params) {
  if (!heatmap.active().same_coords(regression.active())) {
    throw ShapeError("heatmap and regression maps must share an active set");
  }
  if (regression.channels() != kRegressionChannels) {
    throw ShapeError("regression map must have 8 channels");
  }
  const auto classes = static_cast<std::size_t>(heatmap.channels());
  std::vector<float> scores(heatmap.features().size());
  for (std::size_t n = 0; n < scores.size(); ++n) {
    const double logit = heatmap.features()[n];
    scores[n] = static_cast<float>(1.0 / (1.0 + std::exp(-logit)));
  }
  const RealTensor score_map(heatmap.active_ptr(), heatmap.channels(), std::move(scores));
  const RealTensor pooled = sparse_max_pool(score_map, 3);

  struct Candidate {
    float score;
    int cls;
    Coord c;
    std::size_t row;
  };
  std::vector<Candidate> cands;
  for (std::size_t n = 0; n < score_map.size(); ++n) {
    const auto s = score_map.row(n);
    const auto p = pooled.row(n);
    for (std::size_t k = 0; k < classes; ++k) {
      if (s[k] == p[k] && static_cast<double>(s[k]) >= params.score_threshold) {
        cands.push_back({s[k], static_cast<int>(k), score_map.coords()[n], n});
      }
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.cls != b.cls) return a.cls < b.cls;
    if (a.c.j != b.c.j) return a.c.j < b.c.j;
    return a.c.i < b.c.i;
  });
  if (params.top_k >= 0 && cands.size() > static_cast<std::size_t>(params.top_k)) {
    cands.resize(static_cast<std::size_t>(params.top_k));
  }

  const double cell_x = grid.pillar_size_x * kHeadStride;
  const double cell_y = grid.pillar_size_y * kHeadStride;
  std::vector<DetectionBox> boxes;
  boxes.reserve(cands.size());
  for (const Candidate& cand : cands) {
    const auto r = regression.row(cand.row);
    DetectionBox b;
    b.class_id = cand.cls;
    b.score = cand.score;
    const double ox = std::clamp<double>(r[kRegOffsetX], -kMaxCenterOffset, kMaxCenterOffset);
    const double oy = std::clamp<double>(r[kRegOffsetY], -kMaxCenterOffset, kMaxCenterOffset);
    b.x = (cand.c.i + 0.5 + ox) * cell_x + grid.x_min;
    b.y = (cand.c.j + 0.5 + oy) * cell_y + grid.y_min;
    b.z = r[kRegZ];
    b.l = std::exp(std::clamp<double>(r[kRegLogL], -kMaxLogSize, kMaxLogSize));
    b.w = std::exp(std::clamp<double>(r[kRegLogW], -kMaxLogSize, kMaxLogSize));
    b.h = std::exp(std::clamp<double>(r[kRegLogH], -kMaxLogSize, kMaxLogSize));
    b.yaw = std::atan2(static_cast<double>(r[kRegYawSin]), static_cast<double>(r[kRegYawCos]));
    if (b.yaw <= -std::numbers::pi) b.yaw = std::numbers::pi;
    boxes.push_back(b);
  }
  return boxes;
}

std::vector<GraphNode> inference_graph(const NetworkConfig& cfg) {
  std::vector<GraphNode> nodes;
  nodes.push_back({"encoder", "encoder"});
  for (int s = 0; s < 4; ++s) {
    for (int l = 0; l <= cfg.stage_depths[static_cast<std::size_t>(s)]; ++l) {
      nodes.push_back({"conv", stage_layer_name(s, l)});
    }
  }
  nodes.push_back({"conv", "align"});
  nodes.push_back({"add", "fuse.add1"});
  nodes.push_back({"add", "fuse.add2"});
  nodes.push_back({"conv", "head.heatmap.hidden"});
  nodes.push_back({"conv", "head.heatmap.out"});
  nodes.push_back({"conv", "head.regression.hidden"});
  nodes.push_back({"conv", "head.regression.out"});
  return nodes;
}

}  // namespace lift
