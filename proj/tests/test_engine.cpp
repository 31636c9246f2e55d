#include <cmath>

#include "doctest.h"
#include "lift/common.hpp"
#include "lift/engine.hpp"
#include "lift/model_io.hpp"
#include "lift/pcd_io.hpp"
#include "lift/parallel.hpp"
#include "lift/synthetic.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lift;

namespace {

EngineConfig small_config() {
  EngineConfig cfg;
  cfg.grid.x_min = cfg.grid.y_min = -9.6;
  cfg.grid.x_max = cfg.grid.y_max = 9.6;
  cfg.network.encoder_out = 16;
  cfg.network.stage_channels = {8, 8, 16, 16};
  cfg.network.stage_depths = {2, 2, 2, 2};
  cfg.network.align_channels = 16;
  cfg.network.head_channels = 8;
  cfg.network.num_classes = 3;
  return cfg;
}

SceneParams small_scene() { return {800, 4, 80, 9}; }

}  // namespace

TEST_CASE("int8 encoder matches the integer oracle") {
  const EngineConfig cfg = small_config();
  const TrainWeights t = gen_train_weights(cfg, 3);
  const FusedWeights f = fuse_network(t);
  const std::vector<PointCloud> clouds{gen_cloud(cfg.grid, 5, small_scene())};
  const QuantizedModel m = calibrate_model(f, cfg, clouds);
  const PillarSet p = pillarize(clouds[0], cfg.grid, cfg.features);
  const QTensor y = dbpfn_encode_int8(p, m.input, m.encoder, m.encoder_out);
  const int h = m.encoder.cout, fin = m.encoder.cin;
  REQUIRE(y.channels() == 2 * h);
  REQUIRE(y.size() == p.pillar_count());

  bool equal = true;
  for (std::size_t k = 0; k < p.pillar_count(); ++k) {
    std::vector<int64_t> hi(static_cast<std::size_t>(h), -128), lo(static_cast<std::size_t>(h), 127);
    for (std::size_t n = p.offsets[k]; n < p.offsets[k + 1]; ++n) {
      const auto x = p.point(n);
      for (int c = 0; c < h; ++c) {
        const double s_w = m.encoder.weight_scales[static_cast<std::size_t>(c)];
        int64_t acc = oracle::round_even(m.encoder.bias[static_cast<std::size_t>(c)] / s_w);
        for (int fi = 0; fi < fin; ++fi) {
          const QuantParams& q = m.input[static_cast<std::size_t>(fi)];
          const int64_t centered = int64_t{quantize(x[static_cast<std::size_t>(fi)], q)} - q.zero_point;
          acc += centered * m.encoder.weight[static_cast<std::size_t>(fi * h + c)];
        }
        const Requantizer r = Requantizer::from_factor(s_w / m.encoder_out.scale, 0);
        const int64_t v = oracle::clamp8(oracle::fixed_point_round(acc, r.multiplier(), r.shift()) +
                                         m.encoder_out.zero_point);
        hi[static_cast<std::size_t>(c)] = std::max(hi[static_cast<std::size_t>(c)], v);
        lo[static_cast<std::size_t>(c)] = std::min(lo[static_cast<std::size_t>(c)], v);
      }
    }
    for (int c = 0; c < h; ++c) {
      equal = equal && y.row(k)[static_cast<std::size_t>(c)] == hi[static_cast<std::size_t>(c)];
      equal = equal && y.row(k)[static_cast<std::size_t>(h + c)] == lo[static_cast<std::size_t>(c)];
    }
  }
  CHECK(equal);
}

TEST_CASE("int8 inference tracks float inference") {
  const EngineConfig cfg = small_config();
  const FusedWeights f = fuse_network(gen_train_weights(cfg, 11));
  const std::vector<PointCloud> clouds{gen_cloud(cfg.grid, 1, small_scene()), gen_cloud(cfg.grid, 2, small_scene())};
  const QuantizedModel m = calibrate_model(f, cfg, clouds);
  const InferenceResult a = infer_cloud(clouds[0], cfg, f);
  const InferenceResult b = infer_cloud(clouds[0], cfg, m);
  REQUIRE(a.heatmap.active().same_coords(b.heatmap.active()));
  double mad = 0;
  for (std::size_t n = 0; n < a.heatmap.features().size(); ++n)
    mad += std::fabs(a.heatmap.features()[n] - b.heatmap.features()[n]);
  mad /= static_cast<double>(a.heatmap.features().size());
  CHECK(mad <= 3 * m.heatmap_out_out.scale);
  CHECK(a.stats.stage_sites == b.stats.stage_sites);
}

TEST_CASE("calibration: empty cloud list and observer contents") {
  const EngineConfig cfg = small_config();
  const FusedWeights f = fuse_network(gen_train_weights(cfg, 1));
  CHECK_THROWS_AS(calibrate_model(f, cfg, std::span<const PointCloud>{}), CalibrationError);

  ActivationObserver obs;
  infer_cloud(gen_cloud(cfg.grid, 3, small_scene()), cfg, f, obs.hooks());
  for (int k = 0; k < 9; ++k) CHECK(obs.contains("input." + std::to_string(k)));
  CHECK(obs.contains("encoder"));
  CHECK(obs.contains("stage1.layer0"));
  CHECK(obs.contains("align"));
  CHECK(obs.contains("fuse.add2"));
  CHECK(obs.contains("head.heatmap.out"));
  const auto& s = obs.get("encoder");
  CHECK(s.min <= s.max);
  CHECK(s.count > 0);
  const QuantParams qp = obs.params("encoder", CalibrationMode::minmax());
  CHECK(quantize(s.min, qp) == -128);
}

TEST_CASE("calibration is deterministic") {
  const EngineConfig cfg = small_config();
  const FusedWeights f = fuse_network(gen_train_weights(cfg, 4));
  const std::vector<PointCloud> clouds{gen_cloud(cfg.grid, 8, small_scene())};
  CHECK(to_weight_file(calibrate_model(f, cfg, clouds)).serialize() ==
        to_weight_file(calibrate_model(f, cfg, clouds)).serialize());
}

TEST_CASE("inference is identical across thread counts") {
  const EngineConfig cfg = small_config();
  const FusedWeights f = fuse_network(gen_train_weights(cfg, 5));
  const PointCloud cloud = gen_cloud(cfg.grid, 6, small_scene());
  const QuantizedModel m = calibrate_model(f, cfg, std::vector<PointCloud>{cloud});
  set_num_threads(1);
  const auto a = infer_cloud(cloud, cfg, m);
  const auto af = infer_cloud(cloud, cfg, f);
  set_num_threads(8);
  const auto b = infer_cloud(cloud, cfg, m);
  const auto bf = infer_cloud(cloud, cfg, f);
  set_num_threads(0);
  CHECK(format_detections(a.boxes, 3) == format_detections(b.boxes, 3));
  CHECK(std::equal(af.heatmap.features().begin(), af.heatmap.features().end(), bf.heatmap.features().begin()));
}

TEST_CASE("empty cloud infers to no boxes") {
  const EngineConfig cfg = small_config();
  const FusedWeights f = fuse_network(gen_train_weights(cfg, 5));
  const InferenceResult r = infer_cloud(PointCloud{}, cfg, f);
  CHECK(r.boxes.empty());
  CHECK(r.stats.pillars == 0);
}

TEST_CASE("weight file: round trips are byte-identical in every form") {
  const EngineConfig cfg = small_config();
  const TrainWeights t = gen_train_weights(cfg, 9);
  const FusedWeights f = fuse_network(t);
  const QuantizedModel q = calibrate_model(f, cfg, std::vector<PointCloud>{gen_cloud(cfg.grid, 1, small_scene())});

  const WeightFile wt = to_weight_file(t);
  const WeightFile wf = to_weight_file(f);
  const WeightFile wq = to_weight_file(q);
  CHECK(detect_form(wt) == WeightForm::kTraining);
  CHECK(detect_form(wf) == WeightForm::kFused);
  CHECK(detect_form(wq) == WeightForm::kQuantized);

  const auto bt = wt.serialize();
  CHECK(to_weight_file(read_train_weights(WeightFile::parse(bt), cfg)).serialize() == bt);
  const auto bf = wf.serialize();
  CHECK(to_weight_file(read_fused_weights(WeightFile::parse(bf), cfg)).serialize() == bf);
  const auto bq = wq.serialize();
  CHECK(to_weight_file(read_quantized_model(WeightFile::parse(bq), cfg)).serialize() == bq);

  testutil::TempDir dir;
  wq.write(dir / "q.lifw");
  CHECK(WeightFile::read(dir / "q.lifw").serialize() == bq);
}

TEST_CASE("weight file: config derived from the tensors") {
  const EngineConfig cfg = small_config();
  const WeightFile wf = to_weight_file(fuse_network(gen_train_weights(cfg, 1)));
  const EngineConfig got = config_from_weights(wf);
  CHECK(got.network.encoder_out == 16);
  CHECK(got.network.stage_channels == cfg.network.stage_channels);
  CHECK(got.network.stage_depths == cfg.network.stage_depths);
  CHECK(got.network.head_channels == 8);
  CHECK(got.network.num_classes == 3);
  CHECK(got.features.center_offsets);
}

TEST_CASE("weight file: shape mismatch names the tensor") {
  EngineConfig cfg = small_config();
  const WeightFile wf = to_weight_file(fuse_network(gen_train_weights(cfg, 1)));
  cfg.network.stage_channels = {8, 12, 16, 16};
  try {
    read_fused_weights(wf, cfg);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("stage2.layer0.fused.weight") != std::string::npos);
  }
}

TEST_CASE("weight file: missing, unexpected and corrupt data") {
  const EngineConfig cfg = small_config();
  const WeightFile wf = to_weight_file(fuse_network(gen_train_weights(cfg, 1)));

  WeightFile extra = wf;
  extra.add_f32("bogus", {1}, std::vector<float>{1.0f});
  CHECK_THROWS_WITH_AS(read_fused_weights(extra, cfg), doctest::Contains("bogus"), FormatError);

  WeightFile missing;
  for (const NamedTensor& t : wf.tensors())
    if (t.name != "align.fused.bias") missing.add(t);
  CHECK_THROWS_WITH_AS(read_fused_weights(missing, cfg), doctest::Contains("align.fused.bias"), FormatError);

  auto bytes = wf.serialize();
  CHECK_THROWS_AS(WeightFile::parse(std::span(bytes).first(bytes.size() - 1)), FormatError);
  bytes.push_back(0);
  CHECK_THROWS_AS(WeightFile::parse(bytes), FormatError);
  bytes = wf.serialize();
  bytes[0] = 'X';
  CHECK_THROWS_AS(WeightFile::parse(bytes), FormatError);

  WeightFile dup;
  dup.add_f32("a", {1}, std::vector<float>{1.0f});
  CHECK_THROWS_AS(dup.add_f32("a", {1}, std::vector<float>{1.0f}), FormatError);
}

TEST_CASE("weight file: header layout") {
  WeightFile w;
  w.add_f32("t", {2}, std::vector<float>{1.0f, 2.0f});
  const auto b = w.serialize();
  REQUIRE(b.size() == 4 + 4 + 4 + 2 + 1 + 1 + 1 + 4 + 8);
  CHECK(std::string(b.begin(), b.begin() + 4) == "LIFW");
  CHECK(b[4] == 1);
  CHECK(b[8] == 1);
  CHECK(b[12] == 1);
  CHECK(b[14] == 't');
  CHECK(b[15] == 0);
  CHECK(b[16] == 1);
  CHECK(b[17] == 2);
}

TEST_CASE("dequantized model stays close to the float weights") {
  const EngineConfig cfg = small_config();
  const FusedWeights f = fuse_network(gen_train_weights(cfg, 2));
  const QuantizedModel q = calibrate_model(f, cfg, std::vector<PointCloud>{gen_cloud(cfg.grid, 2, small_scene())});
  const FusedWeights d = dequantize_model(q);
  const auto& a = f.stages[1][1].weights.weight;
  const auto& b = d.stages[1][1].weights.weight;
  REQUIRE(a.size() == b.size());
  double err = 0, mx = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    err = std::max(err, std::fabs(a[n] - b[n]));
    mx = std::max(mx, std::fabs(a[n]));
  }
  CHECK(err <= mx / 127);
}
