#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lift/analysis.hpp"
#include "lift/config.hpp"
#include "lift/engine.hpp"
#include "lift/model_io.hpp"
#include "lift/parallel.hpp"
#include "lift/pcd_io.hpp"
#include "lift/synthetic.hpp"

namespace fs = std::filesystem;

namespace lift::cli {
namespace {

constexpr int kFuseProbes = 16;

EngineConfig config_or_default(const std::string& path) {
  return path.empty() ? EngineConfig{} : load_config(path);
}

bool is_cloud_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".bin" || ext == ".txt" || ext == ".csv" || ext == ".xyz";
}

std::vector<fs::path> cloud_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_cloud_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<int64_t> parse_list(const std::string& text, const char* flag) {
  std::vector<int64_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    int64_t v = 0;
    const char* b = text.data() + pos;
    const char* e = text.data() + comma;
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || b == e) {
      throw ParameterError(std::string(flag) + " expects comma-separated integers, got '" + text + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

void apply_threads(int flag) {
  if (flag > 0) {
    set_num_threads(flag);
    return;
  }
  if (const char* env = std::getenv("LIFT_THREADS"); env && *env) {
    int n = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, n);
    if (ec != std::errc() || ptr != end || n <= 0) {
      throw ParameterError(std::string("LIFT_THREADS must be a positive integer, got '") + env + "'");
    }
    set_num_threads(n);
  }
}

// ---------------------------------------------------------------------------

struct InferArgs {
  std::string weights, cloud, config, out;
  bool force_float = false;
  bool force_int8 = false;
  int stride = 4;
};

int cmd_infer(const InferArgs& a) {
  const WeightFile wf = WeightFile::read(a.weights);
  const WeightForm form = detect_form(wf);
  const EngineConfig cfg = a.config.empty() ? config_from_weights(wf) : load_config(a.config);
  if (a.force_int8 && form != WeightForm::kQuantized) {
    throw ParameterError(std::string("--int8 needs an int8 weight file, got ") + to_string(form) +
                         " weights (run calibrate first)");
  }
  const PointCloud cloud = read_cloud(a.cloud, a.stride);

  const auto t0 = std::chrono::steady_clock::now();
  const PillarSet pillars = pillarize(cloud, cfg.grid, cfg.features);
  InferenceResult r;
  switch (form) {
    case WeightForm::kTraining:
      r = infer(pillars, cfg, fuse_network(read_train_weights(wf, cfg)));
      break;
    case WeightForm::kFused:
      r = infer(pillars, cfg, read_fused_weights(wf, cfg));
      break;
    case WeightForm::kQuantized: {
      const QuantizedModel m = read_quantized_model(wf, cfg);
      r = a.force_float ? infer(pillars, cfg, dequantize_model(m)) : infer(pillars, cfg, m);
      break;
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  write_detections(r.boxes, a.out, cfg.network.num_classes);

  const StageStats& s = r.stats;
  std::fprintf(stderr, "points %zu read, %zu in pillars (%zu out of range, %zu truncated)\n",
               cloud.size(), s.points, pillars.range_discarded, pillars.truncation_discarded);
  std::fprintf(stderr, "active sites: pillars %zu, stage1 %zu, stage2 %zu, stage3 %zu, stage4 %zu, head %zu\n",
               s.pillars, s.stage_sites[0], s.stage_sites[1], s.stage_sites[2], s.stage_sites[3],
               s.head_sites);
  std::fprintf(stderr, "detections %zu, latency %.3f ms (%s path, threads %d)\n", r.boxes.size(),
               std::chrono::duration<double, std::milli>(t1 - t0).count(),
               form == WeightForm::kQuantized && !a.force_float ? "int8" : "float", num_threads());
  return kOk;
}

// Random sparse input on a small grid for probing one layer.
RealTensor probe_input(Rng& rng, int channels) {
  constexpr int kSide = 6;
  std::vector<Coord> coords;
  for (int j = 0; j < kSide; ++j) {
    for (int i = 0; i < kSide; ++i) {
      if (rng.chance(0.5)) coords.push_back({i, j});
    }
  }
  if (coords.empty()) coords.push_back({kSide / 2, kSide / 2});
  std::vector<float> f(coords.size() * static_cast<std::size_t>(channels));
  for (float& v : f) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return RealTensor(ActiveSet::make_sorted(kSide, kSide, std::move(coords)), channels, std::move(f));
}

int cmd_fuse(const std::string& in, const std::string& out, const std::string& config) {
  const WeightFile wf = WeightFile::read(in);
  if (detect_form(wf) != WeightForm::kTraining) {
    throw StructuralError("no branch tensors found in " + in + " (already fused?)");
  }
  const EngineConfig cfg = config.empty() ? config_from_weights(wf) : load_config(config);
  const TrainWeights train = read_train_weights(wf, cfg);
  const FusedWeights fused = fuse_network(train);

  double worst = 0.0;
  std::size_t layers = 0;
  for (int p = 0; p < kFuseProbes; ++p) {
    Rng rng(static_cast<uint64_t>(p));
    for (std::size_t s = 0; s < train.stages.size(); ++s) {
      for (std::size_t l = 0; l < train.stages[s].size(); ++l) {
        const RepConvLayer& layer = train.stages[s][l];
        const RealTensor x = probe_input(rng, layer.cin);
        worst = std::max(worst, max_relative_deviation(apply_fused(fused.stages[s][l], x),
                                                       apply_training_form(layer, x)));
        if (p == 0) ++layers;
      }
    }
  }
  to_weight_file(fused).write(out);
  std::printf("fused %zu layers; max relative deviation over %d probes: %.6e\n", layers,
              kFuseProbes, worst);
  return kOk;
}

int cmd_gen_weights(const std::string& config, uint64_t seed, const std::string& form,
                    const std::string& init, const std::string& out) {
  const EngineConfig cfg = config_or_default(config);
  const TrainWeights w =
      gen_train_weights(cfg, seed, init == "identity" ? WeightInit::kIdentity : WeightInit::kRandom);
  if (form == "train") {
    to_weight_file(w).write(out);
  } else {
    to_weight_file(fuse_network(w)).write(out);
  }
  return kOk;
}

int cmd_gen_cloud(const std::string& config, uint64_t seed, const SceneParams& scene, int stride,
                  const std::string& out) {
  const EngineConfig cfg = config_or_default(config);
  write_binary_cloud(gen_cloud(cfg.grid, seed, scene), out, stride);
  return kOk;
}

int cmd_macs(const std::string& cloud, const std::string& config, bool json, int stride) {
  const EngineConfig cfg = config_or_default(config);
  std::vector<fs::path> files;
  const bool dir = fs::is_directory(cloud);
  if (dir) {
    files = cloud_files(cloud);
    if (files.empty()) throw IoError("no point clouds in " + cloud);
  } else {
    files.push_back(cloud);
  }
  std::vector<MacReport> reports;
  for (const fs::path& f : files) reports.push_back(count_macs_network(read_cloud(f, stride), cfg));

  bool pass = true;
  double sum_gmac = 0.0;
  for (const MacReport& r : reports) {
    pass = pass && r.within_budget();
    sum_gmac += r.gmac();
  }
  if (!dir) {
    std::cout << (json ? mac_report_json(reports[0]) : format_mac_table(reports[0]));
  } else if (json) {
    nlohmann::json root;
    root["clouds"] = nlohmann::json::array();
    for (std::size_t n = 0; n < files.size(); ++n) {
      root["clouds"].push_back({{"path", files[n].string()},
                                {"report", nlohmann::json::parse(mac_report_json(reports[n]))}});
    }
    root["mean_gmac"] = sum_gmac / static_cast<double>(reports.size());
    root["within_budget"] = pass;
    std::cout << root.dump(2) << "\n";
  } else {
    for (std::size_t n = 0; n < files.size(); ++n) {
      std::cout << "== " << files[n].string() << "\n" << format_mac_table(reports[n]);
    }
    std::printf("mean %.6f GMAC over %zu clouds: %s\n", sum_gmac / static_cast<double>(reports.size()),
                reports.size(), pass ? "PASS" : "FAIL");
  }
  return pass ? kOk : kOverBudget;
}

int cmd_calibrate(const std::string& weights, const std::string& clouds, const std::string& config,
                  const std::string& out, int stride) {
  const WeightFile wf = WeightFile::read(weights);
  const EngineConfig cfg = config.empty() ? config_from_weights(wf) : load_config(config);
  FusedWeights fused;
  switch (detect_form(wf)) {
    case WeightForm::kTraining: fused = fuse_network(read_train_weights(wf, cfg)); break;
    case WeightForm::kFused: fused = read_fused_weights(wf, cfg); break;
    case WeightForm::kQuantized:
      throw ParameterError("weights are already quantized");
  }
  const std::vector<fs::path> files = cloud_files(clouds);
  if (files.empty()) throw CalibrationError("no point clouds in " + clouds);
  std::vector<PointCloud> data;
  for (const fs::path& f : files) data.push_back(read_cloud(f, stride));
  to_weight_file(calibrate_model(fused, cfg, data)).write(out);
  std::fprintf(stderr, "calibrated on %zu clouds\n", data.size());
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Sparse INT8 LiDAR detection engine and analysis tools", "lift"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: LIFT_THREADS or all cores)")
      ->check(CLI::PositiveNumber);

  std::optional<int> code;

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "detect objects in one point cloud");
  infer->add_option("--weights", ia.weights)->required();
  infer->add_option("--cloud", ia.cloud)->required();
  infer->add_option("--config", ia.config, "JSON config (default: shapes from the weights)");
  infer->add_option("--out", ia.out, "JSON-lines detections")->required();
  auto* f_float = infer->add_flag("--float", ia.force_float, "real-valued path");
  auto* f_int8 = infer->add_flag("--int8", ia.force_int8, "integer path (int8 weights)");
  f_float->excludes(f_int8);
  infer->add_option("--stride", ia.stride, "floats per binary record")->check(CLI::IsMember({4, 5}));
  infer->callback([&] { code = cmd_infer(ia); });

  std::string fuse_in, fuse_out, fuse_cfg;
  auto* fuse = app.add_subcommand("fuse", "merge training-form branches into single kernels");
  fuse->add_option("--weights-train", fuse_in)->required();
  fuse->add_option("--out", fuse_out)->required();
  fuse->add_option("--config", fuse_cfg);
  fuse->callback([&] { code = cmd_fuse(fuse_in, fuse_out, fuse_cfg); });

  std::string gw_cfg, gw_form = "train", gw_init = "random", gw_out;
  uint64_t gw_seed = 0;
  auto* gen = app.add_subcommand("gen-weights", "write seeded pseudo-random weights");
  gen->add_option("--config", gw_cfg);
  gen->add_option("--seed", gw_seed);
  gen->add_option("--form", gw_form)->check(CLI::IsMember({"train", "fused"}));
  gen->add_option("--init", gw_init)->check(CLI::IsMember({"random", "identity"}));
  gen->add_option("--out", gw_out)->required();
  gen->callback([&] { code = cmd_gen_weights(gw_cfg, gw_seed, gw_form, gw_init, gw_out); });

  std::string gc_cfg, gc_out;
  uint64_t gc_seed = 0;
  int gc_stride = 4;
  SceneParams scene;
  auto* gcl = app.add_subcommand("gen-cloud", "write a seeded synthetic point cloud");
  gcl->add_option("--config", gc_cfg);
  gcl->add_option("--seed", gc_seed);
  gcl->add_option("--ground-points", scene.ground_points)->check(CLI::NonNegativeNumber);
  gcl->add_option("--objects", scene.objects)->check(CLI::NonNegativeNumber);
  gcl->add_option("--object-points", scene.points_per_object)->check(CLI::NonNegativeNumber);
  gcl->add_option("--stride", gc_stride)->check(CLI::IsMember({4, 5}));
  gcl->add_option("--out", gc_out)->required();
  gcl->callback([&] { code = cmd_gen_cloud(gc_cfg, gc_seed, scene, gc_stride, gc_out); });

  std::string mc_cloud, mc_cfg;
  bool mc_json = false;
  int mc_stride = 4;
  auto* macs = app.add_subcommand("macs", "count multiply-accumulates against the budget");
  macs->add_option("--cloud", mc_cloud, "cloud file or directory")->required();
  macs->add_option("--config", mc_cfg);
  macs->add_flag("--json", mc_json);
  macs->add_option("--stride", mc_stride)->check(CLI::IsMember({4, 5}));
  macs->callback([&] { code = cmd_macs(mc_cloud, mc_cfg, mc_json, mc_stride); });

  std::string ocm_dims, ocm_ctx;
  auto* ocm = app.add_subcommand("ocm", "Im2Col line-buffer size in cells");
  ocm->add_option("--dims", ocm_dims, "X,Y[,Z]")->required();
  ocm->add_option("--context", ocm_ctx, "KX,KY[,KZ]")->required();
  ocm->callback([&] {
    std::printf("%llu\n", static_cast<unsigned long long>(im2col_buffer_cells(
                              parse_list(ocm_dims, "--dims"), parse_list(ocm_ctx, "--context"))));
    code = kOk;
  });

  int64_t dpu_mpc = 2048;
  double dpu_clock = 300e6, dpu_rate = 10.0;
  auto* dpu = app.add_subcommand("dpu", "per-cloud MAC budget of an accelerator");
  dpu->add_option("--macs-per-cycle", dpu_mpc);
  dpu->add_option("--clock-hz", dpu_clock);
  dpu->add_option("--rate-hz", dpu_rate);
  dpu->callback([&] {
    std::printf("%.6f GMAC\n", dpu_budget(dpu_mpc, dpu_clock, dpu_rate) / 1e9);
    code = kOk;
  });

  std::string cal_w, cal_dir, cal_cfg, cal_out;
  int cal_stride = 4;
  auto* cal = app.add_subcommand("calibrate", "build an int8 weight file from float weights");
  cal->add_option("--weights", cal_w)->required();
  cal->add_option("--clouds", cal_dir)->required();
  cal->add_option("--config", cal_cfg);
  cal->add_option("--out", cal_out)->required();
  cal->add_option("--stride", cal_stride)->check(CLI::IsMember({4, 5}));
  cal->callback([&] { code = cmd_calibrate(cal_w, cal_dir, cal_cfg, cal_out, cal_stride); });

  // Threads must be set before any subcommand callback runs.
  app.parse_complete_callback([&] { apply_threads(threads); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kFailure;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return code.value_or(kOk);
}

}  // namespace lift::cli
