#include "lift/analysis.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "lift/network.hpp"

namespace lift {

uint64_t count_macs_layer(const Rulebook& rb, int cin, int cout) {
  return static_cast<uint64_t>(rb.pair_count()) * static_cast<uint64_t>(cin) *
         static_cast<uint64_t>(cout);
}

void MacReport::merge(const MacReport& other) {
  layers.insert(layers.end(), other.layers.begin(), other.layers.end());
  total += other.total;
}

MacReport count_macs_network(const PillarSet& pillars, const EngineConfig& cfg) {
  cfg.validate();
  const NetworkConfig& n = cfg.network;
  MacReport report;
  auto add = [&](std::string name, std::string kind, uint64_t taps, uint64_t macs) {
    report.layers.push_back({std::move(name), std::move(kind), taps, macs});
    report.total += macs;
  };
  auto add_rb = [&](std::string name, std::string kind, const Rulebook& rb, int cin, int cout) {
    add(std::move(name), std::move(kind), rb.pair_count(), count_macs_layer(rb, cin, cout));
  };

  const uint64_t points = pillars.point_count();
  add("encoder", "dbpfn", points,
      points * static_cast<uint64_t>(pillars.feature_dim) * static_cast<uint64_t>(n.encoder_half()));

  ActiveSetPtr cur = ActiveSet::make_sorted(pillars.width, pillars.height, pillars.coords);
  ActiveSetPtr s2;
  for (int s = 0; s < 4; ++s) {
    const int cout = n.stage_channels[static_cast<std::size_t>(s)];
    const Rulebook down = build_regular_rulebook(cur, 3, 2);
    add_rb(stage_layer_name(s, 0), "downsample", down, n.stage_input_channels(s), cout);
    cur = down.output;
    const int depth = n.stage_depths[static_cast<std::size_t>(s)];
    if (depth > 0) {
      const Rulebook subm = build_submanifold_rulebook(cur, 3);
      for (int l = 1; l <= depth; ++l) add_rb(stage_layer_name(s, l), "submanifold", subm, cout, cout);
    }
    if (s == 1) s2 = cur;
  }
  const Rulebook rb1 = build_submanifold_rulebook(s2, 1);
  const Rulebook rb3 = build_submanifold_rulebook(s2, 3);
  add_rb("align", "submanifold", rb1, n.stage_channels[1], n.align_channels);
  add_rb("head.heatmap.hidden", "submanifold", rb3, n.align_channels, n.head_channels);
  add_rb("head.heatmap.out", "submanifold", rb1, n.head_channels, n.num_classes);
  add_rb("head.regression.hidden", "submanifold", rb3, n.align_channels, n.head_channels);
  add_rb("head.regression.out", "submanifold", rb1, n.head_channels, kRegressionChannels);
  return report;
}

MacReport count_macs_network(const PointCloud& cloud, const EngineConfig& cfg) {
  return count_macs_network(pillarize(cloud, cfg.grid, cfg.features), cfg);
}

std::string format_mac_table(const MacReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-26s %-12s %14s %18s\n", "layer", "kind", "taps", "MAC");
  out += line;
  for (const LayerMacs& l : report.layers) {
    std::snprintf(line, sizeof line, "%-26s %-12s %14llu %18llu\n", l.name.c_str(), l.kind.c_str(),
                  static_cast<unsigned long long>(l.taps), static_cast<unsigned long long>(l.macs));
    out += line;
  }
  std::snprintf(line, sizeof line, "total %llu MAC = %.6f GMAC (budget %.2f GMAC): %s\n",
                static_cast<unsigned long long>(report.total), report.gmac(), report.budget / 1e9,
                report.within_budget() ? "PASS" : "FAIL");
  out += line;
  return out;
}

std::string mac_report_json(const MacReport& report) {
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerMacs& l : report.layers) {
    layers.push_back({{"name", l.name}, {"kind", l.kind}, {"taps", l.taps}, {"macs", l.macs}});
  }
  nlohmann::json root = {{"layers", layers},
                         {"total_macs", report.total},
                         {"total_gmac", report.gmac()},
                         {"budget_gmac", report.budget / 1e9},
                         {"within_budget", report.within_budget()}};
  return root.dump(2) + "\n";
}

uint64_t im2col_buffer_cells(const std::vector<int64_t>& dims,
                             const std::vector<int64_t>& context) {
  if (dims.size() != context.size() || (dims.size() != 2 && dims.size() != 3)) {
    throw ParameterError("dims and context must both have 2 or 3 entries");
  }
  for (std::size_t a = 0; a < dims.size(); ++a) {
    if (dims[a] <= 0 || context[a] <= 0) throw ParameterError("dims and context must be positive");
    if (context[a] % 2 == 0) throw ParameterError("context sizes must be odd");
  }
  const auto width = static_cast<uint64_t>(dims[0]);
  const auto kx = static_cast<uint64_t>(context[0]);
  const auto ky = static_cast<uint64_t>(context[1]);
  if (dims.size() == 2) return width * (ky - 1) + kx;
  const auto depth = static_cast<uint64_t>(dims[2]);
  const auto kz = static_cast<uint64_t>(context[2]);
  return depth * width * (ky - 1) + width * (kz - 1) + kx;
}

double dpu_budget(int64_t macs_per_cycle, double clock_hz, double cloud_rate_hz) {
  if (macs_per_cycle <= 0 || !(clock_hz > 0.0) || !(cloud_rate_hz > 0.0) ||
      !std::isfinite(clock_hz) || !std::isfinite(cloud_rate_hz)) {
    throw ParameterError("DPU parameters must be positive");
  }
  return static_cast<double>(macs_per_cycle) * clock_hz / cloud_rate_hz;
}

}  // namespace lift
