#include <regex>

#include "doctest.h"
#include "json.hpp"
#include "lift/config.hpp"
#include "lift/pcd_io.hpp"
#include "test_util.hpp"

using testutil::quote;
using testutil::run;
using testutil::TempDir;

namespace {

const std::string kLift = LIFT_CLI_PATH;

constexpr const char* kSmallConfig = R"({
  "grid": {"x_min": -9.6, "x_max": 9.6, "y_min": -9.6, "y_max": 9.6},
  "network": {"encoder_out": 16, "stage_channels": [8, 8, 16, 16], "stage_depths": [2, 2, 2, 2],
              "align_channels": 16, "head_channels": 8, "num_classes": 3}
})";

struct Workspace {
  TempDir dir;
  std::string cfg;
  Workspace() {
    testutil::write_text(dir / "small.json", kSmallConfig);
    cfg = quote(dir / "small.json");
  }
  std::string path(const std::string& name) const { return quote(dir / name); }
};

testutil::RunResult cli(const std::string& args) { return run(kLift + " " + args); }

}  // namespace

TEST_CASE("ocm prints the buffer sizes") {
  auto r = cli("ocm --dims 640,720,40 --context 3,3,3");
  CHECK(r.exit_code == 0);
  CHECK(r.output == "52483\n");
  r = cli("ocm --dims 640,720 --context 3,3");
  CHECK(r.exit_code == 0);
  CHECK(r.output == "1283\n");
  CHECK(cli("ocm --dims 640,720 --context 2,3").exit_code == 2);
  CHECK(cli("ocm --dims 640,x --context 3,3").exit_code == 2);
}

TEST_CASE("dpu prints the budget") {
  const auto r = cli("dpu --macs-per-cycle 2048 --clock-hz 300e6 --rate-hz 10");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("61.44") != std::string::npos);
  CHECK(cli("dpu --rate-hz 0").exit_code == 2);
}

TEST_CASE("usage errors") {
  CHECK(cli("").exit_code == 2);
  CHECK(cli("frobnicate").exit_code == 2);
  CHECK(cli("--help").exit_code == 0);
  CHECK(cli("infer --weights x").exit_code == 2);
}

TEST_CASE("gen-weights is deterministic per seed") {
  Workspace ws;
  REQUIRE(cli("gen-weights --config " + ws.cfg + " --seed 0 --out " + ws.path("a.lifw")).exit_code == 0);
  REQUIRE(cli("gen-weights --config " + ws.cfg + " --seed 0 --out " + ws.path("b.lifw")).exit_code == 0);
  REQUIRE(cli("gen-weights --config " + ws.cfg + " --seed 1 --out " + ws.path("c.lifw")).exit_code == 0);
  const std::string a = testutil::read_text(ws.dir / "a.lifw");
  CHECK(!a.empty());
  CHECK(a == testutil::read_text(ws.dir / "b.lifw"));
  CHECK(a != testutil::read_text(ws.dir / "c.lifw"));
}

TEST_CASE("fuse: random, identity and already-fused inputs") {
  Workspace ws;
  REQUIRE(cli("gen-weights --config " + ws.cfg + " --seed 3 --form train --out " + ws.path("t.lifw")).exit_code == 0);
  auto r = cli("fuse --weights-train " + ws.path("t.lifw") + " --out " + ws.path("f.lifw"));
  REQUIRE(r.exit_code == 0);
  std::smatch m;
  REQUIRE(std::regex_search(r.output, m, std::regex("deviation over 16 probes: ([0-9.eE+-]+)")));
  CHECK(std::stod(m[1]) <= 1e-4);

  REQUIRE(cli("gen-weights --config " + ws.cfg + " --seed 3 --init identity --out " + ws.path("i.lifw")).exit_code == 0);
  r = cli("fuse --weights-train " + ws.path("i.lifw") + " --out " + ws.path("fi.lifw"));
  REQUIRE(r.exit_code == 0);
  REQUIRE(std::regex_search(r.output, m, std::regex("deviation over 16 probes: ([0-9.eE+-]+)")));
  CHECK(std::stod(m[1]) == 0.0);

  r = cli("fuse --weights-train " + ws.path("f.lifw") + " --out " + ws.path("ff.lifw"));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("no branch tensors found") != std::string::npos);
}

TEST_CASE("infer: empty cloud, determinism, mismatched weights") {
  Workspace ws;
  REQUIRE(cli("gen-weights --config " + ws.cfg + " --seed 5 --form fused --out " + ws.path("w.lifw")).exit_code == 0);
  testutil::write_bytes(ws.dir / "empty.bin", {});
  auto r = cli("infer --weights " + ws.path("w.lifw") + " --cloud " + ws.path("empty.bin") + " --config " + ws.cfg +
                " --out " + ws.path("e.jsonl"));
  CHECK(r.exit_code == 0);
  CHECK(testutil::read_text(ws.dir / "e.jsonl").empty());

  REQUIRE(cli("gen-cloud --config " + ws.cfg + " --seed 2 --ground-points 800 --objects 4 --object-points 80 --out " +
               ws.path("c.bin")).exit_code == 0);
  for (const char* out : {"d1.jsonl", "d2.jsonl"}) {
    r = cli("infer --weights " + ws.path("w.lifw") + " --cloud " + ws.path("c.bin") + " --out " + ws.path(out));
    REQUIRE(r.exit_code == 0);
  }
  CHECK(r.output.find("stage") != std::string::npos);
  CHECK(r.output.find("ms") != std::string::npos);
  const std::string d1 = testutil::read_text(ws.dir / "d1.jsonl");
  CHECK(d1 == testutil::read_text(ws.dir / "d2.jsonl"));
  if (!d1.empty()) CHECK(nlohmann::json::parse(d1.substr(0, d1.find('\n'))).contains("class_name"));

  testutil::write_text(ws.dir / "other.json", R"({
    "grid": {"x_min": -9.6, "x_max": 9.6, "y_min": -9.6, "y_max": 9.6},
    "network": {"encoder_out": 16, "stage_channels": [8, 12, 16, 16], "stage_depths": [2, 2, 2, 2],
                "align_channels": 16, "head_channels": 8, "num_classes": 3}})");
  r = cli("infer --weights " + ws.path("w.lifw") + " --cloud " + ws.path("c.bin") + " --config " +
           ws.path("other.json") + " --out " + ws.path("x.jsonl"));
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("stage2.layer0.fused.weight") != std::string::npos);

  CHECK(cli("infer --weights " + ws.path("w.lifw") + " --cloud " + ws.path("c.bin") + " --int8 --out " +
             ws.path("x.jsonl")).exit_code == 2);
  CHECK(cli("infer --weights " + ws.path("missing.lifw") + " --cloud " + ws.path("c.bin") + " --out " +
             ws.path("x.jsonl")).exit_code == 2);
}

TEST_CASE("calibrate then infer on the int8 path") {
  Workspace ws;
  REQUIRE(cli("gen-weights --config " + ws.cfg + " --seed 7 --form fused --out " + ws.path("w.lifw")).exit_code == 0);
  testutil::fs::create_directories(ws.dir / "clouds");
  testutil::fs::create_directories(ws.dir / "none");
  REQUIRE(cli("gen-cloud --config " + ws.cfg + " --seed 1 --ground-points 600 --objects 3 --object-points 60 --out " +
               quote(ws.dir / "clouds" / "a.bin")).exit_code == 0);

  auto r = cli("calibrate --weights " + ws.path("w.lifw") + " --clouds " + ws.path("none") + " --out " + ws.path("q.lifw"));
  CHECK(r.exit_code == 2);

  for (const char* out : {"q.lifw", "q2.lifw"}) {
    r = cli("calibrate --weights " + ws.path("w.lifw") + " --clouds " + ws.path("clouds") + " --out " + ws.path(out));
    REQUIRE(r.exit_code == 0);
  }
  CHECK(testutil::read_text(ws.dir / "q.lifw") == testutil::read_text(ws.dir / "q2.lifw"));

  r = cli("infer --weights " + ws.path("q.lifw") + " --cloud " + quote(ws.dir / "clouds" / "a.bin") + " --out " +
           ws.path("d.jsonl"));
  CHECK(r.exit_code == 0);
  r = cli("infer --weights " + ws.path("q.lifw") + " --cloud " + quote(ws.dir / "clouds" / "a.bin") + " --float --out " +
           ws.path("d.jsonl"));
  CHECK(r.exit_code == 0);
}

TEST_CASE("macs: exit codes and JSON") {
  Workspace ws;
  testutil::write_bytes(ws.dir / "empty.bin", {});
  auto r = cli("macs --cloud " + ws.path("empty.bin"));
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("PASS") != std::string::npos);

  r = cli("macs --cloud " + ws.path("empty.bin") + " --json");
  CHECK(r.exit_code == 0);
  const auto j = nlohmann::json::parse(r.output);
  CHECK(j["total_macs"] == 0);
  CHECK(j["within_budget"] == true);

  // a full 720 x 720 grid exceeds the budget with the default network
  lift::PointCloud dense;
  for (int jj = 0; jj < 720; ++jj)
    for (int i = 0; i < 720; ++i)
      dense.points.push_back({static_cast<float>(-54 + 0.15 * (i + 0.5)), static_cast<float>(-54 + 0.15 * (jj + 0.5)), 0.0f, 1.0f});
  lift::write_binary_cloud(dense, ws.dir / "dense.bin", 4);
  r = cli("macs --cloud " + ws.path("dense.bin"));
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("FAIL") != std::string::npos);

  CHECK(cli("macs --cloud " + ws.path("missing.bin")).exit_code == 2);
}

TEST_CASE("threads flag and environment fallback keep outputs identical") {
  Workspace ws;
  REQUIRE(cli("gen-weights --config " + ws.cfg + " --seed 9 --form fused --out " + ws.path("w.lifw")).exit_code == 0);
  REQUIRE(cli("gen-cloud --config " + ws.cfg + " --seed 9 --ground-points 800 --out " + ws.path("c.bin")).exit_code == 0);
  REQUIRE(cli("--threads 1 infer --weights " + ws.path("w.lifw") + " --cloud " + ws.path("c.bin") + " --out " +
               ws.path("a.jsonl")).exit_code == 0);
  REQUIRE(run("LIFT_THREADS=6 " + kLift + " infer --weights " + ws.path("w.lifw") + " --cloud " + ws.path("c.bin") +
              " --out " + ws.path("b.jsonl")).exit_code == 0);
  CHECK(testutil::read_text(ws.dir / "a.jsonl") == testutil::read_text(ws.dir / "b.jsonl"));
}
