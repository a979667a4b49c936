#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "gridcause/io.hpp"
#include "gridcause/panel.hpp"
#include "gridcause/synth.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace gridcause;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(const std::string& args, const fs::path& dir, const std::string& env = "") {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && env -u GRIDCAUSE_SEED " + env + " " + GRIDCAUSE_CLI_PATH +
                          " " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(out);
  r.err = io::read_file(err);
  return r;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(io::read_file(p)); }

}  // namespace

TEST(CliSynth, DemoPanelShape) {
  auto dir = testsupport::temp_dir("cli_synth");
  auto r = run("synth --seed 3 --steps 500 --out a", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = io::read_file(dir / "a/panel.csv");
  const auto header = text.substr(0, text.find('\n'));
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 36);
  EXPECT_EQ(header.rfind("timestamp,Meter-01,", 0), 0u);
  EXPECT_EQ(load_panel(dir / "a/panel.csv").n_steps(), 500u);
  EXPECT_EQ(read_json(dir / "a/spec.json")["seed"], 3);
  EXPECT_EQ(read_json(dir / "a/synth.run.json")["seed"], 3);
}

TEST(CliSynth, SameSeedSameBytes) {
  auto dir = testsupport::temp_dir("cli_synth_repeat");
  ASSERT_EQ(run("synth --seed 4 --steps 300 --out a", dir).code, 0);
  ASSERT_EQ(run("synth --seed 4 --steps 300 --out b", dir).code, 0);
  ASSERT_EQ(run("synth --seed 5 --steps 300 --out c", dir).code, 0);
  EXPECT_EQ(io::fnv1a(io::read_file(dir / "a/panel.csv")), io::fnv1a(io::read_file(dir / "b/panel.csv")));
  EXPECT_NE(io::fnv1a(io::read_file(dir / "a/panel.csv")), io::fnv1a(io::read_file(dir / "c/panel.csv")));
  EXPECT_EQ(io::read_file(dir / "a/synth.run.json"), io::read_file(dir / "b/synth.run.json"));
}

TEST(CliSynth, UnstableSpecFails) {
  auto dir = testsupport::temp_dir("cli_unstable");
  io::write_file_atomic(dir / "bad.json",
                        R"({"n_nodes": 2, "n_steps": 100, "base_ar": [1.2, 0.1], "coupling_edges": []})");
  auto r = run("synth --spec bad.json --out a", dir);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("UnstableSpec"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "a/panel.csv"));
}

TEST(CliConfig, Precedence) {
  auto dir = testsupport::temp_dir("cli_precedence");
  io::write_file_atomic(dir / "cfg.json", R"({"seed": 5, "steps": 200})");
  ASSERT_EQ(run("synth --config cfg.json --out file", dir).code, 0);
  ASSERT_EQ(run("synth --config cfg.json --seed 6 --out flag", dir).code, 0);
  ASSERT_EQ(run("synth --steps 200 --out env", dir, "GRIDCAUSE_SEED=9").code, 0);
  ASSERT_EQ(run("synth --config cfg.json --out file_over_env", dir, "GRIDCAUSE_SEED=9").code, 0);
  EXPECT_EQ(read_json(dir / "file/spec.json")["seed"], 5);
  EXPECT_EQ(read_json(dir / "flag/spec.json")["seed"], 6);
  EXPECT_EQ(read_json(dir / "env/spec.json")["seed"], 9);
  EXPECT_EQ(read_json(dir / "file_over_env/spec.json")["seed"], 5);
  EXPECT_EQ(read_json(dir / "file/spec.json")["n_steps"], 200);
}

TEST(CliConfig, UnknownKeyAndBadEnv) {
  auto dir = testsupport::temp_dir("cli_badcfg");
  io::write_file_atomic(dir / "cfg.json", R"({"sed": 5})");
  auto r = run("synth --config cfg.json --out a", dir);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("sed"), std::string::npos);
  EXPECT_NE(run("synth --out b", dir, "GRIDCAUSE_SEED=abc").code, 0);
}

TEST(CliUsage, MissingSubcommandAndBadChoice) {
  auto dir = testsupport::temp_dir("cli_usage");
  EXPECT_EQ(run("", dir).code, 2);
  EXPECT_EQ(run("granger --criterion hqic", dir).code, 2);
  EXPECT_EQ(run("partition --activation sigmoid", dir).code, 2);
  EXPECT_EQ(run("synth --input x.csv --out a", dir).code, 2);
}

TEST(CliGranger, PlantedHubRankedFirst) {
  auto dir = testsupport::temp_dir("cli_hub");
  SynthSpec spec;
  spec.n_nodes = 6;
  spec.n_steps = 4000;
  spec.noise_sigma.assign(6, 1.0);
  spec.base_ar.assign(6, 0.2);
  for (std::size_t leaf = 0; leaf < 6; ++leaf)
    if (leaf != 3) spec.coupling_edges.push_back({3, leaf, 0.5, 1});
  io::write_file_atomic(dir / "hub.json", gridcause::to_json(spec).dump());
  auto r = run("granger --spec hub.json --seed 2 --out a", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "a/ranking.json")[0]["node"], "Meter-4");
  EXPECT_TRUE(read_json(dir / "a/ranking.json")[0]["vulnerable"].get<bool>());
  const auto edges = io::read_file(dir / "a/granger_edges.csv");
  EXPECT_EQ(edges.rfind("source,target,magnitude,p_value,significant\n", 0), 0u);
  EXPECT_NE(edges.find("Meter-4,Meter-1,"), std::string::npos);
  EXPECT_NE(io::read_file(dir / "a/causal.dot").find("\"Meter-4\" -> \"Meter-1\""), std::string::npos);
  EXPECT_EQ(read_json(dir / "a/granger.json")["mode"], "conditional");
}

TEST(CliGranger, NonStationaryNeedsForce) {
  auto dir = testsupport::temp_dir("cli_trend");
  auto p = testsupport::white_noise(3, 400, 1);
  Eigen::MatrixXd m = p.samples();
  for (Eigen::Index t = 0; t < m.rows(); ++t) m(t, 1) += 0.05 * static_cast<double>(t);
  save_panel(TimeSeriesPanel(p.node_ids(), m), dir / "trend.csv");
  auto r = run("granger --input trend.csv --out a", dir);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("non-stationary"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "a/granger_edges.csv"));
  auto forced = run("granger --input trend.csv --force --out a", dir);
  EXPECT_EQ(forced.code, 0) << forced.err;
  EXPECT_TRUE(read_json(dir / "a/granger.json")["forced"].get<bool>());
}

TEST(CliGranger, EmptyPanelIsUsageError) {
  auto dir = testsupport::temp_dir("cli_empty");
  io::write_file_atomic(dir / "empty.csv", "timestamp,a,b\n");
  auto r = run("granger --input empty.csv --out a", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("usage"), std::string::npos);
  io::write_file_atomic(dir / "blank.csv", "");
  EXPECT_EQ(run("granger --input blank.csv --out a", dir).code, 2);
}

TEST(CliGranger, RerunByteIdentical) {
  auto dir = testsupport::temp_dir("cli_granger_repeat");
  ASSERT_EQ(run("granger --spec planted --steps 2000 --seed 1 --out a", dir).code, 0);
  ASSERT_EQ(run("granger --spec planted --steps 2000 --seed 1 --threads 3 --out b", dir).code, 0);
  for (auto name : {"granger_edges.csv", "causal_matrix.json", "causal.dot", "ranking.json", "granger.json"})
    EXPECT_EQ(io::read_file(dir / "a" / name), io::read_file(dir / "b" / name)) << name;
}

TEST(CliPartition, TwoBlockDemoDefault) {
  auto dir = testsupport::temp_dir("cli_partition_default");
  auto r = run("partition --spec two-block --seed 1 --out a", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GE(read_json(dir / "a/partition.json")["accuracy"].get<double>(), 0.85);
}

TEST(CliPartition, TwoBlockDemoTanh) {
  auto dir = testsupport::temp_dir("cli_partition_tanh");
  auto r = run("partition --spec two-block --seed 1 --activation tanh --out a", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = read_json(dir / "a/partition.json");
  EXPECT_GE(j["accuracy"].get<double>(), 0.85);
  EXPECT_EQ(j["activation"], "tanh");
  EXPECT_EQ(j["log"].size(), 10u);
  const auto csv = io::read_file(dir / "a/partition.csv");
  EXPECT_EQ(csv.rfind("node_id,region\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 37);
  EXPECT_EQ(read_json(dir / "a/gcn_model.json")["weights"].size(), 5u);
}

TEST(CliPartition, SingleRegionTrivial) {
  auto dir = testsupport::temp_dir("cli_partition_k1");
  auto r = run("partition --spec two-block --steps 2000 --k-regions 1 --out a", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(dir / "a/partition.json")["accuracy"], 1.0);
  const auto csv = io::read_file(dir / "a/partition.csv");
  EXPECT_EQ(csv.find(",1\n"), std::string::npos);
}

TEST(CliPartition, MismatchedLabelIds) {
  auto dir = testsupport::temp_dir("cli_partition_ids");
  io::write_file_atomic(dir / "labels.csv", "node_id,region\nx,0\ny,1\n");
  auto r = run("partition --spec two-block --steps 1000 --labels labels.csv --out a", dir);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("UnknownNode"), std::string::npos) << r.err;
}

TEST(CliPercolate, LatticeSummary) {
  auto dir = testsupport::temp_dir("cli_lattice");
  auto r = run("percolate --lattice 24 --q 200 --seed 3 --out a", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = read_json(dir / "a/percolation.json");
  EXPECT_NEAR(j["occupied_threshold"].get<double>(), 0.5, 0.08);
  EXPECT_EQ(j["Q"], 200);
  EXPECT_EQ(j["seed"], 3);
  EXPECT_TRUE(r.err.empty()) << r.err;
  EXPECT_EQ(io::read_file(dir / "a/percolation.svg").rfind("<svg", 0), 0u);
}

TEST(CliPercolate, LowQWarns) {
  auto dir = testsupport::temp_dir("cli_lowq");
  auto r = run("percolate --lattice 8 --q 20 --out a", dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(CliPercolate, EmptyGraphFails) {
  auto dir = testsupport::temp_dir("cli_empty_graph");
  save_panel(testsupport::white_noise(4, 300, 1), dir / "noise.csv");
  auto r = run("percolate --input noise.csv --tau 0.99 --q 100 --out a", dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("EmptyGraph"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "a/percolation.csv"));
}

TEST(CliReport, MissingStageNamed) {
  auto dir = testsupport::temp_dir("cli_report_missing");
  auto r = run("report --out a", dir);
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("gridcause synth"), std::string::npos) << r.err;
  ASSERT_EQ(run("synth --steps 2000 --out a", dir).code, 0);
  r = run("report --steps 2000 --out a", dir);
  EXPECT_NE(r.err.find("gridcause granger"), std::string::npos) << r.err;
  ASSERT_EQ(run("granger --steps 2000 --out a", dir).code, 0);
  r = run("report --steps 2000 --out a", dir);
  EXPECT_NE(r.err.find("gridcause partition"), std::string::npos) << r.err;
}

// Default demo sizes: 36 nodes, 10000 samples, Q = 1000.
TEST(CliReport, FullDemoUnderFiveMinutes) {
  auto dir = testsupport::temp_dir("cli_report_full");
  const auto start = std::chrono::steady_clock::now();
  for (auto cmd : {"synth", "granger", "partition", "report"}) {
    auto r = run(std::string(cmd) + " --seed 11 --activation tanh --out a", dir);
    ASSERT_EQ(r.code, 0) << cmd << ": " << r.err;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 300.0);
  const auto md = io::read_file(dir / "a/report.md");
  const auto manifest = read_json(dir / "a/report.run.json");
  EXPECT_NE(md.find(manifest["config_hash"].get<std::string>()), std::string::npos);
  EXPECT_NE(md.find("| Region-1 | Without DERs |"), std::string::npos);
  EXPECT_NE(md.find("DERs at vulnerable nodes"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "a/causal_before.dot"));
  EXPECT_TRUE(fs::exists(dir / "a/causal_after.dot"));
  EXPECT_TRUE(fs::exists(dir / "a/percolation_region1.svg"));
  EXPECT_EQ(read_json(dir / "a/vulnerability.json").size(), 2u);
  for (const auto& entry : fs::directory_iterator(dir / "a"))
    EXPECT_EQ(entry.path().string().find(".tmp"), std::string::npos) << entry.path();

  const auto first = io::read_file(dir / "a/report.md");
  ASSERT_EQ(run("report --seed 11 --activation tanh --out a", dir).code, 0);
  EXPECT_EQ(io::read_file(dir / "a/report.md"), first);
}
