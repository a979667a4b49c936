#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridcause/error.hpp"
#include "gridcause/granger.hpp"
#include "gridcause/io.hpp"
#include "gridcause/netgraph.hpp"
#include "gridcause/panel.hpp"
#include "gridcause/partition.hpp"
#include "gridcause/percolation.hpp"
#include "gridcause/svg.hpp"
#include "gridcause/synth.hpp"
#include "gridcause/vulnerability.hpp"

namespace gridcause::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNonStationary = 3;

/// Resolved settings for one command. Exactly one panel source is active:
/// `input` (a CSV file) or a synthetic spec (`spec_json`, else the builtin
/// named by `spec_name`).
struct RunConfig {
  std::optional<std::string> input;
  std::optional<nlohmann::json> spec_json;
  std::string spec_name = "demo";
  std::size_t steps = 10000;
  double der_gamma = 0.2;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  double tau = 0.0;
  std::optional<std::size_t> lag;
  std::size_t max_lag = 5;
  LagCriterion criterion = LagCriterion::bic;
  std::size_t k_regions = 2;
  std::size_t k_vulnerable = 4;
  std::size_t q = 1000;
  Activation activation = Activation::relu;
  bool difference = false;
  std::size_t threads = 1;
  std::string out = "out";
  std::optional<std::size_t> lattice;
  std::optional<std::string> labels;
  bool force = false;
};

/// Everything that can change a data output; `out`, `threads` and `force` cannot.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["input"] = c.input ? nlohmann::json(*c.input) : nlohmann::json(nullptr);
  j["spec"] = c.spec_json ? *c.spec_json : nlohmann::json(c.spec_name);
  j["steps"] = c.steps;
  j["der_gamma"] = c.der_gamma;
  j["seed"] = c.seed;
  j["alpha"] = c.alpha;
  j["tau"] = c.tau;
  j["lag"] = c.lag ? nlohmann::json(*c.lag) : nlohmann::json(nullptr);
  j["max_lag"] = c.max_lag;
  j["criterion"] = std::string(to_string(c.criterion));
  j["k_regions"] = c.k_regions;
  j["k_vulnerable"] = c.k_vulnerable;
  j["q"] = c.q;
  j["activation"] = std::string(to_string(c.activation));
  j["difference"] = c.difference;
  j["lattice"] = c.lattice ? nlohmann::json(*c.lattice) : nlohmann::json(nullptr);
  j["labels"] = c.labels ? nlohmann::json(*c.labels) : nlohmann::json(nullptr);
  return j;
}

inline std::string config_hash(const RunConfig& c) { return io::hex64(io::fnv1a(to_json(c).dump())); }

namespace detail {

template <class T>
T json_get(const nlohmann::json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::InvalidArgument, std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

/// Applies a JSON config file on top of `c`. Unknown keys are rejected.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  static const std::set<std::string> known{"input", "spec", "steps", "der_gamma", "seed", "alpha", "tau", "lag",
                                           "max_lag", "criterion", "k_regions", "k_vulnerable", "q", "activation",
                                           "difference", "threads", "out", "lattice", "labels", "force"};
  if (!j.is_object()) throw Error(ErrorKind::InvalidArgument, "config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw Error(ErrorKind::InvalidArgument, "unknown config key '" + key + "'");
  using detail::json_get;
  if (j.contains("input")) c.input = json_get<std::string>(j, "input");
  if (j.contains("spec")) {
    if (j["spec"].is_object())
      c.spec_json = j["spec"];
    else
      c.spec_name = json_get<std::string>(j, "spec");
  }
  if (j.contains("steps")) c.steps = json_get<std::size_t>(j, "steps");
  if (j.contains("der_gamma")) c.der_gamma = json_get<double>(j, "der_gamma");
  if (j.contains("seed")) c.seed = json_get<std::uint64_t>(j, "seed");
  if (j.contains("alpha")) c.alpha = json_get<double>(j, "alpha");
  if (j.contains("tau")) c.tau = json_get<double>(j, "tau");
  if (j.contains("lag")) c.lag = json_get<std::size_t>(j, "lag");
  if (j.contains("max_lag")) c.max_lag = json_get<std::size_t>(j, "max_lag");
  if (j.contains("criterion")) c.criterion = parse_lag_criterion(json_get<std::string>(j, "criterion"));
  if (j.contains("k_regions")) c.k_regions = json_get<std::size_t>(j, "k_regions");
  if (j.contains("k_vulnerable")) c.k_vulnerable = json_get<std::size_t>(j, "k_vulnerable");
  if (j.contains("q")) c.q = json_get<std::size_t>(j, "q");
  if (j.contains("activation")) c.activation = parse_activation(json_get<std::string>(j, "activation"));
  if (j.contains("difference")) c.difference = json_get<bool>(j, "difference");
  if (j.contains("threads")) c.threads = json_get<std::size_t>(j, "threads");
  if (j.contains("out")) c.out = json_get<std::string>(j, "out");
  if (j.contains("lattice")) c.lattice = json_get<std::size_t>(j, "lattice");
  if (j.contains("labels")) c.labels = json_get<std::string>(j, "labels");
  if (j.contains("force")) c.force = json_get<bool>(j, "force");
}

inline std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("GRIDCAUSE_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument(v);
    return s;
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, std::string("GRIDCAUSE_SEED is not an unsigned integer: '") + v + "'");
  }
}

// Panel and spec sources.

inline bool is_builtin_spec(const std::string& name) { return name == "demo" || name == "two-block" || name == "planted"; }

inline SynthSpec resolve_spec(const RunConfig& c) {
  SynthSpec spec;
  if (c.spec_json) {
    spec = synth_spec_from_json(*c.spec_json);
    spec.seed = c.seed;
  } else if (c.spec_name == "demo") {
    spec = demo_spec(c.seed, c.steps, c.der_gamma);
  } else if (c.spec_name == "two-block") {
    spec = two_block_spec(c.seed, 18, c.steps);
    spec.der_gamma = c.der_gamma;
  } else if (c.spec_name == "planted") {
    spec = planted_region_spec(c.seed, 16, 4, 4, c.steps);
    spec.der_gamma = c.der_gamma;
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown builtin spec '" + c.spec_name + "' (demo, two-block, planted)");
  }
  return spec;
}

/// Reads --spec: a builtin name or a path to a SynthSpec JSON file.
inline void apply_spec_argument(RunConfig& c, const std::string& arg) {
  if (is_builtin_spec(arg)) {
    c.spec_name = arg;
    c.spec_json.reset();
    return;
  }
  if (!fs::exists(arg)) throw Error(ErrorKind::IoError, "spec file not found: " + arg);
  try {
    c.spec_json = nlohmann::json::parse(io::read_file(arg));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, arg + ": " + e.what());
  }
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline TimeSeriesPanel panel_from(const RunConfig& c) {
  TimeSeriesPanel panel;
  if (c.input) {
    try {
      panel = load_panel(*c.input);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::TooShort) throw UsageError("input panel '" + *c.input + "' is empty");
      throw;
    }
  } else {
    panel = synthesize(resolve_spec(c));
  }
  if (panel.n_steps() == 0 || panel.n_nodes() == 0) throw UsageError("input panel has no samples");
  return panel;
}

inline TimeSeriesPanel correlation_panel(const RunConfig& c, const TimeSeriesPanel& panel) {
  return c.difference ? difference(panel, 1) : panel;
}

inline LagPolicy lag_policy(const RunConfig& c) {
  if (c.lag) return LagPolicy::fixed_lag(*c.lag);
  LagPolicy p;
  p.max_lag = c.max_lag;
  p.criterion = c.criterion;
  return p;
}

inline GcMatrixOptions gc_options(const RunConfig& c) {
  GcMatrixOptions o;
  o.alpha = c.alpha;
  o.threads = c.threads;
  return o;
}

inline PercolationOptions percolation_options(const RunConfig& c) {
  PercolationOptions o;
  o.q_realizations = c.q;
  o.seed = c.seed;
  o.threads = c.threads;
  return o;
}

/// Writes atomically and records the file's hash for the run manifest.
class OutputSet {
 public:
  OutputSet(fs::path dir, std::ostream& log) : dir_(std::move(dir)), log_(log) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& content) {
    io::write_file_atomic(dir_ / name, content);
    hashes_[name] = io::hex64(io::fnv1a(content));
    log_ << "wrote " << (dir_ / name).string() << "\n";
  }
  void write_json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

  /// `<command>.run.json`: command, resolved config, its hash, and output hashes.
  void manifest(const std::string& command, const RunConfig& c) {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = to_json(c);
    j["config_hash"] = config_hash(c);
    j["seed"] = c.seed;
    j["outputs"] = hashes_;
    write_json(command + ".run.json", j);
  }

  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  std::ostream& log_;
  std::map<std::string, std::string> hashes_;
};

/// Reads an upstream artifact or fails naming the stage that produces it.
inline std::string require_artifact(const fs::path& dir, const std::string& name, const std::string& stage) {
  const auto path = dir / name;
  if (!fs::exists(path))
    throw Error(ErrorKind::IoError, "missing " + path.string() + "; run `gridcause " + stage + "` with the same --out first");
  return io::read_file(path);
}

/// Rebuilds a causal graph from `source,target,magnitude,p_value,significant` rows.
inline CausalGraph parse_causal_edges_csv(std::string_view text, const std::vector<std::string>& nodes) {
  const auto n = static_cast<Eigen::Index>(nodes.size());
  CausalGraph g;
  g.nodes = nodes;
  g.weights = Eigen::MatrixXd::Zero(n, n);
  g.magnitude = Eigen::MatrixXd::Zero(n, n);
  g.p_value = Eigen::MatrixXd::Ones(n, n);
  g.f_stat = Eigen::MatrixXd::Zero(n, n);
  std::map<std::string, Eigen::Index> index;
  for (Eigen::Index i = 0; i < n; ++i) index[nodes[static_cast<std::size_t>(i)]] = i;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    auto line = text.substr(start, pos == std::string_view::npos ? text.npos : pos - start);
    start = pos == std::string_view::npos ? text.size() : pos + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    auto f = io::split_csv_line(line);
    if (f.size() != 5) throw Error(ErrorKind::RaggedRows, "causal edge rows need 5 fields");
    auto s = index.find(f[0]), t = index.find(f[1]);
    if (s == index.end() || t == index.end())
      throw Error(ErrorKind::UnknownNode, "causal edge " + f[0] + " -> " + f[1] + " names a node not in the panel");
    auto mag = io::parse_double(f[2]), p = io::parse_double(f[3]);
    if (!mag || !p) throw Error(ErrorKind::UnparseableNumber, "causal edge " + f[0] + " -> " + f[1]);
    g.magnitude(s->second, t->second) = *mag;
    g.p_value(s->second, t->second) = *p;
    if (f[4] == "true") g.weights(s->second, t->second) = *mag;
  }
  return g;
}

// Commands. Each returns an exit code; library errors propagate to run().

inline int cmd_synth(const RunConfig& c, std::ostream& log) {
  if (c.input) throw UsageError("synth generates a panel from a spec; --input does not apply");
  const SynthSpec spec = resolve_spec(c);
  const TimeSeriesPanel panel = synthesize(spec);
  OutputSet out(c.out, log);
  out.write("panel.csv", format_panel_csv(panel));
  out.write_json("spec.json", gridcause::to_json(spec));
  out.manifest("synth", c);
  return kExitOk;
}

inline int cmd_granger(const RunConfig& c, std::ostream& log, std::ostream& err) {
  const TimeSeriesPanel panel = panel_from(c);
  if (panel.n_nodes() < 2) throw UsageError("granger needs at least two node columns");
  const auto reports = stationarity_check(panel);
  nlohmann::json stationarity = nlohmann::json::array();
  bool all_ok = true;
  for (const auto& r : reports) {
    stationarity.push_back({{"node", r.node}, {"stationary", r.stationary}, {"detail", r.detail}});
    if (!r.stationary) {
      all_ok = false;
      err << "non-stationary: " << r.node << " (" << r.detail << ")\n";
    }
  }
  if (!all_ok && !c.force) {
    err << "error: stationarity check failed; difference the input or pass --force\n";
    return kExitNonStationary;
  }
  const GcMode mode = default_gc_mode(panel.n_nodes());
  const CausalGraph g = gc_matrix(panel, lag_policy(c), mode, gc_options(c));
  const auto ranking = rank_vulnerable(g, std::min(c.k_vulnerable, g.n()));

  OutputSet out(c.out, log);
  out.write("granger_edges.csv", causal_edges_csv(g));
  out.write_json("causal_matrix.json", causal_matrix_json(g));
  out.write("causal.dot", format_dot(g));
  out.write_json("ranking.json", gridcause::to_json(ranking));
  out.write_json("granger.json", {{"lag", g.lag},
                                  {"mode", std::string(to_string(mode))},
                                  {"alpha", g.alpha},
                                  {"alpha_corrected", g.alpha_corrected},
                                  {"magnitude_floor", g.magnitude_floor},
                                  {"n_nodes", g.n()},
                                  {"n_edges", g.edge_count()},
                                  {"seed", c.seed},
                                  {"forced", !all_ok},
                                  {"stationarity", stationarity}});
  out.manifest("granger", c);
  log << "lag " << g.lag << ", " << g.edge_count() << " significant edges; top node " << ranking.ranked.front().node
      << "\n";
  return kExitOk;
}

inline int cmd_partition(const RunConfig& c, std::ostream& log) {
  const TimeSeriesPanel panel = correlation_panel(c, panel_from(c));
  std::optional<Partition> given;
  if (c.labels) {
    if (!fs::exists(*c.labels)) throw Error(ErrorKind::IoError, "labels file not found: " + *c.labels);
    given = parse_partition_csv(io::read_file(*c.labels));
  }
  PipelineOptions opts;
  opts.tau = c.tau;
  opts.gcn.activation = c.activation;
  opts.gcn.seed = c.seed;
  const auto res = partition_pipeline(panel, c.k_regions, opts, given ? &*given : nullptr);

  nlohmann::json log_json = nlohmann::json::array();
  for (const auto& e : res.training.log)
    log_json.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"test_accuracy", e.test_accuracy}});
  OutputSet out(c.out, log);
  out.write("partition.csv", partition_csv(res.gcn));
  out.write("community.csv", partition_csv(res.community));
  out.write_json("gcn_model.json", gridcause::to_json(res.training.model));
  out.write_json("partition.json", {{"accuracy", res.accuracy},
                                    {"train_accuracy", res.training.train_accuracy},
                                    {"k_regions", res.community.n_regions},
                                    {"community_modularity", res.community.modularity},
                                    {"gcn_modularity", res.gcn.modularity},
                                    {"gcn_regions", res.gcn.n_regions},
                                    {"activation", std::string(to_string(c.activation))},
                                    {"labels_source", given ? "file" : "community"},
                                    {"train_size", res.split.train.size()},
                                    {"test_size", res.split.test.size()},
                                    {"tau", c.tau},
                                    {"seed", c.seed},
                                    {"log", log_json}});
  out.manifest("partition", c);
  log << "GCN held-out accuracy " << io::format_fixed(res.accuracy, 4) << " against " << res.community.n_regions
      << " community regions (modularity " << io::format_fixed(res.community.modularity, 4) << ")\n";
  return kExitOk;
}

inline int cmd_percolate(const RunConfig& c, std::ostream& log, std::ostream& err) {
  if (c.q < 100) err << "warning: Q = " << c.q << " is below 100; the threshold estimate is noisy\n";
  EdgeList graph;
  std::string source;
  if (c.lattice) {
    graph = square_lattice(*c.lattice);
    source = "lattice " + std::to_string(*c.lattice) + "x" + std::to_string(*c.lattice);
  } else {
    graph = edge_list(build_corr_graph(correlation_panel(c, panel_from(c)), c.tau));
    source = "correlation graph";
  }
  const auto curve = percolate(graph, percolation_options(c));
  auto summary = curve_summary_json(curve);
  summary["source"] = source;
  summary["tau"] = c.tau;
  OutputSet out(c.out, log);
  out.write("percolation.csv", curve_csv(curve));
  out.write_json("percolation.json", summary);
  out.write("percolation.svg", svg::percolation_chart("Bond percolation, " + source, curve));
  out.manifest("percolate", c);
  log << "rho_c " << io::format_fixed(curve.rho_c, 5) << " (occupied fraction "
      << io::format_fixed(curve.occupied_threshold(), 5) << ")\n";
  return kExitOk;
}

namespace detail {

inline std::vector<std::string> random_placement(const std::vector<std::string>& members, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::string> pool = members;
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(k, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::string join(const std::vector<std::string>& v, const std::string& sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

}  // namespace detail

/// Assembles the report from the synth, granger and partition artifacts in the
/// output directory. With a synthetic spec, DER what-if runs compare placement
/// at each region's vulnerable nodes against a random placement of equal size.
inline int cmd_report(const RunConfig& c, std::ostream& log) {
  const fs::path dir = c.out;
  TimeSeriesPanel panel;
  std::optional<SynthSpec> spec;
  if (c.input) {
    panel = panel_from(c);
  } else {
    panel = parse_panel_csv(require_artifact(dir, "panel.csv", "synth"));
    spec = synth_spec_from_json(nlohmann::json::parse(require_artifact(dir, "spec.json", "synth")));
  }
  const CausalGraph causal = parse_causal_edges_csv(require_artifact(dir, "granger_edges.csv", "granger"), panel.node_ids());
  Partition regions = parse_partition_csv(require_artifact(dir, "partition.csv", "partition"));
  std::string region_note;
  if (regions.n_regions < c.k_regions) {
    const auto community = parse_partition_csv(require_artifact(dir, "community.csv", "partition"));
    region_note = "GCN predictions collapsed to " + std::to_string(regions.n_regions) +
                  " region(s); the regions below are the modularity communities it was trained on.\n\n";
    regions = community;
  }
  if (regions.nodes != panel.node_ids())
    throw Error(ErrorKind::UnknownNode, "partition.csv node ids do not match the panel; rerun `gridcause partition`");
  std::optional<nlohmann::json> partition_summary;
  if (fs::exists(dir / "partition.json")) partition_summary = nlohmann::json::parse(io::read_file(dir / "partition.json"));

  struct RegionPlan {
    std::vector<std::size_t> members;
    std::vector<std::string> ids;
    VulnerabilityRanking ranking;
    std::vector<std::string> random;
  };
  std::vector<RegionPlan> plans;
  std::vector<std::string> all_vulnerable, all_random;
  std::mt19937_64 rng(c.seed);
  for (std::size_t r = 0; r < regions.n_regions; ++r) {
    RegionPlan plan;
    plan.members = regions.members(r);
    for (auto m : plan.members) plan.ids.push_back(panel.node_ids()[m]);
    plan.ranking = rank_vulnerable(induced_subgraph(causal, plan.members), std::min(c.k_vulnerable, plan.members.size()));
    plan.random = detail::random_placement(plan.ids, plan.ranking.k_selected, rng);
    for (const auto& v : plan.ranking.vulnerable()) all_vulnerable.push_back(v);
    for (const auto& v : plan.random) all_random.push_back(v);
    plans.push_back(std::move(plan));
  }

  OutputSet out(c.out, log);
  std::string md = "# Grid causality report\n\n";
  md += "Config hash `" + config_hash(c) + "`, seed " + std::to_string(c.seed) + ".\n\n";
  md += "Panel: " + std::to_string(panel.n_nodes()) + " nodes, " + std::to_string(panel.n_steps()) + " samples, source " +
        (c.input ? "`" + *c.input + "`" : std::string("synthetic spec")) + ".\n\n";

  md += "## Regions\n\n" + region_note + "| Region | Nodes |\n|---|---|\n";
  for (std::size_t r = 0; r < plans.size(); ++r)
    md += "| Region-" + std::to_string(r + 1) + " | " + detail::join(plans[r].ids) + " |\n";
  if (partition_summary)
    md += "\nGCN held-out accuracy " + io::format_fixed(partition_summary->value("accuracy", 0.0), 4) +
          " against modularity communities (" + partition_summary->value("activation", std::string("?")) +
          " activation).\n";

  md += "\n## Vulnerable nodes\n\nNodes ranked by causal out-strength inside their region.\n\n";
  md += "| Region | Node | Out-strength | Out-degree |\n|---|---|---|---|\n";
  for (std::size_t r = 0; r < plans.size(); ++r)
    for (std::size_t i = 0; i < plans[r].ranking.k_selected; ++i) {
      const auto& n = plans[r].ranking.ranked[i];
      md += "| Region-" + std::to_string(r + 1) + " | " + n.node + " | " + io::format_fixed(n.out_strength, 4) + " | " +
            std::to_string(n.out_degree) + " |\n";
    }

  md += "\n## Causal graphs\n\n";
  md += "Before DER placement: " + std::to_string(causal.edge_count()) + " significant edges (`causal_before.dot`).\n";
  out.write("causal_before.dot", format_dot(causal));

  nlohmann::json vuln = nlohmann::json::array();
  md += "\n## Percolation thresholds\n\n";
  if (spec) {
    const auto vul_run = der_whatif(*spec, all_vulnerable);
    const auto rnd_run = der_whatif(*spec, all_random);
    const CausalGraph after = gc_matrix(vul_run.panel_after, lag_policy(c), default_gc_mode(panel.n_nodes()), gc_options(c));
    out.write("causal_after.dot", format_dot(after));
    md.insert(md.find("\n## Percolation thresholds"),
              "After DER placement at the vulnerable nodes (gamma " + io::format_fixed(spec->der_gamma, 2) +
                  "): " + std::to_string(after.edge_count()) + " significant edges (`causal_after.dot`).\n");
    md += "Removal-fraction threshold rho_c at the susceptibility peak; the occupied fraction is 1 - rho_c. Q = " +
          std::to_string(c.q) + ", tau = " + io::format_fixed(c.tau, 2) + ".\n\n";
    for (std::size_t r = 0; r < plans.size(); ++r) {
      const std::string region = "Region-" + std::to_string(r + 1);
      // One fraction grid for all three graphs, whose edge counts differ.
      auto opts = percolation_options(c);
      opts.removal_fractions = uniform_fraction_grid(201);
      auto curve_of = [&](const TimeSeriesPanel& p) {
        return percolate(edge_list(build_corr_graph(correlation_panel(c, p.select(plans[r].members)), c.tau)), opts);
      };
      try {
        const auto before = curve_of(vul_run.panel_before);
        const auto random = curve_of(rnd_run.panel_after);
        const auto vulnerable = curve_of(vul_run.panel_after);
        const auto rep = compare_resilience(
            {{"Without DERs", before}, {"DERs at random nodes", random}, {"DERs at vulnerable nodes", vulnerable}});
        md += format_resilience_table(rep, region) + "\n";
        out.write("percolation_region" + std::to_string(r + 1) + ".svg",
                  svg::line_chart(region + " percolation strength", "fraction of edges removed",
                                  {{"without DERs", before.removal_fractions, before.strength, "#1f77b4"},
                                   {"DERs at random nodes", random.removal_fractions, random.strength, "#ff7f0e"},
                                   {"DERs at vulnerable nodes", vulnerable.removal_fractions, vulnerable.strength, "#2ca02c"}},
                                  {{before.rho_c, "before"}, {vulnerable.rho_c, "vulnerable"}}));
        ResilienceDelta delta;
        delta.rho_before = before.rho_c;
        delta.rho_after = vulnerable.rho_c;
        delta.pct_change = pct_change(before.rho_c, vulnerable.rho_c);
        auto j = vulnerability_report_json(plans[r].ranking,
                                           {{"vulnerable", plans[r].ranking.vulnerable()}, {"random", plans[r].random}}, delta);
        j["region"] = region;
        j["rho_random"] = random.rho_c;
        vuln.push_back(j);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::EmptyGraph) throw;
        md += region + ": correlation graph has no edges at tau " + io::format_fixed(c.tau, 2) + "; no threshold.\n\n";
      }
    }
  } else {
    md += "DER what-if runs need a synthetic spec; only the measured panel's thresholds are shown.\n\n";
    for (std::size_t r = 0; r < plans.size(); ++r) {
      const std::string region = "Region-" + std::to_string(r + 1);
      try {
        const auto curve =
            percolate(edge_list(build_corr_graph(correlation_panel(c, panel.select(plans[r].members)), c.tau)),
                      percolation_options(c));
        ResilienceReport rep;
        rep.rows.push_back({"Measured", curve.rho_c, curve.occupied_threshold()});
        md += format_resilience_table(rep, region) + "\n";
        auto j = gridcause::to_json(plans[r].ranking);
        vuln.push_back({{"region", region}, {"ranking", j}, {"rho", curve.rho_c}});
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::EmptyGraph) throw;
        md += region + ": correlation graph has no edges; no threshold.\n\n";
      }
    }
  }
  out.write_json("vulnerability.json", vuln);
  md += "## Files\n\n`causal_before.dot`, `causal_after.dot` and the region SVG charts sit next to this report. "
        "Render DOT with `dot -Tsvg`.\n";
  out.write("report.md", md);
  out.manifest("report", c);
  return kExitOk;
}

/// Parses arguments and dispatches. Precedence: flags, then the --config file,
/// then GRIDCAUSE_SEED for the seed, then defaults.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Causal vulnerability, microgrid partitioning and percolation resilience for load panels", "gridcause"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, spec, input, out, criterion, activation, labels;
    std::uint64_t seed = 0;
    double alpha = 0, tau = 0, der_gamma = 0;
    std::size_t lag = 0, max_lag = 0, k_regions = 0, k_vulnerable = 0, q = 0, threads = 0, steps = 0, lattice = 0;
    bool force = false, difference = false;
  } f;
  std::map<std::string, CLI::Option*> given;

  auto add_common = [&](CLI::App* sub) {
    std::map<std::string, CLI::Option*> opts;
    opts["config"] = sub->add_option("--config", f.config, "JSON config file");
    opts["seed"] = sub->add_option("--seed", f.seed, "random seed (fallback: GRIDCAUSE_SEED)");
    opts["input"] = sub->add_option("--input", f.input, "panel CSV: timestamp column then one column per node");
    opts["spec"] = sub->add_option("--spec", f.spec, "synthetic spec: demo, two-block, planted, or a JSON file");
    opts["steps"] = sub->add_option("--steps", f.steps, "samples for builtin specs");
    opts["der_gamma"] = sub->add_option("--der-gamma", f.der_gamma, "coupling attenuation at DER nodes for builtin specs");
    opts["alpha"] = sub->add_option("--alpha", f.alpha, "significance level before Bonferroni correction");
    opts["tau"] = sub->add_option("--tau", f.tau, "correlation threshold for the undirected graph");
    opts["lag"] = sub->add_option("--lag", f.lag, "fixed VAR lag (skips selection)");
    opts["max_lag"] = sub->add_option("--max-lag", f.max_lag, "largest lag considered by selection");
    opts["criterion"] = sub->add_option("--criterion", f.criterion, "lag selection criterion")
                            ->check(CLI::IsMember({"aic", "bic"}));
    opts["k_regions"] = sub->add_option("--k-regions", f.k_regions, "number of regions");
    opts["k_vulnerable"] = sub->add_option("--k-vulnerable", f.k_vulnerable, "vulnerable nodes per region");
    opts["q"] = sub->add_option("--q", f.q, "percolation realizations");
    opts["activation"] = sub->add_option("--activation", f.activation, "GCN hidden activation")
                             ->check(CLI::IsMember({"relu", "tanh"}));
    opts["threads"] = sub->add_option("--threads", f.threads, "worker cap (0 = hardware)");
    opts["out"] = sub->add_option("--out", f.out, "output directory");
    opts["difference"] = sub->add_flag("--difference", f.difference, "build correlation graphs from first differences");
    opts["force"] = sub->add_flag("--force", f.force, "continue past a failed stationarity check");
    opts["labels"] = sub->add_option("--labels", f.labels, "partition CSV used as GCN training labels");
    opts["lattice"] = sub->add_option("--lattice", f.lattice, "percolate a SIDE x SIDE square lattice instead");
    return opts;
  };

  std::map<CLI::App*, std::map<std::string, CLI::Option*>> per_sub;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"synth", "generate a synthetic panel and its spec"},
           {"granger", "conditional Granger causality graph and vulnerability ranking"},
           {"partition", "community labels and GCN region classifier"},
           {"percolate", "bond percolation curve and threshold"},
           {"report", "markdown report with DER what-if comparison"}}) {
    auto* sub = app.add_subcommand(name, help);
    per_sub[sub] = add_common(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, log, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  given = per_sub[chosen];
  auto set = [&](const char* key) { return given.at(key)->count() > 0; };

  try {
    RunConfig c;
    if (auto env = seed_from_env()) c.seed = *env;
    if (set("config")) {
      if (!fs::exists(f.config)) throw Error(ErrorKind::IoError, "config file not found: " + f.config);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(io::read_file(f.config));
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidArgument, f.config + ": " + e.what());
      }
      apply_config_json(c, j);
    }
    if (set("seed")) c.seed = f.seed;
    if (set("input")) c.input = f.input;
    if (set("spec")) apply_spec_argument(c, f.spec);
    if (set("steps")) c.steps = f.steps;
    if (set("der_gamma")) c.der_gamma = f.der_gamma;
    if (set("alpha")) c.alpha = f.alpha;
    if (set("tau")) c.tau = f.tau;
    if (set("lag")) c.lag = f.lag;
    if (set("max_lag")) c.max_lag = f.max_lag;
    if (set("criterion")) c.criterion = parse_lag_criterion(f.criterion);
    if (set("k_regions")) c.k_regions = f.k_regions;
    if (set("k_vulnerable")) c.k_vulnerable = f.k_vulnerable;
    if (set("q")) c.q = f.q;
    if (set("activation")) c.activation = parse_activation(f.activation);
    if (set("threads")) c.threads = f.threads;
    if (set("out")) c.out = f.out;
    if (set("difference")) c.difference = true;
    if (set("force")) c.force = true;
    if (set("labels")) c.labels = f.labels;
    if (set("lattice")) c.lattice = f.lattice;
    if (c.input && (set("spec") || c.spec_json))
      throw UsageError("give either --input or --spec, not both");

    const std::string cmd = chosen->get_name();
    if (cmd == "synth") return cmd_synth(c, log);
    if (cmd == "granger") return cmd_granger(c, log, err);
    if (cmd == "partition") return cmd_partition(c, log);
    if (cmd == "percolate") return cmd_percolate(c, log, err);
    return cmd_report(c, log);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n" << chosen->help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON artifact: " << e.what() << "\n";
    return kExitError;
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace gridcause::cli
