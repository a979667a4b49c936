#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridcause/error.hpp"
#include "gridcause/netgraph.hpp"
#include "gridcause/panel.hpp"
#include "gridcause/percolation.hpp"
#include "gridcause/synth.hpp"

namespace gridcause {

struct RankedNode {
  std::string node;
  double out_strength = 0.0;
  std::size_t out_degree = 0;
};

/// Nodes by causal out-strength, descending; ties by id ascending.
struct VulnerabilityRanking {
  std::vector<RankedNode> ranked;
  std::size_t k_selected = 4;

  std::vector<std::string> vulnerable() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k_selected && i < ranked.size(); ++i) out.push_back(ranked[i].node);
    return out;
  }
};

inline VulnerabilityRanking rank_vulnerable(const CausalGraph& causal, std::size_t k = 4) {
  if (k > causal.n()) throw Error(ErrorKind::InvalidArgument, "k exceeds the number of nodes");
  VulnerabilityRanking out;
  out.k_selected = k;
  for (const auto& s : degree_stats(causal)) out.ranked.push_back({s.node, s.out_strength, s.out_degree});
  std::sort(out.ranked.begin(), out.ranked.end(), [](const RankedNode& a, const RankedNode& b) {
    if (a.out_strength != b.out_strength) return a.out_strength > b.out_strength;
    return a.node < b.node;
  });
  return out;
}

struct WhatIfPanels {
  TimeSeriesPanel panel_before;
  TimeSeriesPanel panel_after;
};

/// Same spec and seed twice; the second run attenuates couplings incident to
/// `placement` by the spec's der_gamma. Any DER nodes already in the spec are
/// replaced, so the before panel carries none.
inline WhatIfPanels der_whatif(const SynthSpec& spec, const std::vector<std::string>& placement) {
  std::set<std::size_t> nodes;
  for (const auto& id : placement) nodes.insert(synth_node_index(spec, id));
  SynthSpec before = spec;
  before.der_nodes.clear();
  SynthSpec after = spec;
  after.der_nodes = nodes;
  return {synthesize(before), synthesize(after)};
}

struct ResilienceDelta {
  double rho_before = 0.0;
  double rho_after = 0.0;
  double pct_change = 0.0;
  PercolationCurve curve_before;
  PercolationCurve curve_after;
};

inline ResilienceDelta resilience_delta(const TimeSeriesPanel& before, const TimeSeriesPanel& after, double tau,
                                        const PercolationOptions& opts) {
  if (before.node_ids() != after.node_ids())
    throw Error(ErrorKind::ShapeMismatch, "before and after panels must share node ids");
  ResilienceDelta d;
  d.curve_before = percolate(edge_list(build_corr_graph(before, tau)), opts);
  d.curve_after = percolate(edge_list(build_corr_graph(after, tau)), opts);
  d.rho_before = d.curve_before.rho_c;
  d.rho_after = d.curve_after.rho_c;
  d.pct_change = pct_change(d.rho_before, d.rho_after);
  return d;
}

inline nlohmann::json to_json(const VulnerabilityRanking& r) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < r.ranked.size(); ++i)
    arr.push_back({{"node", r.ranked[i].node},
                   {"out_strength", r.ranked[i].out_strength},
                   {"out_degree", r.ranked[i].out_degree},
                   {"vulnerable", i < r.k_selected}});
  return arr;
}

/// {ranking, placements, rho_before, rho_after, pct_change}; placements maps a
/// scenario name to its node list.
inline nlohmann::json vulnerability_report_json(const VulnerabilityRanking& ranking,
                                                const std::vector<std::pair<std::string, std::vector<std::string>>>& placements,
                                                const ResilienceDelta& delta) {
  nlohmann::json j;
  j["ranking"] = to_json(ranking);
  j["placements"] = nlohmann::json::object();
  for (const auto& [name, ids] : placements) j["placements"][name] = ids;
  j["rho_before"] = delta.rho_before;
  j["rho_after"] = delta.rho_after;
  j["pct_change"] = std::isfinite(delta.pct_change) ? nlohmann::json(delta.pct_change) : nlohmann::json(nullptr);
  return j;
}

}  // namespace gridcause
