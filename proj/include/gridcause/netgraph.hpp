#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridcause/error.hpp"
#include "gridcause/io.hpp"
#include "gridcause/panel.hpp"

namespace gridcause {

enum class GcMode { pairwise, conditional };

inline std::string_view to_string(GcMode m) { return m == GcMode::pairwise ? "pairwise" : "conditional"; }

inline GcMode parse_gc_mode(std::string_view s) {
  if (s == "pairwise") return GcMode::pairwise;
  if (s == "conditional") return GcMode::conditional;
  throw Error(ErrorKind::InvalidArgument, "unknown mode '" + std::string(s) + "'");
}

/// Directed Granger-causality network. Matrices are indexed (source, target).
/// `weights` holds the magnitude where the edge is significant and 0 elsewhere.
struct CausalGraph {
  std::vector<std::string> nodes;
  Eigen::MatrixXd weights;
  Eigen::MatrixXd magnitude;
  Eigen::MatrixXd p_value;
  Eigen::MatrixXd f_stat;
  double alpha = 0.05;
  double alpha_corrected = 0.05;
  double magnitude_floor = 0.0;
  GcMode mode = GcMode::conditional;
  std::size_t lag = 1;

  std::size_t n() const noexcept { return nodes.size(); }
  bool has_edge(std::size_t s, std::size_t t) const {
    return weights(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) > 0.0;
  }
  std::size_t edge_count() const { return static_cast<std::size_t>((weights.array() > 0.0).count()); }
};

/// Undirected 0/1 graph from thresholded Pearson correlations.
struct CorrGraph {
  std::vector<std::string> nodes;
  Eigen::MatrixXd r;    // sample correlation matrix
  Eigen::MatrixXd adj;  // symmetric, binary, zero diagonal
  double tau = 0.0;

  std::size_t n() const noexcept { return nodes.size(); }
  std::size_t edge_count() const { return static_cast<std::size_t>(adj.sum() / 2.0 + 0.5); }

  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (Eigen::Index i = 0; i < adj.rows(); ++i)
      for (Eigen::Index j = i + 1; j < adj.cols(); ++j)
        if (adj(i, j) != 0.0) out.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    return out;
  }
};

inline Eigen::MatrixXd pearson_matrix(const TimeSeriesPanel& panel) {
  const Eigen::MatrixXd& x = panel.samples();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mean;
  const Eigen::VectorXd ss = c.colwise().squaredNorm().transpose();
  for (Eigen::Index i = 0; i < ss.size(); ++i)
    if (!(ss(i) > 0.0)) throw Error(ErrorKind::ZeroVariance, panel.node_ids()[static_cast<std::size_t>(i)]);
  const Eigen::VectorXd inv = ss.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd r = inv.asDiagonal() * (c.transpose() * c) * inv.asDiagonal();
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < r.cols(); ++j) {
      const double v = std::clamp(0.5 * (r(i, j) + r(j, i)), -1.0, 1.0);
      r(i, j) = v;
      r(j, i) = v;
    }
  }
  return r;
}

/// Edge (i, j) iff r_ij > tau. The default tau = 0 keeps positive correlations.
inline CorrGraph build_corr_graph(const TimeSeriesPanel& panel, double tau = 0.0) {
  if (panel.n_nodes() < 2) throw Error(ErrorKind::InvalidArgument, "correlation graph needs at least 2 nodes");
  if (!(tau >= -1.0 && tau <= 1.0)) throw Error(ErrorKind::InvalidArgument, "tau must lie in [-1, 1]");
  CorrGraph g;
  g.nodes = panel.node_ids();
  g.r = pearson_matrix(panel);
  g.tau = tau;
  const auto n = g.r.rows();
  g.adj = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (g.r(i, j) > tau) g.adj(i, j) = g.adj(j, i) = 1.0;
  return g;
}

struct NodeStrength {
  std::string node;
  double in_strength = 0.0;
  double out_strength = 0.0;
  std::size_t in_degree = 0;
  std::size_t out_degree = 0;
  std::size_t degree = 0;
};

struct NodeDegree {
  std::string node;
  std::size_t degree = 0;
};

inline std::vector<NodeStrength> degree_stats(const CausalGraph& g) {
  std::vector<NodeStrength> out(g.n());
  for (std::size_t i = 0; i < g.n(); ++i) out[i].node = g.nodes[i];
  for (std::size_t s = 0; s < g.n(); ++s)
    for (std::size_t t = 0; t < g.n(); ++t) {
      if (s == t || !g.has_edge(s, t)) continue;
      const double w = g.weights(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
      out[s].out_strength += w;
      out[s].out_degree += 1;
      out[t].in_strength += w;
      out[t].in_degree += 1;
    }
  for (auto& d : out) d.degree = d.in_degree + d.out_degree;
  return out;
}

inline std::vector<NodeDegree> degree_stats(const CorrGraph& g) {
  std::vector<NodeDegree> out(g.n());
  for (std::size_t i = 0; i < g.n(); ++i) {
    out[i].node = g.nodes[i];
    out[i].degree = static_cast<std::size_t>(g.adj.row(static_cast<Eigen::Index>(i)).sum() + 0.5);
  }
  return out;
}

namespace detail {

inline Eigen::MatrixXd select_square(const Eigen::MatrixXd& m, std::span<const std::size_t> keep) {
  const auto k = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd out(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b)
      out(a, b) = m(static_cast<Eigen::Index>(keep[static_cast<std::size_t>(a)]),
                    static_cast<Eigen::Index>(keep[static_cast<std::size_t>(b)]));
  return out;
}

inline std::vector<std::size_t> sorted_order(const std::vector<std::string>& ids) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
  return order;
}

inline std::string dot_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline CausalGraph induced_subgraph(const CausalGraph& g, std::span<const std::size_t> keep) {
  CausalGraph out = g;
  out.nodes.clear();
  for (auto k : keep) out.nodes.push_back(g.nodes.at(k));
  out.weights = detail::select_square(g.weights, keep);
  out.magnitude = detail::select_square(g.magnitude, keep);
  out.p_value = detail::select_square(g.p_value, keep);
  out.f_stat = detail::select_square(g.f_stat, keep);
  return out;
}

inline CausalGraph remove_node(const CausalGraph& g, std::size_t victim) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < g.n(); ++i)
    if (i != victim) keep.push_back(i);
  return induced_subgraph(g, keep);
}

/// Undirected weighted view of a causal graph: W + Wᵀ.
inline Eigen::MatrixXd symmetrized_adjacency(const CausalGraph& g) {
  return g.weights + g.weights.transpose();
}

inline std::string format_dot(const CausalGraph& g) {
  std::string out = "digraph causal {\n";
  const auto order = detail::sorted_order(g.nodes);
  for (auto i : order) out += "  " + detail::dot_quote(g.nodes[i]) + ";\n";
  for (auto s : order)
    for (auto t : order)
      if (s != t && g.has_edge(s, t))
        out += "  " + detail::dot_quote(g.nodes[s]) + " -> " + detail::dot_quote(g.nodes[t]) + " [label=\"" +
               io::format_fixed(g.weights(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)), 4) + "\"];\n";
  return out + "}\n";
}

/// Undirected edges are labelled with their Pearson coefficient.
inline std::string format_dot(const CorrGraph& g) {
  std::string out = "graph correlation {\n";
  const auto order = detail::sorted_order(g.nodes);
  for (auto i : order) out += "  " + detail::dot_quote(g.nodes[i]) + ";\n";
  for (std::size_t a = 0; a < order.size(); ++a)
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const auto i = static_cast<Eigen::Index>(order[a]), j = static_cast<Eigen::Index>(order[b]);
      if (g.adj(i, j) != 0.0)
        out += "  " + detail::dot_quote(g.nodes[order[a]]) + " -- " + detail::dot_quote(g.nodes[order[b]]) +
               " [label=\"" + io::format_fixed(g.r(i, j), 4) + "\"];\n";
    }
  return out + "}\n";
}

template <class Graph>
void export_dot(const Graph& g, const std::filesystem::path& path) {
  io::write_file_atomic(path, format_dot(g));
}

inline nlohmann::json graph_json(const CausalGraph& g) {
  nlohmann::json j;
  const auto order = detail::sorted_order(g.nodes);
  j["nodes"] = nlohmann::json::array();
  for (auto i : order) j["nodes"].push_back(g.nodes[i]);
  j["edges"] = nlohmann::json::array();
  for (auto s : order)
    for (auto t : order)
      if (s != t && g.has_edge(s, t))
        j["edges"].push_back({{"u", g.nodes[s]}, {"v", g.nodes[t]},
                              {"w", g.weights(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t))}});
  return j;
}

inline nlohmann::json graph_json(const CorrGraph& g) {
  nlohmann::json j;
  const auto order = detail::sorted_order(g.nodes);
  j["nodes"] = nlohmann::json::array();
  for (auto i : order) j["nodes"].push_back(g.nodes[i]);
  j["edges"] = nlohmann::json::array();
  for (std::size_t a = 0; a < order.size(); ++a)
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const auto i = static_cast<Eigen::Index>(order[a]), k = static_cast<Eigen::Index>(order[b]);
      if (g.adj(i, k) != 0.0) j["edges"].push_back({{"u", g.nodes[order[a]]}, {"v", g.nodes[order[b]]}, {"w", 1.0}});
    }
  j["tau"] = g.tau;
  return j;
}

/// Nested map source → target → {magnitude, p, significant} over all ordered pairs.
inline nlohmann::json causal_matrix_json(const CausalGraph& g) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t s = 0; s < g.n(); ++s) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t t = 0; t < g.n(); ++t) {
      if (s == t) continue;
      const auto S = static_cast<Eigen::Index>(s), T = static_cast<Eigen::Index>(t);
      row[g.nodes[t]] = {{"magnitude", g.magnitude(S, T)}, {"p", g.p_value(S, T)}, {"significant", g.has_edge(s, t)}};
    }
    j[g.nodes[s]] = row;
  }
  return j;
}

/// CSV `source,target,magnitude,p_value,significant` over all ordered pairs.
inline std::string causal_edges_csv(const CausalGraph& g) {
  std::string out = "source,target,magnitude,p_value,significant\n";
  const auto order = detail::sorted_order(g.nodes);
  for (auto s : order)
    for (auto t : order) {
      if (s == t) continue;
      const auto S = static_cast<Eigen::Index>(s), T = static_cast<Eigen::Index>(t);
      out += g.nodes[s] + "," + g.nodes[t] + "," + io::format_double(g.magnitude(S, T)) + "," +
             io::format_double(g.p_value(S, T)) + "," + (g.has_edge(s, t) ? "true" : "false") + "\n";
    }
  return out;
}

}  // namespace gridcause
