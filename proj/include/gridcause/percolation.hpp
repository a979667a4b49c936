#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gridcause/error.hpp"
#include "gridcause/parallel.hpp"
#include "gridcause/io.hpp"
#include "gridcause/netgraph.hpp"

namespace gridcause {

/// Simple undirected graph as an edge list over nodes 0..n_nodes−1.
struct EdgeList {
  std::size_t n_nodes = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
};

inline EdgeList edge_list(const CorrGraph& g) { return {g.n(), g.edges()}; }

inline EdgeList path_graph(std::size_t n) {
  EdgeList g{n, {}};
  for (std::size_t i = 0; i + 1 < n; ++i) g.edges.emplace_back(i, i + 1);
  return g;
}

/// side × side square lattice with open boundaries.
inline EdgeList square_lattice(std::size_t side) {
  EdgeList g{side * side, {}};
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      const std::size_t v = r * side + c;
      if (c + 1 < side) g.edges.emplace_back(v, v + 1);
      if (r + 1 < side) g.edges.emplace_back(v, v + side);
    }
  return g;
}

/// G(n, p) with p = mean_degree / (n − 1).
inline EdgeList erdos_renyi(std::size_t n, double mean_degree, std::uint64_t seed) {
  EdgeList g{n, {}};
  if (n < 2) return g;
  const double p = mean_degree / static_cast<double>(n - 1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (u(rng) < p) g.edges.emplace_back(i, j);
  return g;
}

struct PercolationOptions {
  std::size_t q_realizations = 1000;
  /// Removal counts to sample; empty selects the default grid.
  std::vector<std::size_t> removal_counts;
  /// Nominal removal fractions, overriding `removal_counts`. Counts are
  /// round(f·E) and the curve reports these fractions, so graphs with
  /// different edge counts share one grid.
  std::vector<double> removal_fractions;
  std::uint64_t seed = 0;
  /// Nested: one shuffled order per realization, removals are prefixes of it.
  bool nested = true;
  std::size_t threads = 1;
};

/// points evenly spaced fractions from 0 to 1 inclusive.
inline std::vector<double> uniform_fraction_grid(std::size_t points) {
  if (points < 2) throw Error(ErrorKind::InvalidArgument, "a fraction grid needs at least 2 points");
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) grid[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return grid;
}

struct PercolationCurve {
  std::vector<double> removal_fractions;
  std::vector<std::size_t> removal_counts;
  std::vector<double> strength;        // P∞
  std::vector<double> susceptibility;  // χ
  std::size_t q_realizations = 0;
  std::size_t n_nodes = 0;
  std::size_t n_edges = 0;
  double rho_c = 0.0;  // removal fraction at max χ
  std::uint64_t seed = 0;

  double occupied_threshold() const { return 1.0 - rho_c; }
};

inline constexpr std::size_t kFullGridMaxEdges = 2000;
inline constexpr std::size_t kCoarseGridPoints = 200;

/// Every integer count 0..E when E ≤ 2000, else 200 evenly spaced counts.
inline std::vector<std::size_t> default_removal_grid(std::size_t n_edges) {
  std::vector<std::size_t> grid;
  if (n_edges <= kFullGridMaxEdges) {
    grid.resize(n_edges + 1);
    std::iota(grid.begin(), grid.end(), std::size_t{0});
    return grid;
  }
  for (std::size_t i = 0; i < kCoarseGridPoints; ++i)
    grid.push_back(static_cast<std::size_t>(
        std::llround(static_cast<double>(i) * static_cast<double>(n_edges) / static_cast<double>(kCoarseGridPoints - 1))));
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1) { reset(); }

  void reset() {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
    std::fill(size_.begin(), size_.end(), std::size_t{1});
    largest_ = parent_.empty() ? 0 : 1;
  }

  std::size_t find(std::size_t v) {
    while (parent_[v] != v) {
      parent_[v] = parent_[parent_[v]];
      v = parent_[v];
    }
    return v;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    largest_ = std::max(largest_, size_[a]);
  }

  std::size_t largest() const noexcept { return largest_; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
  std::size_t largest_ = 0;
};

inline std::mt19937_64 realization_rng(std::uint64_t seed, std::size_t q) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(q), static_cast<std::uint32_t>(static_cast<std::uint64_t>(q) >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Monte-Carlo bond percolation. For each realization the largest connected
/// component S_q is recorded after removing e random edges at every grid point;
/// P∞ = ΣS_q/(NQ), χ = (ΣS_q²/(N²Q) − P∞²)/P∞, and ρc is the removal fraction
/// maximizing χ (ties to the smaller fraction). Sums are accumulated in integers,
/// so the result does not depend on thread count or scheduling.
inline PercolationCurve percolate(const EdgeList& graph, const PercolationOptions& opts) {
  if (graph.edges.empty() || graph.n_nodes == 0) throw Error(ErrorKind::EmptyGraph, "graph has no edges");
  if (opts.q_realizations == 0) throw Error(ErrorKind::InvalidArgument, "need at least one realization");
  const std::size_t E = graph.edges.size();
  const std::size_t N = graph.n_nodes;
  for (const auto& [a, b] : graph.edges)
    if (a >= N || b >= N) throw Error(ErrorKind::InvalidArgument, "edge endpoint out of range");

  PercolationCurve curve;
  if (!opts.removal_fractions.empty()) {
    for (double f : opts.removal_fractions) {
      if (!(f >= 0.0 && f <= 1.0)) throw Error(ErrorKind::InvalidArgument, "removal fractions must lie in [0, 1]");
      curve.removal_counts.push_back(static_cast<std::size_t>(std::llround(f * static_cast<double>(E))));
    }
  } else {
    curve.removal_counts = opts.removal_counts.empty() ? default_removal_grid(E) : opts.removal_counts;
  }
  for (auto e : curve.removal_counts)
    if (e > E) throw Error(ErrorKind::InvalidArgument, "removal count exceeds edge count");
  if (!std::is_sorted(curve.removal_counts.begin(), curve.removal_counts.end()))
    throw Error(ErrorKind::InvalidArgument, "removal grid must be increasing");
  const std::size_t G = curve.removal_counts.size();

  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads == 0 ? std::thread::hardware_concurrency() : opts.threads, opts.q_realizations));
  std::vector<std::vector<std::uint64_t>> sum_s(threads, std::vector<std::uint64_t>(G, 0));
  std::vector<std::vector<std::uint64_t>> sum_s2(threads, std::vector<std::uint64_t>(G, 0));

  detail::parallel_for(threads, threads, [&](std::size_t w) {
    detail::DisjointSets sets(N);
    std::vector<std::size_t> order(E);
    std::vector<std::size_t> largest_with(E + 1);  // largest component with k edges present
    for (std::size_t q = w; q < opts.q_realizations; q += threads) {
      auto rng = detail::realization_rng(opts.seed, q);
      if (opts.nested) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        sets.reset();
        largest_with[0] = sets.largest();
        for (std::size_t k = 0; k < E; ++k) {
          const auto& [a, b] = graph.edges[order[k]];
          sets.unite(a, b);
          largest_with[k + 1] = sets.largest();
        }
        for (std::size_t gi = 0; gi < G; ++gi) {
          const std::uint64_t s = largest_with[E - curve.removal_counts[gi]];
          sum_s[w][gi] += s;
          sum_s2[w][gi] += s * s;
        }
      } else {
        for (std::size_t gi = 0; gi < G; ++gi) {
          std::iota(order.begin(), order.end(), std::size_t{0});
          std::shuffle(order.begin(), order.end(), rng);
          sets.reset();
          for (std::size_t k = 0; k < E - curve.removal_counts[gi]; ++k) {
            const auto& [a, b] = graph.edges[order[k]];
            sets.unite(a, b);
          }
          const std::uint64_t s = sets.largest();
          sum_s[w][gi] += s;
          sum_s2[w][gi] += s * s;
        }
      }
    }
  });

  const auto Q = static_cast<unsigned __int128>(opts.q_realizations);
  const double NQ = static_cast<double>(N) * static_cast<double>(opts.q_realizations);
  double best = -1.0;
  for (std::size_t gi = 0; gi < G; ++gi) {
    unsigned __int128 s1 = 0, s2 = 0;
    for (std::size_t w = 0; w < threads; ++w) {
      s1 += sum_s[w][gi];
      s2 += sum_s2[w][gi];
    }
    const double p_inf = static_cast<double>(s1) / NQ;
    // Q·ΣS² − (ΣS)² ≥ 0 exactly, by Cauchy–Schwarz.
    const double spread = static_cast<double>(Q * s2 - s1 * s1) / (NQ * NQ);
    const double chi = spread / p_inf;
    curve.removal_fractions.push_back(opts.removal_fractions.empty()
                                          ? static_cast<double>(curve.removal_counts[gi]) / static_cast<double>(E)
                                          : opts.removal_fractions[gi]);
    curve.strength.push_back(p_inf);
    curve.susceptibility.push_back(chi);
    if (chi > best) {
      best = chi;
      curve.rho_c = curve.removal_fractions.back();
    }
  }
  curve.q_realizations = opts.q_realizations;
  curve.n_nodes = N;
  curve.n_edges = E;
  curve.seed = opts.seed;
  return curve;
}

inline std::string curve_csv(const PercolationCurve& c) {
  std::string out = "removal_fraction,strength,susceptibility\n";
  for (std::size_t i = 0; i < c.removal_fractions.size(); ++i)
    out += io::format_double(c.removal_fractions[i]) + "," + io::format_double(c.strength[i]) + "," +
           io::format_double(c.susceptibility[i]) + "\n";
  return out;
}

inline nlohmann::json curve_summary_json(const PercolationCurve& c) {
  return {{"rho_c", c.rho_c},
          {"occupied_threshold", c.occupied_threshold()},
          {"Q", c.q_realizations},
          {"seed", c.seed},
          {"n_nodes", c.n_nodes},
          {"n_edges", c.n_edges}};
}

/// 100·(b − a)/a; NaN when a is zero.
inline double pct_change(double a, double b) {
  if (a == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return 100.0 * (b - a) / a;
}

struct ResilienceComparison {
  std::string from;
  std::string to;
  double pct_change = 0.0;
};

struct ResilienceReport {
  struct Row {
    std::string label;
    double rho_c = 0.0;
    double occupied_threshold = 0.0;
  };
  std::vector<Row> rows;
  std::vector<ResilienceComparison> comparisons;  // every pair (i < j), i → j
};

inline ResilienceReport compare_resilience(const std::vector<std::pair<std::string, PercolationCurve>>& curves) {
  if (curves.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least two curves");
  for (std::size_t i = 1; i < curves.size(); ++i)
    if (curves[i].second.removal_fractions != curves[0].second.removal_fractions)
      throw Error(ErrorKind::GridMismatch, "curve '" + curves[i].first + "' uses a different removal grid");
  ResilienceReport rep;
  for (const auto& [label, c] : curves) rep.rows.push_back({label, c.rho_c, c.occupied_threshold()});
  for (std::size_t i = 0; i < rep.rows.size(); ++i)
    for (std::size_t j = i + 1; j < rep.rows.size(); ++j)
      rep.comparisons.push_back({rep.rows[i].label, rep.rows[j].label, pct_change(rep.rows[i].rho_c, rep.rows[j].rho_c)});
  return rep;
}

/// Markdown table: one row per label plus percentage changes against the first row.
inline std::string format_resilience_table(const ResilienceReport& rep, const std::string& region = "") {
  std::string out = "| Region | Configuration | Percolation threshold (removal) | Occupied fraction | Change vs. first |\n";
  out += "|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    std::string change = "-";
    if (i > 0) {
      const double pct = pct_change(rep.rows[0].rho_c, r.rho_c);
      change = std::isfinite(pct) ? (pct >= 0 ? "+" : "") + io::format_fixed(pct, 2) + "%" : "n/a";
    }
    out += "| " + (i == 0 ? region : std::string()) + " | " + r.label + " | " + io::format_fixed(r.rho_c, 5) + " | " +
           io::format_fixed(r.occupied_threshold, 5) + " | " + change + " |\n";
  }
  return out;
}

}  // namespace gridcause
