#pragma once

#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gridcause/error.hpp"
#include "gridcause/netgraph.hpp"
#include "gridcause/parallel.hpp"
#include "gridcause/panel.hpp"
#include "gridcause/var.hpp"

namespace gridcause {

/// One directed Granger test: does `source` help predict `target`?
struct GcResult {
  std::string source;
  std::string target;
  double magnitude = 0.0;      // ln(RSS_restricted / RSS_unrestricted), clamped at 0
  double raw_magnitude = 0.0;  // before clamping; negative only by round-off
  double f_stat = 0.0;
  double p_value = 1.0;
  std::size_t lag = 1;
  std::size_t n_obs = 0;
  std::vector<std::string> conditioning;
};

/// Upper tail of the F(d1, d2) distribution, i.e. a regularized incomplete beta.
inline double f_upper_tail(double f, double d1, double d2) {
  if (!(f > 0.0)) return 1.0;
  if (!std::isfinite(f)) return 0.0;
  boost::math::fisher_f dist(d1, d2);
  return std::clamp(boost::math::cdf(boost::math::complement(dist, f)), 0.0, 1.0);
}

namespace detail {

struct GcNumbers {
  double rss_restricted = 0.0;
  double rss_unrestricted = 0.0;
};

inline void fill_gc_stats(GcResult& r, const GcNumbers& nums, std::size_t k_unrestricted) {
  if (!(nums.rss_unrestricted > 0.0))
    throw Error(ErrorKind::SingularDesign, "unrestricted model fits " + r.target + " exactly");
  if (r.n_obs <= k_unrestricted) throw Error(ErrorKind::TooShort, "no residual degrees of freedom");
  r.raw_magnitude = std::log(nums.rss_restricted / nums.rss_unrestricted);
  r.magnitude = std::max(0.0, r.raw_magnitude);
  const double df1 = static_cast<double>(r.lag);
  const double df2 = static_cast<double>(r.n_obs - k_unrestricted);
  const double gain = std::max(0.0, nums.rss_restricted - nums.rss_unrestricted);
  r.f_stat = (gain / df1) / (nums.rss_unrestricted / df2);
  r.p_value = f_upper_tail(r.f_stat, df1, df2);
}

/// Restricted: target on lags of {target} ∪ conditioning. Unrestricted adds
/// the source lags. Positions refer to the gram's node order.
inline GcNumbers gc_numbers(const LaggedGram& gram, std::size_t target_pos, std::size_t source_pos,
                            std::span<const std::size_t> conditioning_pos, std::size_t lag) {
  std::vector<std::size_t> restricted{target_pos};
  restricted.insert(restricted.end(), conditioning_pos.begin(), conditioning_pos.end());
  std::vector<std::size_t> unrestricted = restricted;
  unrestricted.push_back(source_pos);
  GcNumbers nums;
  nums.rss_restricted = gram.rss(target_pos, gram.regressor_columns(restricted, lag));
  nums.rss_unrestricted = gram.rss(target_pos, gram.regressor_columns(unrestricted, lag));
  return nums;
}

}  // namespace detail

/// Conditional Granger causality of source → target given the conditioning
/// set. With an empty set this is the bivariate test.
inline GcResult conditional_gc(const TimeSeriesPanel& panel, std::size_t source, std::size_t target,
                               std::span<const std::size_t> conditioning, std::size_t lag) {
  if (source >= panel.n_nodes() || target >= panel.n_nodes())
    throw Error(ErrorKind::UnknownNode, "node index out of range");
  if (source == target) throw Error(ErrorKind::InvalidArgument, "source and target must differ");
  std::set<std::size_t> seen;
  for (auto c : conditioning) {
    if (c >= panel.n_nodes()) throw Error(ErrorKind::UnknownNode, "conditioning index out of range");
    if (c == source || c == target)
      throw Error(ErrorKind::InvalidArgument, "conditioning set must exclude source and target");
    if (!seen.insert(c).second) throw Error(ErrorKind::InvalidArgument, "duplicate conditioning node");
  }
  std::vector<std::size_t> nodes{target};
  nodes.insert(nodes.end(), conditioning.begin(), conditioning.end());
  nodes.push_back(source);
  detail::check_length(panel, nodes.size(), lag);
  detail::LaggedGram gram(panel, nodes, lag, lag);

  std::vector<std::size_t> cond_pos;
  for (std::size_t k = 1; k + 1 < nodes.size(); ++k) cond_pos.push_back(k);

  GcResult r;
  r.source = panel.node_ids()[source];
  r.target = panel.node_ids()[target];
  r.lag = lag;
  r.n_obs = gram.n_obs();
  for (auto c : conditioning) r.conditioning.push_back(panel.node_ids()[c]);
  detail::fill_gc_stats(r, detail::gc_numbers(gram, 0, nodes.size() - 1, cond_pos, lag), nodes.size() * lag);
  return r;
}

inline GcResult pairwise_gc(const TimeSeriesPanel& panel, std::size_t source, std::size_t target, std::size_t lag) {
  return conditional_gc(panel, source, target, std::span<const std::size_t>{}, lag);
}

struct LagPolicy {
  enum class Kind {
    fixed,     // use `lag` everywhere
    global,    // one lag for the whole panel by criterion
    per_pair,  // larger of the two single-node selections per pair
  };
  Kind kind = Kind::global;
  std::size_t lag = 1;
  std::size_t max_lag = 5;
  LagCriterion criterion = LagCriterion::bic;

  static LagPolicy fixed_lag(std::size_t l) { return {Kind::fixed, l, l, LagCriterion::fixed}; }
};

struct GcMatrixOptions {
  double alpha = 0.05;
  bool bonferroni = true;
  double magnitude_floor = 0.01;
  std::size_t threads = 1;
};

/// Conditional mode is tractable up to 40 nodes; larger panels default to pairwise.
inline GcMode default_gc_mode(std::size_t n_nodes) { return n_nodes <= 40 ? GcMode::conditional : GcMode::pairwise; }

/// Evaluates every ordered pair among `nodes` and keeps edges whose p-value is
/// below alpha (Bonferroni-corrected over N(N−1) tests by default) and whose
/// magnitude reaches the floor. Conditional mode conditions each pair on all
/// remaining nodes.
inline CausalGraph gc_matrix(const TimeSeriesPanel& panel, std::span<const std::size_t> nodes,
                             const LagPolicy& policy, GcMode mode, const GcMatrixOptions& opts = {}) {
  if (nodes.size() < 2) throw Error(ErrorKind::InvalidArgument, "gc_matrix needs at least 2 nodes");
  if (!(opts.alpha > 0.0 && opts.alpha <= 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1]");
  const std::size_t n = nodes.size();

  CausalGraph g;
  for (auto i : nodes) g.nodes.push_back(panel.node_ids().at(i));
  const auto N = static_cast<Eigen::Index>(n);
  g.weights = Eigen::MatrixXd::Zero(N, N);
  g.magnitude = Eigen::MatrixXd::Zero(N, N);
  g.p_value = Eigen::MatrixXd::Ones(N, N);
  g.f_stat = Eigen::MatrixXd::Zero(N, N);
  g.alpha = opts.alpha;
  g.alpha_corrected = opts.bonferroni ? opts.alpha / static_cast<double>(n * (n - 1)) : opts.alpha;
  g.magnitude_floor = opts.magnitude_floor;
  g.mode = mode;

  std::vector<std::size_t> single_lags;
  std::size_t lag = policy.lag;
  if (policy.kind == LagPolicy::Kind::global) {
    lag = select_lag(panel, nodes, policy.max_lag, policy.criterion);
  } else if (policy.kind == LagPolicy::Kind::per_pair) {
    for (auto i : nodes) {
      const std::size_t one[] = {i};
      single_lags.push_back(select_lag(panel, one, policy.max_lag, policy.criterion));
    }
    lag = *std::max_element(single_lags.begin(), single_lags.end());
  }
  g.lag = lag;

  auto store = [&](std::size_t s, std::size_t t, const GcResult& r) {
    const auto S = static_cast<Eigen::Index>(s), T = static_cast<Eigen::Index>(t);
    g.magnitude(S, T) = r.magnitude;
    g.p_value(S, T) = r.p_value;
    g.f_stat(S, T) = r.f_stat;
  };

  if (policy.kind == LagPolicy::Kind::per_pair) {
    detail::parallel_for(n, opts.threads, [&](std::size_t t) {
      for (std::size_t s = 0; s < n; ++s) {
        if (s == t) continue;
        const std::size_t pair_lag = std::max(single_lags[s], single_lags[t]);
        std::vector<std::size_t> cond;
        if (mode == GcMode::conditional)
          for (std::size_t c = 0; c < n; ++c)
            if (c != s && c != t) cond.push_back(nodes[c]);
        store(s, t, conditional_gc(panel, nodes[s], nodes[t], cond, pair_lag));
      }
    });
  } else {
    detail::check_length(panel, mode == GcMode::conditional ? n : 2, lag);
    detail::LaggedGram gram(panel, nodes, lag, lag);
    detail::parallel_for(n, opts.threads, [&](std::size_t t) {
      for (std::size_t s = 0; s < n; ++s) {
        if (s == t) continue;
        std::vector<std::size_t> cond;
        if (mode == GcMode::conditional)
          for (std::size_t c = 0; c < n; ++c)
            if (c != s && c != t) cond.push_back(c);
        GcResult r;
        r.source = g.nodes[s];
        r.target = g.nodes[t];
        r.lag = lag;
        r.n_obs = gram.n_obs();
        detail::fill_gc_stats(r, detail::gc_numbers(gram, t, s, cond, lag), (cond.size() + 2) * lag);
        store(s, t, r);
      }
    });
  }

  for (Eigen::Index s = 0; s < N; ++s)
    for (Eigen::Index t = 0; t < N; ++t)
      if (s != t && g.p_value(s, t) < g.alpha_corrected && g.magnitude(s, t) >= opts.magnitude_floor &&
          g.magnitude(s, t) > 0.0)
        g.weights(s, t) = g.magnitude(s, t);
  return g;
}

inline CausalGraph gc_matrix(const TimeSeriesPanel& panel, const LagPolicy& policy, GcMode mode,
                             const GcMatrixOptions& opts = {}) {
  std::vector<std::size_t> all(panel.n_nodes());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return gc_matrix(panel, all, policy, mode, opts);
}

}  // namespace gridcause
