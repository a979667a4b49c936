#pragma once

#include <Eigen/Dense>

#include <algorithm>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "gridcause/panel.hpp"
#include "gridcause/synth.hpp"

namespace testsupport {

inline gridcause::TimeSeriesPanel white_noise(std::size_t nodes, std::size_t steps, std::uint64_t seed) {
  gridcause::SynthSpec spec;
  spec.n_nodes = nodes;
  spec.n_steps = steps;
  spec.noise_sigma.assign(nodes, 1.0);
  spec.base_ar.assign(nodes, 0.0);
  spec.seed = seed;
  return gridcause::synthesize(spec);
}

/// x_t = phi_1 x_{t-1} + ... + e_t, independent of the library generator.
inline gridcause::TimeSeriesPanel ar_series(const std::vector<double>& phi, std::size_t steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t burn = 500;
  std::vector<double> x(steps + burn, 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double v = n01(rng);
    for (std::size_t l = 0; l < phi.size(); ++l)
      if (t > l) v += phi[l] * x[t - l - 1];
    x[t] = v;
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(steps), 1);
  for (std::size_t t = 0; t < steps; ++t) m(static_cast<Eigen::Index>(t), 0) = x[t + burn];
  return gridcause::TimeSeriesPanel({"X"}, m);
}

struct OlsOracle {
  Eigen::MatrixXd beta;  // regressors × targets
  Eigen::VectorXd rss;
  std::size_t n_obs = 0;
};

/// Explicit design-matrix OLS via Householder QR: targets are columns at time t,
/// regressors are lags 1..lag of `regressor_nodes`, every series centred by its
/// full-sample mean. Regressor order is (node, lag) node-major.
inline OlsOracle ols_oracle(const gridcause::TimeSeriesPanel& panel, const std::vector<std::size_t>& targets,
                            const std::vector<std::size_t>& regressor_nodes, std::size_t lag) {
  const auto T = static_cast<Eigen::Index>(panel.n_steps());
  const auto n = T - static_cast<Eigen::Index>(lag);
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(regressor_nodes.size() * lag));
  Eigen::MatrixXd y(n, static_cast<Eigen::Index>(targets.size()));
  for (std::size_t k = 0; k < regressor_nodes.size(); ++k) {
    const auto col = panel.column(regressor_nodes[k]);
    for (std::size_t l = 1; l <= lag; ++l)
      x.col(static_cast<Eigen::Index>(k * lag + l - 1)) =
          col.segment(static_cast<Eigen::Index>(lag - l), n).array() - col.mean();
  }
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto col = panel.column(targets[k]);
    y.col(static_cast<Eigen::Index>(k)) = col.segment(static_cast<Eigen::Index>(lag), n).array() - col.mean();
  }
  OlsOracle o;
  o.beta = x.householderQr().solve(y);
  o.rss = (y - x * o.beta).colwise().squaredNorm().transpose();
  o.n_obs = static_cast<std::size_t>(n);
  return o;
}

/// Independent modularity: Q = Σ_c [L_c/m − (D_c/2m)²].
inline double modularity_oracle(const Eigen::MatrixXd& a, const std::vector<std::size_t>& labels, std::size_t k) {
  std::vector<double> inside(k, 0.0), degree(k, 0.0);
  double two_m = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (i == j) continue;
      const auto ci = labels[static_cast<std::size_t>(i)], cj = labels[static_cast<std::size_t>(j)];
      degree[ci] += a(i, j);
      two_m += a(i, j);
      if (ci == cj) inside[ci] += a(i, j);
    }
  double q = 0.0;
  for (std::size_t c = 0; c < k; ++c) q += inside[c] / two_m - (degree[c] / two_m) * (degree[c] / two_m);
  return q;
}

/// Best modularity over every partition into exactly k non-empty groups,
/// enumerated as restricted growth strings.
inline double exhaustive_best_modularity(const Eigen::MatrixXd& a, std::size_t k) {
  const auto n = static_cast<std::size_t>(a.rows());
  std::vector<std::size_t> labels(n, 0);
  double best = -1e300;
  auto rec = [&](auto&& self, std::size_t i, std::size_t used) -> void {
    if (n - i < k - used) return;
    if (i == n) {
      if (used == k) best = std::max(best, modularity_oracle(a, labels, k));
      return;
    }
    for (std::size_t c = 0; c <= used && c < k; ++c) {
      labels[i] = c;
      self(self, i + 1, std::max(used, c + 1));
    }
  };
  rec(rec, 0, 0);
  return best;
}

inline Eigen::MatrixXd random_graph(std::size_t n, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.cols(); ++j)
      if (coin(rng)) a(i, j) = a(j, i) = 1.0;
  return a;
}

/// Two cliques of `size` nodes joined by a single edge between their first nodes.
inline Eigen::MatrixXd two_cliques(std::size_t size) {
  const auto s = static_cast<Eigen::Index>(size);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * s, 2 * s);
  a.topLeftCorner(s, s).setOnes();
  a.bottomRightCorner(s, s).setOnes();
  a.diagonal().setZero();
  a(0, s) = a(s, 0) = 1.0;
  return a;
}

inline std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("n" + std::to_string(i));
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gridcause_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
