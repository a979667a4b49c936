#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridcause/error.hpp"
#include "gridcause/panel.hpp"

namespace gridcause {

enum class LagCriterion { aic, bic, fixed };

inline std::string_view to_string(LagCriterion c) {
  switch (c) {
    case LagCriterion::aic: return "aic";
    case LagCriterion::bic: return "bic";
    case LagCriterion::fixed: return "fixed";
  }
  return "fixed";
}

inline LagCriterion parse_lag_criterion(std::string_view s) {
  if (s == "aic") return LagCriterion::aic;
  if (s == "bic") return LagCriterion::bic;
  if (s == "fixed") return LagCriterion::fixed;
  throw Error(ErrorKind::InvalidArgument, "unknown criterion '" + std::string(s) + "'");
}

/// Least-squares (multi)variate autoregression, one equation per target.
struct VarFit {
  std::vector<std::string> included_nodes;
  std::size_t lag = 0;
  /// coeffs[l](target, source) multiplies source(t − l − 1).
  std::vector<Eigen::MatrixXd> coeffs;
  Eigen::MatrixXd residuals;  // n_obs × targets
  Eigen::VectorXd resid_var;  // RSS / n_obs
  std::size_t n_obs = 0;
  LagCriterion criterion = LagCriterion::fixed;
  double criterion_value = std::numeric_limits<double>::quiet_NaN();

  double coeff(std::size_t target, std::size_t source, std::size_t lag_index) const {
    return coeffs.at(lag_index - 1)(static_cast<Eigen::Index>(target), static_cast<Eigen::Index>(source));
  }
};

namespace detail {

/// Relative pivot below which the scaled normal matrix is declared singular.
inline constexpr double kSingularPivot = 1e-10;

/// Cross-products of the mean-centred lagged design for a node set. Column
/// (k, l) holds node k delayed by l steps, l = 0..max_lag, over rows
/// t = first_t .. n_steps−1. Every regression over any subset of these columns
/// is solved from the cached Gram matrix.
class LaggedGram {
 public:
  LaggedGram(const TimeSeriesPanel& panel, std::span<const std::size_t> nodes, std::size_t max_lag,
             std::size_t first_t)
      : n_nodes_(nodes.size()), max_lag_(max_lag) {
    if (first_t < max_lag || first_t >= panel.n_steps())
      throw Error(ErrorKind::TooShort, "sample window too short for lag " + std::to_string(max_lag));
    n_obs_ = panel.n_steps() - first_t;
    const auto rows = static_cast<Eigen::Index>(n_obs_);
    const auto width = static_cast<Eigen::Index>(max_lag + 1);
    Eigen::MatrixXd design(rows, static_cast<Eigen::Index>(n_nodes_) * width);
    for (std::size_t k = 0; k < n_nodes_; ++k) {
      const auto col = panel.column(nodes[k]);
      const double mean = col.mean();
      for (std::size_t l = 0; l <= max_lag; ++l)
        design.col(column_index(k, l)) =
            col.segment(static_cast<Eigen::Index>(first_t - l), rows).array() - mean;
    }
    gram_ = Eigen::MatrixXd(design.cols(), design.cols());
    gram_.setZero();
    gram_.selfadjointView<Eigen::Lower>().rankUpdate(design.transpose());
    gram_.triangularView<Eigen::StrictlyUpper>() = gram_.transpose();
    design_ = std::move(design);
  }

  std::size_t n_obs() const noexcept { return n_obs_; }
  std::size_t n_nodes() const noexcept { return n_nodes_; }
  std::size_t max_lag() const noexcept { return max_lag_; }
  const Eigen::MatrixXd& design() const noexcept { return design_; }

  Eigen::Index column_index(std::size_t node_pos, std::size_t lag) const {
    return static_cast<Eigen::Index>(node_pos * (max_lag_ + 1) + lag);
  }

  /// Column indices for lags 1..lag of each listed node, lag-major.
  std::vector<Eigen::Index> regressor_columns(std::span<const std::size_t> node_pos, std::size_t lag) const {
    std::vector<Eigen::Index> cols;
    for (std::size_t l = 1; l <= lag; ++l)
      for (auto k : node_pos) cols.push_back(column_index(k, l));
    return cols;
  }

  struct Solution {
    Eigen::MatrixXd beta;  // regressors × targets
    Eigen::MatrixXd cross; // targetsᵀ·residual cross-products (RSS on the diagonal)
  };

  /// OLS of the lag-0 columns of `targets` on the given regressor columns.
  Solution solve(std::span<const std::size_t> targets, const std::vector<Eigen::Index>& regs) const {
    const auto p = static_cast<Eigen::Index>(regs.size());
    const auto m = static_cast<Eigen::Index>(targets.size());
    Eigen::MatrixXd xtx(p, p), xty(p, m), yty(m, m);
    for (Eigen::Index a = 0; a < p; ++a) {
      for (Eigen::Index b = 0; b < p; ++b) xtx(a, b) = gram_(regs[static_cast<std::size_t>(a)], regs[static_cast<std::size_t>(b)]);
      for (Eigen::Index t = 0; t < m; ++t) xty(a, t) = gram_(regs[static_cast<std::size_t>(a)], column_index(targets[static_cast<std::size_t>(t)], 0));
    }
    for (Eigen::Index s = 0; s < m; ++s)
      for (Eigen::Index t = 0; t < m; ++t)
        yty(s, t) = gram_(column_index(targets[static_cast<std::size_t>(s)], 0), column_index(targets[static_cast<std::size_t>(t)], 0));

    Solution out;
    if (p == 0) {
      out.beta = Eigen::MatrixXd(0, m);
      out.cross = yty;
      return out;
    }
    Eigen::VectorXd scale = xtx.diagonal().cwiseSqrt();
    for (Eigen::Index a = 0; a < p; ++a)
      if (!(scale(a) > 0.0)) throw Error(ErrorKind::SingularDesign, "constant regressor column");
    const Eigen::VectorXd inv = scale.cwiseInverse();
    const Eigen::MatrixXd corr = inv.asDiagonal() * xtx * inv.asDiagonal();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(corr);
    const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || !(d.minCoeff() > kSingularPivot * d.maxCoeff()))
      throw Error(ErrorKind::SingularDesign, "collinear regressors");
    const Eigen::MatrixXd rhs = inv.asDiagonal() * xty;
    Eigen::MatrixXd z = ldlt.solve(rhs);
    // One step of iterative refinement.
    z += ldlt.solve(rhs - corr * z);
    out.beta = inv.asDiagonal() * z;
    out.cross = yty - xty.transpose() * out.beta;
    out.cross = 0.5 * (out.cross + out.cross.transpose()).eval();
    return out;
  }

  /// Residual sum of squares of one target on the given regressors, clamped at 0.
  double rss(std::size_t target, const std::vector<Eigen::Index>& regs) const {
    const std::size_t t[] = {target};
    return std::max(0.0, solve(t, regs).cross(0, 0));
  }

 private:
  std::size_t n_nodes_ = 0;
  std::size_t max_lag_ = 0;
  std::size_t n_obs_ = 0;
  Eigen::MatrixXd design_;
  Eigen::MatrixXd gram_;
};

inline void check_length(const TimeSeriesPanel& panel, std::size_t n_nodes, std::size_t lag) {
  if (lag < 1) throw Error(ErrorKind::InvalidArgument, "lag must be >= 1");
  if (panel.n_steps() <= n_nodes * lag + 1 || panel.n_steps() < 2 * lag + 1)
    throw Error(ErrorKind::TooShort, std::to_string(panel.n_steps()) + " steps cannot support " +
                                         std::to_string(n_nodes) + " nodes at lag " + std::to_string(lag));
}

/// Fits every node in the gram's node set on lags 1..lag of all nodes.
inline VarFit fit_from_gram(const LaggedGram& gram, const TimeSeriesPanel& panel,
                            std::span<const std::size_t> nodes, std::size_t lag) {
  std::vector<std::size_t> pos(nodes.size());
  for (std::size_t k = 0; k < pos.size(); ++k) pos[k] = k;
  const auto regs = gram.regressor_columns(pos, lag);
  const auto sol = gram.solve(pos, regs);

  VarFit fit;
  for (auto n : nodes) fit.included_nodes.push_back(panel.node_ids()[n]);
  fit.lag = lag;
  fit.n_obs = gram.n_obs();
  const auto m = static_cast<Eigen::Index>(nodes.size());
  fit.coeffs.assign(lag, Eigen::MatrixXd::Zero(m, m));
  for (std::size_t l = 1; l <= lag; ++l)
    for (Eigen::Index s = 0; s < m; ++s)
      for (Eigen::Index t = 0; t < m; ++t)
        fit.coeffs[l - 1](t, s) = sol.beta(static_cast<Eigen::Index>((l - 1) * nodes.size()) + s, t);

  Eigen::MatrixXd x(static_cast<Eigen::Index>(gram.n_obs()), static_cast<Eigen::Index>(regs.size()));
  for (std::size_t c = 0; c < regs.size(); ++c) x.col(static_cast<Eigen::Index>(c)) = gram.design().col(regs[c]);
  Eigen::MatrixXd y(static_cast<Eigen::Index>(gram.n_obs()), m);
  for (Eigen::Index t = 0; t < m; ++t) y.col(t) = gram.design().col(gram.column_index(static_cast<std::size_t>(t), 0));
  fit.residuals = y - x * sol.beta;
  fit.resid_var = sol.cross.diagonal().cwiseMax(0.0) / static_cast<double>(gram.n_obs());
  return fit;
}

}  // namespace detail

/// OLS fit of each listed node on lags 1..lag of all listed nodes. Columns are
/// mean-centred (no intercept); residual variance uses the n_obs denominator.
inline VarFit fit_var(const TimeSeriesPanel& panel, std::span<const std::size_t> nodes, std::size_t lag) {
  if (nodes.empty()) throw Error(ErrorKind::InvalidArgument, "no nodes selected");
  detail::check_length(panel, nodes.size(), lag);
  detail::LaggedGram gram(panel, nodes, lag, lag);
  return detail::fit_from_gram(gram, panel, nodes, lag);
}

inline VarFit fit_var(const TimeSeriesPanel& panel, std::initializer_list<std::size_t> nodes, std::size_t lag) {
  std::vector<std::size_t> v(nodes);
  return fit_var(panel, std::span<const std::size_t>(v), lag);
}

/// Univariate AR coefficients from the Yule–Walker equations, solved by the
/// Levinson–Durbin recursion on biased sample autocovariances.
inline Eigen::VectorXd yule_walker_ar(const TimeSeriesPanel& panel, std::size_t node, std::size_t lag) {
  if (node >= panel.n_nodes()) throw Error(ErrorKind::UnknownNode, "node index out of range");
  detail::check_length(panel, 1, lag);
  const auto col = panel.column(node);
  const Eigen::ArrayXd x = col.array() - col.mean();
  const Eigen::Index n = x.size();
  std::vector<double> gamma(lag + 1);
  for (std::size_t k = 0; k <= lag; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    gamma[k] = (x.head(n - kk) * x.tail(n - kk)).sum() / static_cast<double>(n);
  }
  if (!(gamma[0] > 0.0)) throw Error(ErrorKind::SingularDesign, "zero-variance series");

  Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lag));
  Eigen::VectorXd prev = phi;
  double err = gamma[0];
  for (std::size_t m = 1; m <= lag; ++m) {
    double acc = gamma[m];
    for (std::size_t j = 1; j < m; ++j) acc -= prev(static_cast<Eigen::Index>(j - 1)) * gamma[m - j];
    const double reflection = acc / err;
    phi(static_cast<Eigen::Index>(m - 1)) = reflection;
    for (std::size_t j = 1; j < m; ++j)
      phi(static_cast<Eigen::Index>(j - 1)) = prev(static_cast<Eigen::Index>(j - 1)) - reflection * prev(static_cast<Eigen::Index>(m - j - 1));
    err *= (1.0 - reflection * reflection);
    if (!(err > 0.0)) throw Error(ErrorKind::SingularDesign, "autocovariance matrix not positive definite");
    prev = phi;
  }
  return phi;
}

/// Information criterion of a VAR(lag) scored on the common window that starts
/// at `first_t`: AIC = 2k + n·ln det Σ̂, BIC = k·ln n + n·ln det Σ̂, k = m²·lag.
inline double information_criterion(const detail::LaggedGram& gram, std::size_t lag, LagCriterion criterion) {
  std::vector<std::size_t> pos(gram.n_nodes());
  for (std::size_t k = 0; k < pos.size(); ++k) pos[k] = k;
  const auto sol = gram.solve(pos, gram.regressor_columns(pos, lag));
  const double n = static_cast<double>(gram.n_obs());
  const Eigen::MatrixXd sigma = sol.cross / n;
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::SingularDesign, "residual covariance not positive definite");
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double k = static_cast<double>(pos.size() * pos.size() * lag);
  const double penalty = criterion == LagCriterion::aic ? 2.0 * k : k * std::log(n);
  return penalty + n * log_det;
}

struct LagSelection {
  std::size_t lag = 1;
  std::vector<double> scores;  // index l−1 holds the score of lag l
};

/// Scores lags 1..max_lag on the same trailing window of n_steps − max_lag
/// observations and returns the argmin, ties going to the smaller lag.
inline LagSelection select_lag_scored(const TimeSeriesPanel& panel, std::span<const std::size_t> nodes,
                                      std::size_t max_lag, LagCriterion criterion) {
  if (max_lag < 1) throw Error(ErrorKind::InvalidArgument, "max_lag must be >= 1");
  if (criterion == LagCriterion::fixed) throw Error(ErrorKind::InvalidArgument, "select_lag needs aic or bic");
  if (nodes.empty()) throw Error(ErrorKind::InvalidArgument, "no nodes selected");
  detail::check_length(panel, nodes.size(), max_lag);
  detail::LaggedGram gram(panel, nodes, max_lag, max_lag);
  LagSelection sel;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t l = 1; l <= max_lag; ++l) {
    const double score = information_criterion(gram, l, criterion);
    sel.scores.push_back(score);
    if (score < best) {
      best = score;
      sel.lag = l;
    }
  }
  return sel;
}

inline std::size_t select_lag(const TimeSeriesPanel& panel, std::span<const std::size_t> nodes,
                              std::size_t max_lag, LagCriterion criterion) {
  return select_lag_scored(panel, nodes, max_lag, criterion).lag;
}

/// Selects the lag by criterion, then fits on the full sample at that lag.
inline VarFit fit_var_selected(const TimeSeriesPanel& panel, std::span<const std::size_t> nodes,
                               std::size_t max_lag, LagCriterion criterion) {
  const auto sel = select_lag_scored(panel, nodes, max_lag, criterion);
  VarFit fit = fit_var(panel, nodes, sel.lag);
  fit.criterion = criterion;
  fit.criterion_value = sel.scores[sel.lag - 1];
  return fit;
}

inline nlohmann::json to_json(const VarFit& fit) {
  nlohmann::json j;
  j["included_nodes"] = fit.included_nodes;
  j["lag"] = fit.lag;
  j["n_obs"] = fit.n_obs;
  j["criterion"] = std::string(to_string(fit.criterion));
  j["criterion_value"] = std::isfinite(fit.criterion_value) ? nlohmann::json(fit.criterion_value) : nlohmann::json();
  nlohmann::json coeffs = nlohmann::json::array();
  for (const auto& m : fit.coeffs) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row;
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(row);
    }
    coeffs.push_back(rows);
  }
  j["coeffs"] = coeffs;  // [lag][target][source]
  j["resid_var"] = std::vector<double>(fit.resid_var.data(), fit.resid_var.data() + fit.resid_var.size());
  return j;
}

}  // namespace gridcause
