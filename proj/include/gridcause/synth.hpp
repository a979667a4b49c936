#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridcause/error.hpp"
#include "gridcause/panel.hpp"

namespace gridcause {

struct CouplingEdge {
  std::size_t source = 0;
  std::size_t target = 0;
  double coefficient = 0.0;
  std::size_t lag = 1;

  friend bool operator==(const CouplingEdge&, const CouplingEdge&) = default;
};

/// Planted vector-autoregressive generator: a ground-truth substitute for
/// feeder simulation output. Node `i` is named by synth_node_id(i, n_nodes).
struct SynthSpec {
  std::size_t n_nodes = 0;
  std::size_t n_steps = 0;
  std::vector<CouplingEdge> coupling_edges;
  std::vector<double> noise_sigma;  // per node, kW
  std::vector<double> base_ar;      // per node lag-1 self coefficient
  std::set<std::size_t> der_nodes;
  double der_gamma = 1.0;
  std::uint64_t seed = 0;

  std::size_t max_lag() const {
    std::size_t m = 1;
    for (const auto& e : coupling_edges) m = std::max(m, e.lag);
    return m;
  }

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

inline std::string synth_node_id(std::size_t index, std::size_t n_nodes) {
  std::size_t width = 1;
  for (std::size_t v = n_nodes; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(index + 1);
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return "Meter-" + digits;
}

inline std::vector<std::string> synth_node_ids(const SynthSpec& spec) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < spec.n_nodes; ++i) ids.push_back(synth_node_id(i, spec.n_nodes));
  return ids;
}

inline std::size_t synth_node_index(const SynthSpec& spec, std::string_view id) {
  for (std::size_t i = 0; i < spec.n_nodes; ++i)
    if (synth_node_id(i, spec.n_nodes) == id) return i;
  throw Error(ErrorKind::UnknownNode, std::string(id));
}

/// Per-lag coefficient matrices (target row, source column) after DER
/// attenuation: couplings with a DER endpoint are scaled by der_gamma.
inline std::vector<Eigen::MatrixXd> effective_coefficients(const SynthSpec& spec) {
  const auto n = static_cast<Eigen::Index>(spec.n_nodes);
  std::vector<Eigen::MatrixXd> lags(spec.max_lag(), Eigen::MatrixXd::Zero(n, n));
  for (std::size_t i = 0; i < spec.n_nodes; ++i)
    lags[0](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) += spec.base_ar[i];
  for (const auto& e : spec.coupling_edges) {
    const bool attenuated = spec.der_nodes.count(e.source) || spec.der_nodes.count(e.target);
    lags[e.lag - 1](static_cast<Eigen::Index>(e.target), static_cast<Eigen::Index>(e.source)) +=
        e.coefficient * (attenuated ? spec.der_gamma : 1.0);
  }
  return lags;
}

inline double spectral_radius(const std::vector<Eigen::MatrixXd>& lags) {
  const Eigen::Index n = lags.front().rows();
  const auto p = static_cast<Eigen::Index>(lags.size());
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n * p, n * p);
  for (Eigen::Index l = 0; l < p; ++l) companion.block(0, l * n, n, n) = lags[static_cast<std::size_t>(l)];
  if (p > 1) companion.block(n, 0, n * (p - 1), n * (p - 1)).setIdentity();
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

inline void validate(const SynthSpec& spec) {
  if (spec.n_nodes == 0) throw Error(ErrorKind::InvalidSpec, "n_nodes must be positive");
  if (spec.n_steps < 2) throw Error(ErrorKind::InvalidSpec, "n_steps must be at least 2");
  if (spec.noise_sigma.size() != spec.n_nodes || spec.base_ar.size() != spec.n_nodes)
    throw Error(ErrorKind::InvalidSpec, "noise_sigma and base_ar need one entry per node");
  for (double s : spec.noise_sigma)
    if (!(s >= 0.0) || !std::isfinite(s)) throw Error(ErrorKind::InvalidSpec, "noise_sigma must be finite and >= 0");
  if (!(spec.der_gamma >= 0.0 && spec.der_gamma <= 1.0))
    throw Error(ErrorKind::InvalidSpec, "der_gamma must lie in [0, 1]");
  for (const auto& e : spec.coupling_edges) {
    if (e.lag < 1) throw Error(ErrorKind::InvalidSpec, "coupling lags must be >= 1");
    if (e.source >= spec.n_nodes || e.target >= spec.n_nodes)
      throw Error(ErrorKind::UnknownNode, "coupling edge endpoint out of range");
    if (!std::isfinite(e.coefficient)) throw Error(ErrorKind::InvalidSpec, "non-finite coefficient");
  }
  for (auto d : spec.der_nodes)
    if (d >= spec.n_nodes) throw Error(ErrorKind::UnknownNode, "DER node out of range");
  const double rho = spectral_radius(effective_coefficients(spec));
  if (!(rho < 1.0))
    throw Error(ErrorKind::UnstableSpec, "companion spectral radius " + std::to_string(rho) + " >= 1");
}

/// Simulates x_i(t) = base_ar_i·x_i(t−1) + Σ coeff·x_src(t−lag) + σ_i·z_i(t).
/// Innovations are drawn in fixed (step, node) order from one seeded stream,
/// so specs differing only in coefficients share the same noise. The first
/// 10·max_lag steps are discarded as warm-up.
inline TimeSeriesPanel synthesize(const SynthSpec& spec) {
  validate(spec);
  const auto lags = effective_coefficients(spec);
  const auto n = static_cast<Eigen::Index>(spec.n_nodes);
  const auto p = static_cast<Eigen::Index>(lags.size());
  const Eigen::Index warm = 10 * p;
  const Eigen::Index total = warm + static_cast<Eigen::Index>(spec.n_steps);

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(total, n);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd row(n);
  for (Eigen::Index t = 0; t < total; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) row(i) = spec.noise_sigma[static_cast<std::size_t>(i)] * normal(rng);
    for (Eigen::Index l = 1; l <= p && l <= t; ++l)
      row.noalias() += lags[static_cast<std::size_t>(l - 1)] * x.row(t - l).transpose();
    x.row(t) = row.transpose();
  }
  return TimeSeriesPanel(synth_node_ids(spec), x.bottomRows(static_cast<Eigen::Index>(spec.n_steps)));
}

// JSON (field names as in SynthSpec; node references by id).

inline nlohmann::json to_json(const SynthSpec& spec) {
  nlohmann::json j;
  j["n_nodes"] = spec.n_nodes;
  j["n_steps"] = spec.n_steps;
  j["coupling_edges"] = nlohmann::json::array();
  for (const auto& e : spec.coupling_edges)
    j["coupling_edges"].push_back({{"source", synth_node_id(e.source, spec.n_nodes)},
                                   {"target", synth_node_id(e.target, spec.n_nodes)},
                                   {"coefficient", e.coefficient},
                                   {"lag", e.lag}});
  j["noise_sigma"] = spec.noise_sigma;
  j["base_ar"] = spec.base_ar;
  j["der_nodes"] = nlohmann::json::array();
  for (auto d : spec.der_nodes) j["der_nodes"].push_back(synth_node_id(d, spec.n_nodes));
  j["der_gamma"] = spec.der_gamma;
  j["seed"] = spec.seed;
  return j;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  try {
    SynthSpec spec;
    spec.n_nodes = j.at("n_nodes").get<std::size_t>();
    spec.n_steps = j.at("n_steps").get<std::size_t>();
    auto node_ref = [&](const nlohmann::json& v) -> std::size_t {
      if (v.is_number_integer()) return v.get<std::size_t>();
      return synth_node_index(spec, v.get<std::string>());
    };
    auto per_node = [&](const char* key, double fallback) {
      if (!j.contains(key)) return std::vector<double>(spec.n_nodes, fallback);
      const auto& v = j.at(key);
      if (v.is_number()) return std::vector<double>(spec.n_nodes, v.get<double>());
      return v.get<std::vector<double>>();
    };
    if (j.contains("coupling_edges"))
      for (const auto& e : j.at("coupling_edges"))
        spec.coupling_edges.push_back({node_ref(e.at("source")), node_ref(e.at("target")),
                                       e.at("coefficient").get<double>(),
                                       e.value("lag", std::size_t{1})});
    spec.noise_sigma = per_node("noise_sigma", 1.0);
    spec.base_ar = per_node("base_ar", 0.0);
    if (j.contains("der_nodes"))
      for (const auto& d : j.at("der_nodes")) spec.der_nodes.insert(node_ref(d));
    spec.der_gamma = j.value("der_gamma", 1.0);
    spec.seed = j.value("seed", std::uint64_t{0});
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, e.what());
  }
}

// Built-in planted specs.

/// One microgrid region: `n_drivers` driver nodes each feeding
/// `fanout` follower nodes at lag 1 with coefficients in [0.5, 0.8].
inline SynthSpec planted_region_spec(std::uint64_t seed, std::size_t n_nodes = 16,
                                     std::size_t n_drivers = 4, std::size_t fanout = 4,
                                     std::size_t n_steps = 10000) {
  if (n_drivers == 0 || n_drivers >= n_nodes) throw Error(ErrorKind::InvalidSpec, "need 0 < drivers < nodes");
  SynthSpec spec;
  spec.n_nodes = n_nodes;
  spec.n_steps = n_steps;
  spec.noise_sigma.assign(n_nodes, 1.0);
  spec.base_ar.assign(n_nodes, 0.2);
  spec.seed = seed;
  // Drivers are spread through the id range rather than occupying the first slots.
  std::vector<std::size_t> drivers;
  for (std::size_t d = 0; d < n_drivers; ++d) drivers.push_back((d * n_nodes) / n_drivers + 1);
  std::vector<std::size_t> followers;
  for (std::size_t i = 0; i < n_nodes; ++i)
    if (std::find(drivers.begin(), drivers.end(), i) == drivers.end()) followers.push_back(i);
  for (std::size_t d = 0; d < n_drivers; ++d)
    for (std::size_t k = 0; k < fanout; ++k) {
      const std::size_t f = followers[(d * (followers.size() / n_drivers) + k) % followers.size()];
      const double coeff = 0.5 + 0.1 * static_cast<double>((d + k) % 4);
      spec.coupling_edges.push_back({drivers[d], f, coeff, 1});
    }
  return spec;
}

inline std::vector<std::size_t> planted_drivers(const SynthSpec& spec) {
  std::set<std::size_t> s;
  for (const auto& e : spec.coupling_edges) s.insert(e.source);
  return {s.begin(), s.end()};
}

/// Two independent blocks. Inside each block a lead driver feeds five
/// sub-drivers and each sub-driver feeds two followers, so in-block columns are
/// positively correlated through several partly independent factors.
inline SynthSpec two_block_spec(std::uint64_t seed, std::size_t per_block = 18,
                                std::size_t n_steps = 10000) {
  constexpr std::size_t kDrivers = 6;
  if (per_block < kDrivers) throw Error(ErrorKind::InvalidSpec, "blocks need at least 6 nodes");
  SynthSpec spec;
  spec.n_nodes = 2 * per_block;
  spec.n_steps = n_steps;
  spec.noise_sigma.assign(spec.n_nodes, 1.0);
  spec.base_ar.assign(spec.n_nodes, 0.2);
  spec.seed = seed;
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t first = b * per_block;
    std::vector<std::size_t> drivers;
    for (std::size_t d = 0; d < kDrivers; ++d) drivers.push_back(first + d * per_block / kDrivers);
    for (std::size_t d = 1; d < kDrivers; ++d) spec.coupling_edges.push_back({drivers[0], drivers[d], 0.5, 1});
    for (std::size_t i = 0; i < per_block; ++i) {
      const std::size_t node = first + i;
      if (std::find(drivers.begin(), drivers.end(), node) != drivers.end()) continue;
      spec.coupling_edges.push_back({drivers[i * kDrivers / per_block], node, 0.7, 1});
    }
  }
  return spec;
}

/// Default demonstration feeder: 36 metered nodes in two regions of 18. Each
/// region has four drivers; the first driver of a region feeds the other three
/// weakly, and each driver feeds four followers strongly.
inline SynthSpec demo_spec(std::uint64_t seed, std::size_t n_steps = 10000, double der_gamma = 0.2) {
  SynthSpec spec;
  constexpr std::size_t kPerRegion = 18;
  spec.n_nodes = 2 * kPerRegion;
  spec.n_steps = n_steps;
  spec.noise_sigma.assign(spec.n_nodes, 1.0);
  spec.base_ar.assign(spec.n_nodes, 0.2);
  spec.der_gamma = der_gamma;
  spec.seed = seed;
  const std::size_t driver_offsets[] = {1, 6, 10, 14};
  for (std::size_t r = 0; r < 2; ++r) {
    const std::size_t base = r * kPerRegion;
    std::vector<std::size_t> drivers, followers;
    for (auto o : driver_offsets) drivers.push_back(base + o);
    for (std::size_t i = 0; i < kPerRegion; ++i)
      if (std::find(drivers.begin(), drivers.end(), base + i) == drivers.end()) followers.push_back(base + i);
    for (std::size_t d = 1; d < drivers.size(); ++d) spec.coupling_edges.push_back({drivers[0], drivers[d], 0.3, 1});
    for (std::size_t d = 0; d < drivers.size(); ++d)
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t f = followers[(d * 4 + k) % followers.size()];
        spec.coupling_edges.push_back({drivers[d], f, 0.5 + 0.1 * static_cast<double>((d + k) % 3), 1});
      }
  }
  return spec;
}

}  // namespace gridcause
