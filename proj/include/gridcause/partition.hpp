#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gridcause/error.hpp"
#include "gridcause/io.hpp"
#include "gridcause/netgraph.hpp"
#include "gridcause/panel.hpp"

namespace gridcause {

enum class PartitionSource { community, gcn };

struct Partition {
  std::vector<std::string> nodes;
  std::vector<std::size_t> labels;  // contiguous region ids from 0
  std::size_t n_regions = 0;
  double modularity = 0.0;
  PartitionSource source = PartitionSource::community;

  std::vector<std::size_t> members(std::size_t region) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == region) out.push_back(i);
    return out;
  }
};

/// Renumbers labels 0, 1, ... in order of first appearance.
inline std::vector<std::size_t> relabel_contiguous(const std::vector<std::size_t>& labels) {
  std::map<std::size_t, std::size_t> remap;
  std::vector<std::size_t> out;
  for (auto l : labels) {
    auto [it, inserted] = remap.emplace(l, remap.size());
    out.push_back(it->second);
  }
  return out;
}

/// Newman modularity Q = (1/2m) Σ_ij (A_ij − d_i d_j / 2m) δ(c_i, c_j), self-loops ignored.
inline double modularity(const Eigen::MatrixXd& adj, const std::vector<std::size_t>& labels) {
  const Eigen::Index n = adj.rows();
  Eigen::MatrixXd a = adj;
  a.diagonal().setZero();
  const Eigen::VectorXd deg = a.rowwise().sum();
  const double two_m = deg.sum();
  if (!(two_m > 0.0)) throw Error(ErrorKind::EmptyGraph, "modularity undefined without edges");
  double q = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)])
        q += a(i, j) - deg(i) * deg(j) / two_m;
  return q / two_m;
}

namespace detail {

/// Single-node moves that raise modularity while keeping every one of the k
/// communities non-empty; runs until no improving move remains.
inline void refine_by_moves(const Eigen::MatrixXd& a, std::vector<std::size_t>& labels, std::size_t k) {
  const Eigen::Index n = a.rows();
  const Eigen::VectorXd deg = a.rowwise().sum();
  const double two_m = deg.sum();
  const double m = two_m / 2.0;
  std::vector<double> comm_deg(k, 0.0);
  std::vector<std::size_t> comm_size(k, 0);
  for (Eigen::Index u = 0; u < n; ++u) {
    comm_deg[labels[static_cast<std::size_t>(u)]] += deg(u);
    comm_size[labels[static_cast<std::size_t>(u)]] += 1;
  }
  for (int sweep = 0; sweep < 1000; ++sweep) {
    bool moved = false;
    for (Eigen::Index u = 0; u < n; ++u) {
      const std::size_t from = labels[static_cast<std::size_t>(u)];
      if (comm_size[from] <= 1) continue;
      std::vector<double> link(k, 0.0);
      for (Eigen::Index v = 0; v < n; ++v)
        if (v != u) link[labels[static_cast<std::size_t>(v)]] += a(u, v);
      double best_gain = 1e-12;
      std::size_t best_to = from;
      for (std::size_t to = 0; to < k; ++to) {
        if (to == from) continue;
        const double gain =
            (link[to] - link[from] - deg(u) * (comm_deg[to] - comm_deg[from] + deg(u)) / two_m) / m;
        if (gain > best_gain) {
          best_gain = gain;
          best_to = to;
        }
      }
      if (best_to != from) {
        labels[static_cast<std::size_t>(u)] = best_to;
        comm_deg[from] -= deg(u);
        comm_deg[best_to] += deg(u);
        comm_size[from] -= 1;
        comm_size[best_to] += 1;
        moved = true;
      }
    }
    if (!moved) break;
  }
}

/// Kernighan-Lin passes: every node moves exactly once per pass, each time
/// taking its best move even when that lowers modularity, and the best prefix
/// of the pass is kept. Escapes the local optima that single improving moves
/// stop in. Communities never empty.
inline void kernighan_lin_refine(const Eigen::MatrixXd& a, std::vector<std::size_t>& labels, std::size_t k) {
  const Eigen::Index n = a.rows();
  const auto N = static_cast<std::size_t>(n);
  const Eigen::VectorXd deg = a.rowwise().sum();
  const double two_m = deg.sum();
  const double m = two_m / 2.0;
  for (int pass = 0; pass < 100; ++pass) {
    Eigen::MatrixXd link = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(k));  // node × community weight
    std::vector<double> comm_deg(k, 0.0);
    std::vector<std::size_t> comm_size(k, 0);
    for (Eigen::Index u = 0; u < n; ++u) {
      const auto c = labels[static_cast<std::size_t>(u)];
      link.col(static_cast<Eigen::Index>(c)) += a.col(u);
      comm_deg[c] += deg(u);
      comm_size[c] += 1;
    }
    std::vector<bool> moved(N, false);
    std::vector<std::size_t> best_labels = labels;
    double running = 0.0, best = 1e-12;
    for (std::size_t step = 0; step < N; ++step) {
      double pick_gain = -std::numeric_limits<double>::infinity();
      Eigen::Index pick_u = -1;
      std::size_t pick_to = 0;
      for (Eigen::Index u = 0; u < n; ++u) {
        const std::size_t from = labels[static_cast<std::size_t>(u)];
        if (moved[static_cast<std::size_t>(u)] || comm_size[from] <= 1) continue;
        for (std::size_t to = 0; to < k; ++to) {
          if (to == from) continue;
          const double gain = (link(u, static_cast<Eigen::Index>(to)) - link(u, static_cast<Eigen::Index>(from)) -
                               deg(u) * (comm_deg[to] - comm_deg[from] + deg(u)) / two_m) / m;
          if (gain > pick_gain) {
            pick_gain = gain;
            pick_u = u;
            pick_to = to;
          }
        }
      }
      if (pick_u < 0) break;
      const std::size_t from = labels[static_cast<std::size_t>(pick_u)];
      labels[static_cast<std::size_t>(pick_u)] = pick_to;
      moved[static_cast<std::size_t>(pick_u)] = true;
      link.col(static_cast<Eigen::Index>(from)) -= a.col(pick_u);
      link.col(static_cast<Eigen::Index>(pick_to)) += a.col(pick_u);
      comm_deg[from] -= deg(pick_u);
      comm_deg[pick_to] += deg(pick_u);
      comm_size[from] -= 1;
      comm_size[pick_to] += 1;
      running += pick_gain;
      if (running > best) {
        best = running;
        best_labels = labels;
      }
    }
    labels = best_labels;
    if (best <= 1e-12) break;
  }
}

}  // namespace detail

namespace detail {

/// Agglomerates singletons by largest modularity gain until k communities
/// remain. Unconnected communities may merge (gain −2·a_i·a_j).
inline std::vector<std::size_t> greedy_agglomerate(const Eigen::MatrixXd& a, std::size_t k) {
  const Eigen::Index n = a.rows();
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) members[static_cast<std::size_t>(i)] = {static_cast<std::size_t>(i)};
  // e(i, j): fraction of edge ends joining communities i and j; ai = row sums.
  Eigen::MatrixXd e = a / a.sum();
  Eigen::VectorXd ai = e.rowwise().sum();
  std::vector<bool> alive(static_cast<std::size_t>(n), true);
  for (std::size_t count = static_cast<std::size_t>(n); count > k; --count) {
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!alive[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        if (!alive[static_cast<std::size_t>(j)]) continue;
        const double gain = 2.0 * (e(i, j) - ai(i) * ai(j));
        if (gain > best + 1e-15) {
          best = gain;
          bi = i;
          bj = j;
        }
      }
    }
    e.row(bi) += e.row(bj);
    e.col(bi) += e.col(bj);
    e.row(bj).setZero();
    e.col(bj).setZero();
    ai(bi) += ai(bj);
    ai(bj) = 0.0;
    auto& dst = members[static_cast<std::size_t>(bi)];
    auto& src = members[static_cast<std::size_t>(bj)];
    dst.insert(dst.end(), src.begin(), src.end());
    src.clear();
    alive[static_cast<std::size_t>(bj)] = false;
  }
  std::vector<std::size_t> labels(static_cast<std::size_t>(n));
  std::size_t next = 0;
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (!alive[c]) continue;
    for (auto v : members[c]) labels[v] = next;
    ++next;
  }
  return labels;
}

/// Repeated leading-eigenvector bisection of the generalized modularity
/// matrix; each step splits the community whose split gains the most.
inline std::vector<std::size_t> spectral_bisect(const Eigen::MatrixXd& a, std::size_t k) {
  const Eigen::Index n = a.rows();
  const Eigen::VectorXd deg = a.rowwise().sum();
  const double two_m = deg.sum();
  const Eigen::MatrixXd b = a - deg * deg.transpose() / two_m;
  std::vector<std::vector<Eigen::Index>> comms(1);
  for (Eigen::Index i = 0; i < n; ++i) comms[0].push_back(i);

  struct Split {
    double gain = -std::numeric_limits<double>::infinity();
    std::vector<Eigen::Index> left, right;
  };
  auto best_split = [&](const std::vector<Eigen::Index>& g) {
    Split s;
    const auto m = static_cast<Eigen::Index>(g.size());
    if (m < 2) return s;
    Eigen::MatrixXd bg(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) bg(i, j) = b(g[i], g[j]);
    for (Eigen::Index i = 0; i < m; ++i) bg(i, i) -= bg.row(i).sum();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(bg);
    const Eigen::VectorXd v = es.eigenvectors().col(m - 1);
    Eigen::VectorXd sign(m);
    for (Eigen::Index i = 0; i < m; ++i) sign(i) = v(i) > 0.0 ? 1.0 : -1.0;
    if (sign.cwiseAbs().sum() == std::abs(sign.sum())) {
      Eigen::Index lo = 0;
      v.minCoeff(&lo);
      sign(lo) = -sign(lo);
    }
    s.gain = sign.dot(bg * sign) / (2.0 * two_m);
    for (Eigen::Index i = 0; i < m; ++i) (sign(i) > 0 ? s.left : s.right).push_back(g[i]);
    return s;
  };
  while (comms.size() < k) {
    Split best;
    std::size_t which = 0;
    for (std::size_t c = 0; c < comms.size(); ++c) {
      auto s = best_split(comms[c]);
      if (s.gain > best.gain) {
        best = std::move(s);
        which = c;
      }
    }
    comms[which] = std::move(best.left);
    comms.push_back(std::move(best.right));
  }
  std::vector<std::size_t> labels(static_cast<std::size_t>(n));
  for (std::size_t c = 0; c < comms.size(); ++c)
    for (auto v : comms[c]) labels[static_cast<std::size_t>(v)] = c;
  return labels;
}

inline constexpr std::size_t kExactPartitionMaxNodes = 12;

/// Exhaustive search over every partition into exactly k non-empty groups,
/// enumerated as restricted growth strings with incremental modularity terms.
/// The first maximizer in enumeration order wins.
inline std::vector<std::size_t> exact_partition(const Eigen::MatrixXd& a, std::size_t k) {
  const auto n = static_cast<std::size_t>(a.rows());
  const Eigen::VectorXd deg = a.rowwise().sum();
  const double two_m = deg.sum();
  std::vector<std::size_t> labels(n, 0), best_labels(n, 0);
  std::vector<double> inside(k, 0.0), comm_deg(k, 0.0);  // inside: in-community weight, both directions
  double best = -std::numeric_limits<double>::infinity();
  auto score = [&] {
    double q = 0.0;
    for (std::size_t c = 0; c < k; ++c) q += inside[c] / two_m - (comm_deg[c] / two_m) * (comm_deg[c] / two_m);
    return q;
  };
  auto rec = [&](auto&& self, std::size_t i, std::size_t used) -> void {
    if (n - i < k - used) return;
    if (i == n) {
      const double q = score();
      if (q > best + 1e-12) {
        best = q;
        best_labels = labels;
      }
      return;
    }
    const auto I = static_cast<Eigen::Index>(i);
    for (std::size_t c = 0; c <= used && c < k; ++c) {
      double add = 0.0;
      for (std::size_t j = 0; j < i; ++j)
        if (labels[j] == c) add += a(I, static_cast<Eigen::Index>(j));
      labels[i] = c;
      inside[c] += 2.0 * add;
      comm_deg[c] += deg(I);
      self(self, i + 1, std::max(used, c + 1));
      inside[c] -= 2.0 * add;
      comm_deg[c] -= deg(I);
    }
  };
  rec(rec, 0, 0);
  return best_labels;
}

}  // namespace detail

/// Modularity-maximizing partition into exactly k communities. Graphs of at
/// most 12 nodes are solved exactly. Larger graphs start from two seeds, greedy
/// agglomeration and spectral bisection, each polished by single-node moves and
/// Kernighan-Lin passes; the higher-modularity result wins, greedy on ties.
inline Partition community_labels(const std::vector<std::string>& nodes, const Eigen::MatrixXd& adjacency,
                                  std::size_t k) {
  const Eigen::Index n = adjacency.rows();
  if (n == 0) throw Error(ErrorKind::EmptyGraph, "no nodes");
  if (adjacency.cols() != n) throw Error(ErrorKind::NonSquare, "adjacency must be square");
  if (static_cast<Eigen::Index>(nodes.size()) != n) throw Error(ErrorKind::ShapeMismatch, "node list size");
  if (k < 1 || static_cast<Eigen::Index>(k) > n)
    throw Error(ErrorKind::InvalidArgument, "k must lie in [1, number of nodes]");
  Eigen::MatrixXd a = 0.5 * (adjacency + adjacency.transpose());
  a.diagonal().setZero();
  if (!(a.sum() > 0.0)) throw Error(ErrorKind::EmptyGraph, "graph has no edges");

  Partition p;
  p.nodes = nodes;
  p.n_regions = k;
  p.source = PartitionSource::community;
  p.modularity = -std::numeric_limits<double>::infinity();
  if (static_cast<std::size_t>(n) <= detail::kExactPartitionMaxNodes) {
    p.labels = relabel_contiguous(detail::exact_partition(a, k));
    p.modularity = modularity(a, p.labels);
    return p;
  }
  for (auto labels : {detail::greedy_agglomerate(a, k), detail::spectral_bisect(a, k)}) {
    detail::refine_by_moves(a, labels, k);
    detail::kernighan_lin_refine(a, labels, k);
    const double q = modularity(a, labels);
    if (q > p.modularity + 1e-12) {
      p.modularity = q;
      p.labels = relabel_contiguous(labels);
    }
  }
  return p;
}

inline Partition community_labels(const CorrGraph& g, std::size_t k) { return community_labels(g.nodes, g.adj, k); }

inline Partition community_labels(const CausalGraph& g, std::size_t k) {
  return community_labels(g.nodes, symmetrized_adjacency(g), k);
}

/// D̂^{-1/2}(A + I)D̂^{-1/2} with D̂ the degree matrix of A + I.
inline Eigen::MatrixXd normalize_adjacency(const Eigen::MatrixXd& adj) {
  if (adj.rows() != adj.cols()) throw Error(ErrorKind::NonSquare, "adjacency must be square");
  if ((adj.array() < 0.0).any()) throw Error(ErrorKind::InvalidArgument, "adjacency must be nonnegative");
  Eigen::MatrixXd a_hat = adj;
  a_hat.diagonal().array() += 1.0;
  const Eigen::VectorXd inv_sqrt = a_hat.rowwise().sum().cwiseSqrt().cwiseInverse();
  return inv_sqrt.asDiagonal() * a_hat * inv_sqrt.asDiagonal();
}

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw Error(ErrorKind::InvalidArgument, "unknown activation '" + std::string(s) + "'");
}

struct TrainMeta {
  double lr = 0.01;
  std::size_t epochs = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t log_every = 50;
};

/// Graph convolutional classifier. weights[l] maps layer l to layer l+1; the
/// widths chain in_features → layer_sizes... → n_classes. biases[l] is a 1×width
/// row added after propagation; all zeros and frozen when the model has no bias.
struct GcnModel {
  std::vector<std::size_t> layer_sizes{4, 4, 2, 2};
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::MatrixXd> biases;
  bool use_bias = false;
  Eigen::MatrixXd norm_adj;
  Activation activation = Activation::relu;
  TrainMeta train_meta;

  std::size_t in_features() const { return static_cast<std::size_t>(weights.front().rows()); }
  std::size_t n_classes() const { return static_cast<std::size_t>(weights.back().cols()); }
};

/// Weights and biases drawn uniformly from ±1/√fan_in.
inline GcnModel make_gcn(const Eigen::MatrixXd& adjacency, std::size_t in_features, std::size_t n_classes,
                         std::vector<std::size_t> layer_sizes, Activation activation, std::uint64_t seed,
                         bool use_bias = false) {
  if (in_features == 0 || n_classes == 0) throw Error(ErrorKind::ShapeMismatch, "empty feature or class dimension");
  GcnModel model;
  model.layer_sizes = std::move(layer_sizes);
  model.norm_adj = normalize_adjacency(adjacency);
  model.activation = activation;
  model.use_bias = use_bias;
  std::vector<std::size_t> dims{in_features};
  dims.insert(dims.end(), model.layer_sizes.begin(), model.layer_sizes.end());
  dims.push_back(n_classes);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(static_cast<Eigen::Index>(dims[l]), static_cast<Eigen::Index>(dims[l + 1]));
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(1, w.cols());
    if (use_bias)
      for (Eigen::Index c = 0; c < b.cols(); ++c) b(0, c) = u(rng);
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  return model;
}

namespace detail {

inline Eigen::MatrixXd activate(const Eigen::MatrixXd& x, Activation a) {
  return a == Activation::relu ? Eigen::MatrixXd(x.cwiseMax(0.0)) : Eigen::MatrixXd(x.array().tanh().matrix());
}

inline Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& pre, Activation a) {
  if (a == Activation::relu) return (pre.array() > 0.0).cast<double>().matrix();
  return (1.0 - pre.array().tanh().square()).matrix();
}

struct ForwardTrace {
  std::vector<Eigen::MatrixXd> propagated;  // Â·K^(l)
  std::vector<Eigen::MatrixXd> pre;         // Â·K^(l)·W^(l) + b^(l)
  Eigen::MatrixXd logits;
};

inline ForwardTrace forward_trace(const GcnModel& model, const Eigen::MatrixXd& features) {
  if (model.weights.empty()) throw Error(ErrorKind::ShapeMismatch, "model has no layers");
  if (features.rows() != model.norm_adj.rows())
    throw Error(ErrorKind::ShapeMismatch, "feature rows must match graph size");
  if (features.cols() != model.weights.front().rows())
    throw Error(ErrorKind::ShapeMismatch, "feature width " + std::to_string(features.cols()) +
                                              " does not match input layer " + std::to_string(model.weights.front().rows()));
  ForwardTrace tr;
  Eigen::MatrixXd h = features;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    tr.propagated.push_back(model.norm_adj * h);
    tr.pre.push_back((tr.propagated.back() * model.weights[l]).rowwise() + model.biases[l].row(0));
    h = l + 1 < model.weights.size() ? activate(tr.pre.back(), model.activation) : tr.pre.back();
  }
  tr.logits = h;
  return tr;
}

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double mx = z.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(i).array() - mx).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

}  // namespace detail

/// K^(l+1) = σ(Â·K^(l)·W^(l) + b^(l)) for every layer but the last, which emits logits.
inline Eigen::MatrixXd gcn_forward(const GcnModel& model, const Eigen::MatrixXd& features) {
  return detail::forward_trace(model, features).logits;
}

inline std::vector<std::size_t> predict_labels(const Eigen::MatrixXd& logits) {
  std::vector<std::size_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arg);
  }
  return out;
}

struct GcnLossGrad {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> grads;       // one per weight matrix
  std::vector<Eigen::MatrixXd> bias_grads;  // zero when the model has no bias
};

/// Mean softmax cross-entropy over `mask` and its gradient with respect to
/// every weight matrix, by reverse-mode differentiation of the forward pass.
inline GcnLossGrad gcn_loss_and_grad(const GcnModel& model, const Eigen::MatrixXd& features,
                                     const std::vector<std::size_t>& labels, const std::vector<std::size_t>& mask) {
  if (mask.empty()) throw Error(ErrorKind::EmptyMask, "loss mask is empty");
  const auto tr = detail::forward_trace(model, features);
  const Eigen::MatrixXd prob = detail::softmax_rows(tr.logits);
  const double inv = 1.0 / static_cast<double>(mask.size());
  GcnLossGrad out;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(tr.logits.rows(), tr.logits.cols());
  for (auto i : mask) {
    const auto I = static_cast<Eigen::Index>(i);
    const auto y = static_cast<Eigen::Index>(labels.at(i));
    if (y >= tr.logits.cols()) throw Error(ErrorKind::ShapeMismatch, "label exceeds class count");
    out.loss -= std::log(std::max(prob(I, y), std::numeric_limits<double>::min())) * inv;
    d.row(I) = prob.row(I) * inv;
    d(I, y) -= inv;
  }
  out.grads.resize(model.weights.size());
  out.bias_grads.resize(model.weights.size());
  for (std::size_t l = model.weights.size(); l-- > 0;) {
    out.grads[l] = tr.propagated[l].transpose() * d;
    out.bias_grads[l] = model.use_bias ? Eigen::MatrixXd(d.colwise().sum()) : Eigen::MatrixXd::Zero(1, d.cols());
    if (l == 0) break;
    // Â is symmetric, so the propagation transpose is Â itself.
    const Eigen::MatrixXd dh = model.norm_adj * d * model.weights[l].transpose();
    d = dh.cwiseProduct(detail::activation_grad(tr.pre[l - 1], model.activation));
  }
  return out;
}

inline double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels,
                       const std::vector<std::size_t>& mask) {
  if (mask.empty()) return 0.0;
  std::size_t hit = 0;
  for (auto i : mask) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(mask.size());
}

struct TrainLogEntry {
  std::size_t epoch = 0;
  double loss = 0.0;
  double test_accuracy = 0.0;
};

struct GcnTrainResult {
  GcnModel model;
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::vector<std::size_t> predictions;
  std::vector<double> loss_history;  // training loss before each update
  std::vector<TrainLogEntry> log;    // every log_every epochs
};

struct GcnConfig {
  std::vector<std::size_t> layer_sizes{4, 4, 2, 2};
  Activation activation = Activation::relu;
  bool bias = false;
  TrainMeta meta;
  std::uint64_t seed = 0;
};

/// Full-batch Adam on the masked cross-entropy. Returns the final model and
/// its held-out accuracy on `test_mask`.
inline GcnTrainResult gcn_train(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& features,
                                const Partition& labels, const std::vector<std::size_t>& train_mask,
                                const std::vector<std::size_t>& test_mask, const GcnConfig& cfg = {}) {
  if (train_mask.empty()) throw Error(ErrorKind::EmptyMask, "train mask is empty");
  if (test_mask.empty()) throw Error(ErrorKind::EmptyMask, "test mask is empty");
  const std::set<std::size_t> train_set(train_mask.begin(), train_mask.end());
  for (auto i : test_mask)
    if (train_set.count(i)) throw Error(ErrorKind::InvalidArgument, "train and test masks overlap");
  if (static_cast<std::size_t>(features.rows()) != labels.labels.size() || adjacency.rows() != features.rows())
    throw Error(ErrorKind::ShapeMismatch, "graph, features and labels disagree on node count");
  for (auto i : train_mask)
    if (i >= labels.labels.size()) throw Error(ErrorKind::ShapeMismatch, "mask index out of range");
  for (auto i : test_mask)
    if (i >= labels.labels.size()) throw Error(ErrorKind::ShapeMismatch, "mask index out of range");

  const std::size_t n_classes = std::max<std::size_t>(
      labels.n_regions, *std::max_element(labels.labels.begin(), labels.labels.end()) + 1);
  GcnTrainResult res;
  res.model = make_gcn(adjacency, static_cast<std::size_t>(features.cols()), n_classes, cfg.layer_sizes,
                       cfg.activation, cfg.seed, cfg.bias);
  res.model.train_meta = cfg.meta;
  auto& model = res.model;
  const auto& meta = cfg.meta;

  // Parameters in a fixed order: all weights, then all biases.
  std::vector<Eigen::MatrixXd*> params;
  for (auto& w : model.weights) params.push_back(&w);
  for (auto& b : model.biases) params.push_back(&b);
  std::vector<Eigen::MatrixXd> m1, m2;
  for (const auto* p : params) {
    m1.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    m2.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
  }
  double b1t = 1.0, b2t = 1.0;
  for (std::size_t epoch = 0; epoch < meta.epochs; ++epoch) {
    const auto lg = gcn_loss_and_grad(model, features, labels.labels, train_mask);
    res.loss_history.push_back(lg.loss);
    if (meta.log_every > 0 && epoch % meta.log_every == 0) {
      const auto pred = predict_labels(gcn_forward(model, features));
      res.log.push_back({epoch, lg.loss, accuracy(pred, labels.labels, test_mask)});
    }
    b1t *= meta.beta1;
    b2t *= meta.beta2;
    const std::size_t n_layers = model.weights.size();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (i >= n_layers && !model.use_bias) break;
      const auto& g = i < n_layers ? lg.grads[i] : lg.bias_grads[i - n_layers];
      m1[i] = meta.beta1 * m1[i] + (1.0 - meta.beta1) * g;
      m2[i] = meta.beta2 * m2[i] + (1.0 - meta.beta2) * g.cwiseProduct(g);
      const Eigen::MatrixXd m_hat = m1[i] / (1.0 - b1t);
      const Eigen::MatrixXd v_hat = m2[i] / (1.0 - b2t);
      params[i]->array() -= meta.lr * m_hat.array() / (v_hat.array().sqrt() + meta.eps);
    }
  }
  res.predictions = predict_labels(gcn_forward(model, features));
  res.test_accuracy = accuracy(res.predictions, labels.labels, test_mask);
  res.train_accuracy = accuracy(res.predictions, labels.labels, train_mask);
  return res;
}

struct SplitMasks {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-label shuffle, then round(train_fraction·count) nodes of each label
/// (at least one) go to training.
inline SplitMasks stratified_split(const std::vector<std::size_t>& labels, double train_fraction, std::uint64_t seed) {
  std::map<std::size_t, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  SplitMasks out;
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size()))), 1, idx.size());
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  if (out.test.empty()) throw Error(ErrorKind::EmptyMask, "split leaves no test nodes");
  return out;
}

/// Correlation rows with each column standardized over nodes (zero mean, unit
/// variance; constant columns stay zero), so features take both signs at O(1).
inline Eigen::MatrixXd node_features(const CorrGraph& g) {
  Eigen::MatrixXd x = g.r.rowwise() - g.r.colwise().mean();
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double sd = std::sqrt(x.col(c).squaredNorm() / static_cast<double>(x.rows()));
    if (sd > 0.0) x.col(c) /= sd;
  }
  return x;
}

struct PipelineOptions {
  double tau = 0.0;
  double train_fraction = 0.7;
  GcnConfig gcn;
};

struct PipelineResult {
  CorrGraph graph;
  Partition community;
  Partition gcn;
  double accuracy = 0.0;  // GCN held-out accuracy against the community labels
  SplitMasks split;
  GcnTrainResult training;
};

/// Correlation graph → modularity communities (training labels) → GCN on
/// correlation-row features → predicted regions for every node.
inline PipelineResult partition_pipeline(const TimeSeriesPanel& panel, std::size_t k, const PipelineOptions& opts = {},
                                         const Partition* given_labels = nullptr) {
  PipelineResult out;
  out.graph = build_corr_graph(panel, opts.tau);
  if (given_labels) {
    if (given_labels->nodes != panel.node_ids())
      throw Error(ErrorKind::UnknownNode, "label node ids do not match the panel");
    out.community = *given_labels;
  } else {
    out.community = community_labels(out.graph, k);
  }
  out.split = stratified_split(out.community.labels, opts.train_fraction, opts.gcn.seed);
  const Eigen::MatrixXd features = node_features(out.graph);
  out.training = gcn_train(out.graph.adj, features, out.community, out.split.train, out.split.test, opts.gcn);
  out.accuracy = out.training.test_accuracy;
  out.gcn.nodes = panel.node_ids();
  out.gcn.labels = relabel_contiguous(out.training.predictions);
  out.gcn.n_regions = *std::max_element(out.gcn.labels.begin(), out.gcn.labels.end()) + 1;
  out.gcn.modularity = out.graph.edge_count() > 0 ? modularity(out.graph.adj, out.gcn.labels) : 0.0;
  out.gcn.source = PartitionSource::gcn;
  return out;
}

inline std::string partition_csv(const Partition& p) {
  std::string out = "node_id,region\n";
  for (std::size_t i = 0; i < p.nodes.size(); ++i) out += p.nodes[i] + "," + std::to_string(p.labels[i]) + "\n";
  return out;
}

/// Reads `node_id,region` CSV (regions renumbered contiguously).
inline Partition parse_partition_csv(std::string_view text) {
  Partition p;
  std::vector<std::size_t> raw;
  std::size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    auto line = text.substr(start, pos == std::string_view::npos ? text.npos : pos - start);
    start = pos == std::string_view::npos ? text.size() : pos + 1;
    if (line.empty() || line == "\r") continue;
    auto f = io::split_csv_line(line);
    if (header) {
      header = false;
      if (f.size() >= 2 && f[0] == "node_id") continue;
    }
    if (f.size() != 2) throw Error(ErrorKind::RaggedRows, "partition rows need node_id,region");
    auto v = io::parse_double(f[1]);
    if (!v || *v < 0 || std::floor(*v) != *v) throw Error(ErrorKind::UnparseableNumber, "region '" + f[1] + "'");
    p.nodes.push_back(f[0]);
    raw.push_back(static_cast<std::size_t>(*v));
  }
  if (p.nodes.empty()) throw Error(ErrorKind::TooShort, "empty partition file");
  p.labels = relabel_contiguous(raw);
  p.n_regions = *std::max_element(p.labels.begin(), p.labels.end()) + 1;
  return p;
}

inline nlohmann::json to_json(const GcnModel& model) {
  nlohmann::json j;
  j["layer_sizes"] = model.layer_sizes;
  j["activation"] = std::string(to_string(model.activation));
  j["train_meta"] = {{"lr", model.train_meta.lr},
                     {"epochs", model.train_meta.epochs},
                     {"loss", "cross-entropy"},
                     {"optimizer", "adam"},
                     {"beta1", model.train_meta.beta1},
                     {"beta2", model.train_meta.beta2},
                     {"eps", model.train_meta.eps}};
  auto nested = [](const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row;
      for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
      rows.push_back(row);
    }
    return rows;
  };
  j["bias"] = model.use_bias;
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (const auto& w : model.weights) j["weights"].push_back(nested(w));
  for (const auto& b : model.biases) j["biases"].push_back(nested(b).at(0));
  return j;
}

}  // namespace gridcause
