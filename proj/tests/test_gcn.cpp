#include <gtest/gtest.h>

#include <numeric>

#include "gridcause/partition.hpp"
#include "support.hpp"

using namespace gridcause;

namespace {

Eigen::MatrixXd four_node_graph() {
  Eigen::MatrixXd a(4, 4);
  a << 0, 1, 1, 0,
       1, 0, 1, 0,
       1, 1, 0, 1,
       0, 0, 1, 0;
  return a;
}

Eigen::MatrixXd random_features(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd x(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) x(i, j) = g(rng);
  return x;
}

double loss_of(const GcnModel& m, const Eigen::MatrixXd& x, const std::vector<std::size_t>& y,
               const std::vector<std::size_t>& mask) {
  return gcn_loss_and_grad(m, x, y, mask).loss;
}

// Worst relative error of analytic gradients against central differences.
double gradient_check(GcnModel model, const Eigen::MatrixXd& x, const std::vector<std::size_t>& y,
                      const std::vector<std::size_t>& mask) {
  const double h = 1e-5;
  const auto analytic = gcn_loss_and_grad(model, x, y, mask);
  double worst = 0.0;
  auto compare = [&](Eigen::MatrixXd& param, const Eigen::MatrixXd& grad) {
    Eigen::MatrixXd numeric(param.rows(), param.cols());
    for (Eigen::Index r = 0; r < param.rows(); ++r)
      for (Eigen::Index c = 0; c < param.cols(); ++c) {
        const double keep = param(r, c);
        param(r, c) = keep + h;
        const double up = loss_of(model, x, y, mask);
        param(r, c) = keep - h;
        const double down = loss_of(model, x, y, mask);
        param(r, c) = keep;
        numeric(r, c) = (up - down) / (2.0 * h);
      }
    const double scale = std::max({grad.norm(), numeric.norm(), 1e-12});
    worst = std::max(worst, (grad - numeric).norm() / scale);
  };
  for (std::size_t l = 0; l < model.weights.size(); ++l) compare(model.weights[l], analytic.grads[l]);
  if (model.use_bias)
    for (std::size_t l = 0; l < model.biases.size(); ++l) compare(model.biases[l], analytic.bias_grads[l]);
  return worst;
}

Eigen::MatrixXd permutation(const std::vector<Eigen::Index>& order) {
  const auto n = static_cast<Eigen::Index>(order.size());
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) p(i, order[static_cast<std::size_t>(i)]) = 1.0;
  return p;
}

Partition clique_labels(std::size_t size) {
  Partition p;
  p.nodes = testsupport::ids(2 * size);
  for (std::size_t i = 0; i < 2 * size; ++i) p.labels.push_back(i < size ? 0 : 1);
  p.n_regions = 2;
  return p;
}

// Adjacency rows with self-loops as node features: a similarity index.
Eigen::MatrixXd clique_features(const Eigen::MatrixXd& a) {
  return a + Eigen::MatrixXd::Identity(a.rows(), a.cols());
}

}  // namespace

TEST(GcnGradient, TwoLayerMatchesCentralDifferences) {
  for (auto act : {Activation::relu, Activation::tanh})
    for (bool bias : {false, true})
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto model = make_gcn(four_node_graph(), 3, 2, {3}, act, seed, bias);
        const auto x = random_features(4, 3, seed + 100);
        EXPECT_LT(gradient_check(model, x, {0, 1, 1, 0}, {0, 1, 2, 3}), 1e-4)
            << to_string(act) << " bias " << bias << " seed " << seed;
      }
}

TEST(GcnGradient, DefaultDepthAndPartialMask) {
  auto model = make_gcn(four_node_graph(), 4, 2, {4, 4, 2, 2}, Activation::tanh, 7);
  EXPECT_LT(gradient_check(model, random_features(4, 4, 8), {1, 0, 1, 0}, {0, 3}), 1e-4);
}

TEST(GcnModelShape, WeightsChain) {
  auto model = make_gcn(testsupport::two_cliques(5), 10, 3, {4, 4, 2, 2}, Activation::relu, 1);
  ASSERT_EQ(model.weights.size(), 5u);
  const std::vector<std::pair<long, long>> shapes{{10, 4}, {4, 4}, {4, 2}, {2, 2}, {2, 3}};
  for (std::size_t l = 0; l < 5; ++l) {
    EXPECT_EQ(model.weights[l].rows(), shapes[l].first);
    EXPECT_EQ(model.weights[l].cols(), shapes[l].second);
    EXPECT_LE(model.weights[l].cwiseAbs().maxCoeff(), 1.0 / std::sqrt(static_cast<double>(shapes[l].first)));
    EXPECT_EQ(model.biases[l].squaredNorm(), 0.0);
  }
  EXPECT_EQ(model.in_features(), 10u);
  EXPECT_EQ(model.n_classes(), 3u);
}

TEST(GcnModelShape, NormAdjEntries) {
  const auto a = testsupport::two_cliques(3);
  auto model = make_gcn(a, 6, 2, {4}, Activation::relu, 1);
  const Eigen::VectorXd d = a.rowwise().sum().array() + 1.0;
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 6; ++j)
      EXPECT_NEAR(model.norm_adj(i, j), (a(i, j) + (i == j)) / std::sqrt(d(i) * d(j)), 1e-15);
}

TEST(GcnForward, PermutationEquivariant) {
  for (bool bias : {false, true})
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const auto a = testsupport::random_graph(12, 0.3, seed);
      const auto x = random_features(12, 5, seed);
      std::vector<Eigen::Index> order(12);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
      const auto p = permutation(order);
      auto model = make_gcn(a, 5, 2, {4, 4, 2, 2}, Activation::tanh, seed, bias);
      auto permuted = model;
      permuted.norm_adj = normalize_adjacency(p * a * p.transpose());
      const Eigen::MatrixXd lhs = gcn_forward(permuted, p * x);
      const Eigen::MatrixXd rhs = p * gcn_forward(model, x);
      EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(GcnForward, IdentityPropagationIsPerNodeMlp) {
  auto model = make_gcn(Eigen::MatrixXd::Zero(5, 5), 3, 2, {4, 4}, Activation::relu, 3);
  EXPECT_EQ(model.norm_adj, Eigen::MatrixXd::Identity(5, 5));
  const auto x = random_features(5, 3, 4);
  const auto out = gcn_forward(model, x);
  for (Eigen::Index i = 0; i < 5; ++i) {
    Eigen::RowVectorXd h = x.row(i);
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
      h = h * model.weights[l];
      if (l + 1 < model.weights.size()) h = h.cwiseMax(0.0);
    }
    EXPECT_LT((out.row(i) - h).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(GcnForward, ZeroWeightsUniformSoftmax) {
  auto model = make_gcn(testsupport::two_cliques(3), 4, 3, {4}, Activation::relu, 1);
  for (auto& w : model.weights) w.setZero();
  const auto logits = gcn_forward(model, random_features(6, 4, 1));
  EXPECT_EQ(logits.cwiseAbs().maxCoeff(), 0.0);
  const auto p = detail::softmax_rows(logits);
  EXPECT_TRUE(p.isApprox(Eigen::MatrixXd::Constant(6, 3, 1.0 / 3.0), 1e-15));
}

TEST(GcnForward, ShapeMismatch) {
  auto model = make_gcn(testsupport::two_cliques(3), 4, 2, {4}, Activation::relu, 1);
  try {
    gcn_forward(model, Eigen::MatrixXd::Zero(6, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW(gcn_forward(model, Eigen::MatrixXd::Zero(5, 4)), Error);
}

// Default depth and widths. With ReLU and no bias, units of the 2-wide layers
// are often dead at initialization, which zeroes every output row.
int smoothing_wins(Activation act) {
  const auto a = testsupport::two_cliques(5);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(10, 2);
  for (Eigen::Index i = 0; i < 10; ++i) x(i, i < 5 ? 0 : 1) = 1.0;
  auto cosine = [](const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& v) {
    const double d = u.norm() * v.norm();
    return d > 0.0 ? u.dot(v) / d : 0.0;
  };
  int wins = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    auto model = make_gcn(a, 2, 2, {4, 4, 2, 2}, act, seed);
    const auto out = gcn_forward(model, x);
    double within = 0.0, across = 0.0;
    int nw = 0, na = 0;
    for (Eigen::Index i = 0; i < 10; ++i)
      for (Eigen::Index j = i + 1; j < 10; ++j) {
        const double c = cosine(out.row(i), out.row(j));
        if ((i < 5) == (j < 5)) {
          within += c;
          ++nw;
        } else {
          across += c;
          ++na;
        }
      }
    wins += within / nw > across / na;
  }
  return wins;
}

TEST(GcnForward, TwoCliqueSmoothingRelu) { EXPECT_GT(smoothing_wins(Activation::relu), 25); }
TEST(GcnForward, TwoCliqueSmoothingTanh) { EXPECT_GT(smoothing_wins(Activation::tanh), 25); }

TEST(GcnForward, OneLayerReluSmoothing) {
  const auto a = testsupport::two_cliques(5);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(10, 2);
  for (Eigen::Index i = 0; i < 10; ++i) x(i, i < 5 ? 0 : 1) = 1.0;
  auto model = make_gcn(a, 2, 2, {}, Activation::relu, 1);
  const auto out = gcn_forward(model, x);
  // Rows of one clique apart from the bridge node are identical after one propagation.
  EXPECT_LT((out.row(1) - out.row(4)).norm(), 1e-15);
  EXPECT_GT((out.row(1) - out.row(6)).norm(), 1e-3);
}

struct ToyOutcome {
  int perfect = 0;
  int monotone = 0;
};

// 10-node two-clique graph, 60/40 stratified split, default hyperparameters.
ToyOutcome toy_problem(Activation act) {
  const auto a = testsupport::two_cliques(5);
  const auto labels = clique_labels(5);
  ToyOutcome out;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto split = stratified_split(labels.labels, 0.6, seed);
    GcnConfig cfg;
    cfg.seed = seed;
    cfg.activation = act;
    auto res = gcn_train(a, clique_features(a), labels, split.train, split.test, cfg);
    out.perfect += res.test_accuracy == 1.0;
    bool ok = true;
    for (std::size_t e = 0; e + 50 < res.loss_history.size(); ++e)
      ok = ok && res.loss_history[e + 50] <= res.loss_history[e];
    out.monotone += ok;
  }
  return out;
}

TEST(GcnTrain, TwoCliqueSixtyFortySplitRelu) { EXPECT_GE(toy_problem(Activation::relu).perfect, 18); }
TEST(GcnTrain, TwoCliqueSixtyFortySplitTanh) { EXPECT_GE(toy_problem(Activation::tanh).perfect, 18); }
TEST(GcnTrain, LossNonIncreasingPerFiftyEpochWindowRelu) { EXPECT_GE(toy_problem(Activation::relu).monotone, 18); }
TEST(GcnTrain, LossNonIncreasingPerFiftyEpochWindowTanh) { EXPECT_GE(toy_problem(Activation::tanh).monotone, 18); }

TEST(GcnTrain, SingleNodePerClassOverfits) {
  const auto a = testsupport::two_cliques(5);
  int fitted = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    GcnConfig cfg;
    cfg.seed = seed;
    cfg.activation = Activation::tanh;
    auto res = gcn_train(a, clique_features(a), clique_labels(5), {2, 7}, {0, 1, 3, 4, 5, 6, 8, 9}, cfg);
    fitted += res.train_accuracy == 1.0;
  }
  EXPECT_EQ(fitted, 10);
}

TEST(GcnTrain, ZeroEpochsReturnsInitialization) {
  const auto a = testsupport::two_cliques(5);
  GcnConfig cfg;
  cfg.seed = 11;
  cfg.meta.epochs = 0;
  auto res = gcn_train(a, clique_features(a), clique_labels(5), {0, 1, 2, 5, 6, 7}, {3, 4, 8, 9}, cfg);
  auto init = make_gcn(a, 10, 2, cfg.layer_sizes, cfg.activation, 11);
  ASSERT_EQ(res.model.weights.size(), init.weights.size());
  for (std::size_t l = 0; l < init.weights.size(); ++l) EXPECT_EQ(res.model.weights[l], init.weights[l]);
  EXPECT_TRUE(res.loss_history.empty());
  EXPECT_EQ(res.test_accuracy, accuracy(predict_labels(gcn_forward(init, clique_features(a))), clique_labels(5).labels,
                                        {3, 4, 8, 9}));
}

TEST(GcnTrain, UntrainedAccuracyNearChance) {
  const auto a = testsupport::random_graph(40, 0.2, 1);
  Partition labels;
  labels.nodes = testsupport::ids(40);
  for (std::size_t i = 0; i < 40; ++i) labels.labels.push_back(i % 2);
  labels.n_regions = 2;
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    GcnConfig cfg;
    cfg.seed = seed;
    cfg.meta.epochs = 0;
    auto split = stratified_split(labels.labels, 0.5, seed);
    total += gcn_train(a, random_features(40, 6, seed), labels, split.train, split.test, cfg).test_accuracy;
  }
  EXPECT_NEAR(total / 40.0, 0.5, 0.1);
}

TEST(GcnTrain, LogsEveryFiftyEpochs) {
  const auto a = testsupport::two_cliques(5);
  auto res = gcn_train(a, clique_features(a), clique_labels(5), {0, 1, 2, 5, 6, 7}, {3, 4, 8, 9});
  ASSERT_EQ(res.log.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(res.log[i].epoch, 50 * i);
    EXPECT_EQ(res.log[i].loss, res.loss_history[50 * i]);
  }
  EXPECT_EQ(res.loss_history.size(), 500u);
}

TEST(GcnTrain, DeterministicPerSeed) {
  const auto a = testsupport::two_cliques(5);
  GcnConfig cfg;
  cfg.seed = 5;
  auto r1 = gcn_train(a, clique_features(a), clique_labels(5), {0, 1, 2, 5, 6, 7}, {3, 4, 8, 9}, cfg);
  auto r2 = gcn_train(a, clique_features(a), clique_labels(5), {0, 1, 2, 5, 6, 7}, {3, 4, 8, 9}, cfg);
  EXPECT_EQ(r1.loss_history, r2.loss_history);
  EXPECT_EQ(to_json(r1.model).dump(), to_json(r2.model).dump());
}

TEST(GcnTrain, MaskErrors) {
  const auto a = testsupport::two_cliques(5);
  const auto x = clique_features(a);
  auto kind_of = [&](std::vector<std::size_t> train, std::vector<std::size_t> test) {
    try {
      gcn_train(a, x, clique_labels(5), train, test);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::IoError;
  };
  EXPECT_EQ(kind_of({}, {1}), ErrorKind::EmptyMask);
  EXPECT_EQ(kind_of({1}, {}), ErrorKind::EmptyMask);
  EXPECT_EQ(kind_of({1, 2}, {2, 3}), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of({1}, {12}), ErrorKind::ShapeMismatch);
  EXPECT_THROW(gcn_loss_and_grad(make_gcn(a, 10, 2, {4}, Activation::relu, 1), x, clique_labels(5).labels, {}), Error);
}

TEST(Split, StratifiedSeventyThirty) {
  std::vector<std::size_t> labels(36);
  for (std::size_t i = 0; i < 36; ++i) labels[i] = i < 18 ? 0 : 1;
  auto s = stratified_split(labels, 0.7, 3);
  EXPECT_EQ(s.train.size(), 26u);
  EXPECT_EQ(s.test.size(), 10u);
  std::size_t train_zero = 0;
  for (auto i : s.train) train_zero += labels[i] == 0;
  EXPECT_EQ(train_zero, 13u);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(stratified_split({0, 1}, 0.7, 1), Error);
}

TEST(Features, StandardizedCorrelationColumns) {
  auto g = build_corr_graph(synthesize(two_block_spec(1, 6, 2000)), 0.0);
  auto x = node_features(g);
  ASSERT_EQ(x.rows(), 12);
  ASSERT_EQ(x.cols(), 12);
  for (Eigen::Index c = 0; c < 12; ++c) {
    EXPECT_NEAR(x.col(c).mean(), 0.0, 1e-12);
    EXPECT_NEAR(x.col(c).squaredNorm() / 12.0, 1.0, 1e-12);
  }
}

TEST(Pipeline, SingleRegionTrivial) {
  auto res = partition_pipeline(synthesize(two_block_spec(1)), 1);
  EXPECT_EQ(res.accuracy, 1.0);
  EXPECT_EQ(res.gcn.n_regions, 1u);
  for (auto l : res.gcn.labels) EXPECT_EQ(l, 0u);
}

TEST(Pipeline, MismatchedLabelIds) {
  auto panel = synthesize(two_block_spec(1));
  Partition given;
  given.nodes = testsupport::ids(36);
  given.labels.assign(36, 0);
  given.n_regions = 1;
  try {
    partition_pipeline(panel, 2, {}, &given);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownNode);
  }
}

TEST(Pipeline, TwoBlockTanhAccuracy) {
  int good = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    PipelineOptions opts;
    opts.gcn.seed = seed;
    opts.gcn.activation = Activation::tanh;
    good += partition_pipeline(synthesize(two_block_spec(seed)), 2, opts).accuracy >= 0.85;
  }
  EXPECT_GE(good, 8);
}

// Structureless panel: each column is a white-noise series, so the graph
// carries no regional signal.
TEST(Pipeline, ShuffledPanelNearChance) {
  double total = 0.0;
  const int seeds = 20;
  for (int seed = 1; seed <= seeds; ++seed) {
    auto spec = two_block_spec(static_cast<std::uint64_t>(seed));
    auto panel = synthesize(spec);
    Eigen::MatrixXd m = panel.samples();
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::vector<double> col(m.col(c).data(), m.col(c).data() + m.rows());
      std::shuffle(col.begin(), col.end(), rng);
      m.col(c) = Eigen::Map<Eigen::VectorXd>(col.data(), m.rows());
    }
    PipelineOptions opts;
    opts.gcn.seed = static_cast<std::uint64_t>(seed);
    opts.gcn.activation = Activation::tanh;
    total += partition_pipeline(TimeSeriesPanel(panel.node_ids(), m), 2, opts).accuracy;
  }
  // Binomial standard error of the mean over ~11 test nodes per seed.
  const double se = std::sqrt(0.25 / (11.0 * seeds));
  EXPECT_NEAR(total / seeds, 0.5, 3.0 * se);
}

TEST(GcnJson, Shape) {
  auto model = make_gcn(testsupport::two_cliques(3), 6, 2, {4, 4, 2, 2}, Activation::tanh, 1);
  auto j = to_json(model);
  EXPECT_EQ(j["layer_sizes"], (std::vector<std::size_t>{4, 4, 2, 2}));
  EXPECT_EQ(j["activation"], "tanh");
  EXPECT_EQ(j["train_meta"]["lr"], 0.01);
  EXPECT_EQ(j["train_meta"]["epochs"], 500);
  EXPECT_EQ(j["train_meta"]["loss"], "cross-entropy");
  EXPECT_EQ(j["weights"].size(), 5u);
  EXPECT_EQ(j["weights"][0].size(), 6u);
  EXPECT_EQ(j["weights"][0][0].size(), 4u);
}

TEST(Activation, ParseAndName) {
  EXPECT_EQ(parse_activation("relu"), Activation::relu);
  EXPECT_EQ(parse_activation("tanh"), Activation::tanh);
  EXPECT_EQ(to_string(Activation::tanh), "tanh");
  EXPECT_THROW(parse_activation("sigmoid"), Error);
}
