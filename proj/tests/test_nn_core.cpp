#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "rho/mlp.hpp"
#include "rho/optimizer.hpp"

using namespace rho;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = g(rng);
  return t;
}

std::vector<int> random_labels(std::size_t n, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::vector<int> y(n);
  for (int& v : y) v = d(rng);
  return y;
}

}  // namespace

TEST(Tensor, ShapeValueMismatchIsDimensionError) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(matmul(Tensor::matrix(2, 3), Tensor::matrix(2, 3)), DimensionError);
}

TEST(Tensor, MatmulVariantsAgree) {
  std::mt19937_64 rng(4);
  Tensor a = random_matrix(4, 3, rng), b = random_matrix(3, 5, rng), c = random_matrix(4, 5, rng);
  Tensor ab = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < 3; ++p) s += a.at(i, p) * b.at(p, j);
      EXPECT_NEAR(ab.at(i, j), s, 1e-14);
    }
  Tensor atc = matmul_tn(a, c);  // 3x5
  Tensor cbt = matmul_nt(c, b);  // 4x3
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0, t = 0;
      for (std::size_t i = 0; i < 4; ++i) s += a.at(i, p) * c.at(i, j);
      EXPECT_NEAR(atc.at(p, j), s, 1e-14);
      (void)t;
    }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t p = 0; p < 3; ++p) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += c.at(i, j) * b.at(p, j);
      EXPECT_NEAR(cbt.at(i, p), s, 1e-14);
    }
}

TEST(Forward, ZeroModelGivesUniformSoftmax) {
  MlpModel m = MlpModel::zeros({{7, 5, 10}});
  std::mt19937_64 rng(1);
  Tensor z = forward(m, random_matrix(3, 7, rng));
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
  Tensor p = softmax_rows(z);
  for (double v : p.values()) EXPECT_NEAR(v, 0.1, 1e-15);
}

TEST(Forward, IdentityLayerPassesOneHotThrough) {
  MlpModel m = MlpModel::zeros({{4, 4}});
  for (std::size_t i = 0; i < 4; ++i) m.weight(0).at(i, i) = 1.0;
  Tensor x = Tensor::matrix({{0, 1, 0, 0}, {0, 0, 0, 1}});
  EXPECT_EQ(forward(m, x), x);
}

TEST(Forward, HandComputedTwoThreeTwoNet) {
  MlpModel m = MlpModel::init({{2, 3, 2}}, 11);
  m.weight(0) = Tensor::matrix({{0.5, -1.0, 0.25}, {2.0, 0.5, -0.75}});
  m.bias(0) = Tensor::vector({0.1, -0.2, 0.3});
  m.weight(1) = Tensor::matrix({{1.0, -0.5}, {0.25, 2.0}, {-1.5, 0.75}});
  m.bias(1) = Tensor::vector({0.05, -0.05});
  Tensor x = Tensor::matrix({{1.0, 2.0}, {-1.0, 0.5}});
  // Row 0: pre = (0.5+4+0.1, -1+1-0.2, 0.25-1.5+0.3) = (4.6, -0.2, -0.95); h = (4.6, 0, 0)
  //        z = (4.6+0.05, -2.3-0.05) = (4.65, -2.35)
  // Row 1: pre = (-0.5+1+0.1, 1+0.25-0.2, -0.25-0.375+0.3) = (0.6, 1.05, -0.325); h = (0.6, 1.05, 0)
  //        z = (0.6+0.2625+0.05, -0.3+2.1-0.05) = (0.9125, 1.75)
  Tensor z = forward(m, x);
  EXPECT_NEAR(z.at(0, 0), 4.65, 1e-14);
  EXPECT_NEAR(z.at(0, 1), -2.35, 1e-14);
  EXPECT_NEAR(z.at(1, 0), 0.9125, 1e-14);
  EXPECT_NEAR(z.at(1, 1), 1.75, 1e-14);
}

TEST(Forward, WrongInputWidthIsDimensionError) {
  MlpModel m = MlpModel::init({{3, 4, 2}}, 1);
  EXPECT_THROW(forward(m, Tensor::matrix(2, 4)), DimensionError);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    MlpModel m = MlpModel::init({{6, 8, 8, 5}, 0.3, trial % 2 == 0}, trial);
    Tensor x = random_matrix(7, 6, rng, 3.0);
    for (auto opts : {ForwardOptions{}, ForwardOptions{Mode::train, BnStats::batch, 3}}) {
      Tensor p = softmax_rows(forward(m, x, opts));
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0;
        for (double v : p.row(r)) s += v;
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(Forward, BatchNormBatchStatsArePermutationEquivariant) {
  MlpModel m = MlpModel::init({{4, 6, 3}, 0.0, true}, 5);
  std::mt19937_64 rng(2);
  Tensor x = random_matrix(6, 4, rng);
  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  ForwardOptions opts{Mode::eval, BnStats::batch, 0};
  Tensor z = forward(m, x, opts);
  Tensor zp = forward(m, x.gather_rows(perm), opts);
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(zp.at(i, j), z.at(perm[i], j), 1e-12);
}

TEST(Forward, EvalRowsDoNotDependOnBatch) {
  MlpModel m = MlpModel::init({{5, 9, 4}, 0.2, true}, 8);
  std::mt19937_64 rng(3);
  Tensor x = random_matrix(10, 5, rng);
  Tensor full = forward(m, x);
  for (std::size_t r = 0; r < 10; ++r) {
    std::vector<std::size_t> one = {r};
    Tensor single = forward(m, x.gather_rows(one));
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(single.at(0, j), full.at(r, j));
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 10u, 100u}) {
    Tensor z = Tensor::matrix(3, c, 0.7);
    std::vector<int> y = {0, static_cast<int>(c) - 1, 1};
    for (double l : cross_entropy(z, y)) EXPECT_NEAR(l, std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(CrossEntropy, NearlyCertainPrediction) {
  // p(true) = 1 - 1e-12 with two classes: logit gap log((1-e)/e).
  const double e = 1e-12;
  Tensor z = Tensor::matrix({{std::log((1 - e) / e), 0.0}});
  std::vector<int> y = {0};
  EXPECT_NEAR(cross_entropy(z, y)[0], 1e-12, 1e-16);
}

TEST(CrossEntropy, MatchesLogSumExpOracle) {
  std::mt19937_64 rng(12);
  Tensor z = random_matrix(50, 7, rng, 5.0);
  auto y = random_labels(50, 7, rng);
  auto losses = cross_entropy(z, y);
  for (std::size_t r = 0; r < 50; ++r) {
    std::vector<double> row(z.row(r).begin(), z.row(r).end());
    EXPECT_NEAR(losses[r], oracle::cross_entropy(row, y[r]), 1e-12);
    EXPECT_GE(losses[r], 0.0);
  }
}

TEST(CrossEntropy, LabelOutOfRangeIsDomainError) {
  Tensor z = Tensor::matrix(1, 3);
  std::vector<int> bad = {3};
  EXPECT_THROW(cross_entropy(z, bad), DomainError);
  std::vector<int> neg = {-1};
  EXPECT_THROW(cross_entropy(z, neg), DomainError);
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 12; ++trial) {
    const bool bn = trial % 3 == 1;
    const double drop = trial % 3 == 2 ? 0.3 : 0.0;
    MlpModel m = MlpModel::init({{4, 5, 3, 3}, drop, bn}, 100 + trial);
    Tensor x = random_matrix(5, 4, rng);
    auto y = random_labels(5, 3, rng);
    ForwardOptions opts{Mode::train, bn ? BnStats::batch : BnStats::running, static_cast<std::uint64_t>(trial)};
    EXPECT_LT(oracle::max_fd_relative_error(m, x, y, opts), 1e-4) << "trial " << trial;
  }
}

TEST(Backward, SaturatedCorrectPredictionsHaveTinyGradient) {
  MlpModel m = MlpModel::zeros({{2, 2}});
  m.weight(0) = Tensor::matrix({{60.0, -60.0}, {-60.0, 60.0}});
  Tensor x = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  std::vector<int> y = {0, 1};
  EXPECT_LT(l2_norm(backward(m, x, y).gradient), 1e-9);
}

TEST(Backward, DuplicatedPointGivesSameGradient) {
  MlpModel m = MlpModel::init({{3, 4, 2}}, 3);
  Tensor one = Tensor::matrix({{0.3, -0.2, 0.9}});
  Tensor two = Tensor::matrix({{0.3, -0.2, 0.9}, {0.3, -0.2, 0.9}});
  std::vector<int> y1 = {1}, y2 = {1, 1};
  auto g1 = backward(m, one, y1).gradient;
  auto g2 = backward(m, two, y2).gradient;
  for (std::size_t p = 0; p < g1.size(); ++p)
    for (std::size_t j = 0; j < g1[p].size(); ++j) EXPECT_NEAR(g1[p][j], g2[p][j], 1e-15);
}

TEST(GradNorm, ExactEqualsBatchOfOneBackward) {
  MlpModel m = MlpModel::init({{5, 7, 4}}, 6);
  std::mt19937_64 rng(5);
  Tensor x = random_matrix(6, 5, rng);
  auto y = random_labels(6, 4, rng);
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<std::size_t> idx = {i};
    std::vector<int> yi = {y[i]};
    const auto g = backward(m, x.gather_rows(idx), yi).gradient;
    double s = 0;
    for (const auto& t : g)
      for (double v : t.values()) s += v * v;
    EXPECT_NEAR(per_example_grad_norm(m, x.row(i), y[i]), std::sqrt(s), 1e-10);
  }
}

TEST(GradNorm, SaturatedExampleIsNearZero) {
  MlpModel m = MlpModel::zeros({{2, 2}});
  m.weight(0) = Tensor::matrix({{80.0, -80.0}, {-80.0, 80.0}});
  const double x[2] = {1.0, 0.0};
  EXPECT_LT(per_example_grad_norm(m, x, 0), 1e-12);
}

TEST(GradNorm, LastLayerVariantMatchesOutputLayerGradient) {
  MlpModel m = MlpModel::init({{3, 6, 4}}, 2);
  std::mt19937_64 rng(8);
  Tensor x = random_matrix(1, 3, rng);
  std::vector<int> y = {2};
  auto g = backward(m, x, y).gradient;
  double s = 0;
  for (std::size_t p = g.size() - 2; p < g.size(); ++p)
    for (double v : g[p].values()) s += v * v;
  EXPECT_NEAR(per_example_grad_norm(m, x.row(0), 2, GradNormKind::last_layer), std::sqrt(s), 1e-12);
  EXPECT_LE(std::sqrt(s), per_example_grad_norm(m, x.row(0), 2) + 1e-12);
}

TEST(Optimizer, SgdStepIsExact) {
  ParameterList p = {Tensor::vector({1.0})}, g = {Tensor::vector({2.0})};
  Optimizer opt(OptimizerConfig::sgd(0.1));
  opt.step(p, g);
  EXPECT_DOUBLE_EQ(p[0][0], 0.8);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Optimizer, AdamWFirstStepClosedForm) {
  struct Case { double theta, g, lr, wd; };
  for (Case c : {Case{1.0, 2.0, 1e-3, 0.01}, Case{-0.5, 0.1, 1e-2, 0.1}, Case{3.0, -4.0, 1e-3, 0.0}}) {
    OptimizerConfig cfg;
    cfg.learning_rate = c.lr;
    cfg.weight_decay = c.wd;
    Optimizer opt(cfg);
    ParameterList p = {Tensor::vector({c.theta})}, g = {Tensor::vector({c.g})};
    opt.step(p, g);
    const double m = (1 - 0.9) * c.g, v = (1 - 0.999) * c.g * c.g;
    const double mh = m / (1 - 0.9), vh = v / (1 - 0.999);
    const double expect = c.theta * (1 - c.lr * c.wd) - c.lr * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p[0][0], expect, 1e-12);
    EXPECT_NEAR(opt.first_moment()[0][0], m, 1e-15);
    EXPECT_NEAR(opt.second_moment()[0][0], v, 1e-15);
  }
}

TEST(Optimizer, ZeroGradientZeroDecayLeavesParameters) {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  Optimizer opt(cfg);
  ParameterList p = {Tensor::vector({1.5, -2.0})}, g = {Tensor::vector({0.0, 0.0})};
  for (int i = 0; i < 3; ++i) opt.step(p, g);
  EXPECT_EQ(p[0][0], 1.5);
  EXPECT_EQ(p[0][1], -2.0);
}

TEST(Optimizer, ShapeMismatchIsDimensionError) {
  Optimizer opt;
  ParameterList p = {Tensor::vector({1.0, 2.0})}, g = {Tensor::vector({1.0})};
  EXPECT_THROW(opt.step(p, g), DimensionError);
}

TEST(Optimizer, SameSeedGivesBitIdenticalParameters) {
  auto run = [] {
    Learner l{MlpModel::init({{4, 8, 3}, 0.2, true}, 77), Optimizer()};
    std::mt19937_64 rng(1);
    for (int s = 0; s < 20; ++s) {
      Tensor x = random_matrix(8, 4, rng);
      auto y = random_labels(8, 3, rng);
      train_step(l, x, y, static_cast<std::uint64_t>(s));
    }
    return l.model;
  };
  EXPECT_TRUE(run() == run());
}

TEST(McDropout, ZeroRateGivesIdenticalSamples) {
  MlpModel m = MlpModel::init({{3, 5, 4}}, 4);
  Tensor x = Tensor::matrix({{0.1, 0.2, 0.3}});
  auto s = mc_dropout_predict(m, x, 5, 9);
  for (const auto& t : s) EXPECT_EQ(t, s[0]);
}

TEST(McDropout, SingleSampleEqualsTrainModeForward) {
  MlpModel m = MlpModel::init({{3, 16, 4}, 0.5, false}, 4);
  Tensor x = Tensor::matrix({{0.1, 0.2, 0.3}, {1.0, -1.0, 0.5}});
  auto s = mc_dropout_predict(m, x, 1, 42);
  EXPECT_EQ(s[0], softmax_rows(forward(m, x, {Mode::train, BnStats::running, 42})));
}

TEST(McDropout, ZeroSamplesIsArgumentError) {
  MlpModel m = MlpModel::init({{2, 3, 2}, 0.5, false}, 1);
  EXPECT_THROW(mc_dropout_predict(m, Tensor::matrix(1, 2), 0, 0), ArgumentError);
}

TEST(McDropout, MeanApproachesExpectationOverAllMasks) {
  // Two hidden units with dropout 0.5: the four masks are equally likely and
  // a surviving unit is scaled by 2.
  MlpModel m = MlpModel::zeros({{1, 2, 2}, 0.5, false});
  m.weight(0) = Tensor::matrix({{1.0, 2.0}});
  m.bias(0) = Tensor::vector({0.5, -0.5});
  m.weight(1) = Tensor::matrix({{1.0, -1.0}, {-0.5, 1.5}});
  m.bias(1) = Tensor::vector({0.2, 0.0});
  const double xin = 0.8;
  const double h[2] = {1.0 * xin + 0.5, 2.0 * xin - 0.5};
  double expect = 0.0;  // probability of class 0
  for (int mask = 0; mask < 4; ++mask) {
    const double a = (mask & 1) ? 2.0 * h[0] : 0.0, b = (mask & 2) ? 2.0 * h[1] : 0.0;
    const double z0 = a * 1.0 + b * -0.5 + 0.2, z1 = a * -1.0 + b * 1.5;
    expect += 0.25 / (1.0 + std::exp(z1 - z0));
  }
  const std::size_t k = 20000;
  auto samples = mc_dropout_predict(m, Tensor::matrix({{xin}}), k, 5);
  double mean = 0.0, sq = 0.0;
  for (const auto& s : samples) {
    mean += s[0];
    sq += s[0] * s[0];
  }
  mean /= k;
  const double sd = std::sqrt(sq / k - mean * mean);
  EXPECT_NEAR(mean, expect, 4.0 * sd / std::sqrt(static_cast<double>(k)));
}

TEST(Ensemble, PredictiveIsMeanOfMembers) {
  MlpModel a = MlpModel::init({{3, 4, 3}}, 1), b = MlpModel::init({{3, 4, 3}}, 2);
  EnsembleModel e({a, b});
  Tensor x = Tensor::matrix({{0.5, -0.1, 0.3}, {1.0, 2.0, -1.0}});
  Tensor pa = softmax_rows(forward(a, x)), pb = softmax_rows(forward(b, x)), p = e.predictive(x);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], 0.5 * (pa[i] + pb[i]), 1e-15);
  EnsembleModel swapped({b, a});
  Tensor q = swapped.predictive(x);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-15);
  std::vector<int> y = {2, 0};
  auto l = e.loss(x, y);
  EXPECT_NEAR(l[0], -std::log(p.at(0, 2)), 1e-12);
  EXPECT_NEAR(l[1], -std::log(p.at(1, 0)), 1e-12);
}

TEST(Ensemble, MembersMustShareArchitecture) {
  EXPECT_THROW(EnsembleModel({MlpModel::init({{3, 4, 3}}, 1), MlpModel::init({{3, 5, 3}}, 1)}), DimensionError);
  EXPECT_THROW(EnsembleModel::init({{3, 4, 3}}, 0, 1), ArgumentError);
}

TEST(Mlp, ArchitectureValidation) {
  EXPECT_THROW(MlpModel::init({{3}}, 1), ArgumentError);
  EXPECT_THROW(MlpModel::init({{3, 2}, 1.0, false}, 1), ArgumentError);
  EXPECT_THROW(MlpModel::init({{3, 0, 2}}, 1), ArgumentError);
}

TEST(Mlp, InitialisationWithinFanInBound) {
  MlpModel m = MlpModel::init({{16, 9, 3}}, 3);
  for (double v : m.weight(0).values()) EXPECT_LE(std::abs(v), 0.25);
  for (double v : m.weight(1).values()) EXPECT_LE(std::abs(v), 1.0 / 3.0);
  EXPECT_TRUE(MlpModel::init({{16, 9, 3}}, 3) == m);
  EXPECT_FALSE(MlpModel::init({{16, 9, 3}}, 4) == m);
}
