#include <random>

#include <gtest/gtest.h>

#include "modgen/sinkhorn.hpp"
#include "oracles.hpp"

namespace modgen {
namespace {

using testing::exact_ot_oracle;
using testing::naive_cost;
using testing::random_matrix;

SinkhornConfig tight(double rel_eps) {
  SinkhornConfig cfg;
  cfg.epsilon = rel_eps;
  cfg.relative_epsilon = true;
  cfg.max_iterations = 2000;
  cfg.tolerance = 1e-10;
  return cfg;
}

TEST(CostMatrix, TrivialCases) {
  EmbeddingBatch p(1, 2);
  p << 1.5, -2.0;
  EXPECT_EQ(cost_matrix(p, p)(0, 0), 0.0);
  EmbeddingBatch q(1, 2);
  q << 0.0, 0.0;
  EmbeddingBatch r(1, 2);
  r << 3.0, 4.0;
  EXPECT_EQ(cost_matrix(q, r)(0, 0), 25.0);
}

TEST(CostMatrix, MatchesNaiveLoop) {
  std::mt19937_64 rng(11);
  const EmbeddingBatch a = random_matrix(rng, 4, 8);
  const EmbeddingBatch b = random_matrix(rng, 5, 8);
  const Eigen::MatrixXd c = cost_matrix(a, b);
  const Eigen::MatrixXd ref = naive_cost(a, b);
  EXPECT_LE((c - ref).cwiseAbs().maxCoeff(), 1e-6);
  const Eigen::MatrixXd self = cost_matrix(a, a);
  EXPECT_LE((self - self.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(self.diagonal().cwiseAbs().maxCoeff(), 0.0);
}

TEST(CostMatrix, RejectsDimensionMismatch) {
  EXPECT_THROW(cost_matrix(EmbeddingBatch::Zero(2, 3), EmbeddingBatch::Zero(2, 4)),
               std::invalid_argument);
}

TEST(Sinkhorn, IdenticalRepeatedRowsGiveExactlyZero) {
  EmbeddingBatch a(4, 3);
  for (int i = 0; i < 4; ++i) a.row(i) << 0.3, -1.0, 2.0;
  const auto res = sinkhorn_distance(a, a, SinkhornConfig{});
  EXPECT_EQ(res.distance, 0.0);
}

TEST(Sinkhorn, SingleRowBatchesGiveSquaredDistanceForAnyEpsilon) {
  EmbeddingBatch p(1, 3), q(1, 3);
  p << 1.0, 2.0, -1.0;
  q << 0.5, -1.0, 3.0;
  const double expected = (p - q).squaredNorm();
  for (double eps : {1e-3, 0.05, 10.0}) {
    SinkhornConfig cfg;
    cfg.epsilon = eps;
    EXPECT_EQ(sinkhorn_distance(p, q, cfg).distance, expected);
  }
}

TEST(Sinkhorn, SmallEpsilonApproachesExactOt) {
  std::mt19937_64 rng(12);
  const EmbeddingBatch a = random_matrix(rng, 3, 2);
  const EmbeddingBatch b = random_matrix(rng, 3, 2);
  const double exact = exact_ot_oracle(a, b);
  const auto res = sinkhorn_distance(a, b, tight(0.01));
  EXPECT_TRUE(res.converged);
  EXPECT_LE(std::abs(res.distance - exact), 0.05 * exact + 1e-3);
}

TEST(ExactOtOracle, HandComputedCases) {
  std::mt19937_64 rng(13);
  const Eigen::MatrixXd a = random_matrix(rng, 3, 2);
  EXPECT_EQ(exact_ot_oracle(a, a), 0.0);
  // Crossed pairs: matching row 0 -> 1 and 1 -> 0 costs (0 + 0) / 2.
  Eigen::MatrixXd x(2, 1), y(2, 1);
  x << 0.0, 10.0;
  y << 10.0, 0.0;
  EXPECT_EQ(exact_ot_oracle(x, y), 0.0);
  y << 9.0, 1.0;  // identity: (81 + 81) / 2, swap: (1 + 1) / 2
  EXPECT_EQ(exact_ot_oracle(x, y), 1.0);
  EXPECT_THROW(exact_ot_oracle(Eigen::MatrixXd::Zero(9, 1), Eigen::MatrixXd::Zero(9, 1)),
               std::invalid_argument);
}

TEST(Sinkhorn, NonnegativeAndSymmetric) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const int ba = 2 + trial % 5, bb = 1 + trial % 7;
    const EmbeddingBatch a = random_matrix(rng, ba, 4);
    const EmbeddingBatch b = random_matrix(rng, bb, 4);
    SinkhornConfig cfg;
    cfg.tolerance = 1e-12;
    cfg.max_iterations = 5000;
    const double ab = sinkhorn_distance(a, b, cfg).distance;
    const double ba_d = sinkhorn_distance(b, a, cfg).distance;
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(std::abs(ab - ba_d), 1e-6);
  }
}

TEST(Sinkhorn, SelfDistanceIsPositiveWithoutDebiasing) {
  std::mt19937_64 rng(15);
  const EmbeddingBatch a = random_matrix(rng, 4, 3);
  SinkhornConfig cfg;
  cfg.epsilon = 1.0;
  EXPECT_GT(sinkhorn_distance(a, a, cfg).distance, 0.0);
}

TEST(Sinkhorn, ErrorDecreasesWithEpsilon) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + trial % 5;
    const EmbeddingBatch a = random_matrix(rng, n, 3);
    const EmbeddingBatch b = random_matrix(rng, n, 3);
    const double exact = exact_ot_oracle(a, b);
    double previous = std::numeric_limits<double>::infinity();
    for (double eps : {1.0, 0.1, 0.01}) {
      const double err = std::abs(sinkhorn_distance(a, b, tight(eps)).distance - exact);
      EXPECT_LE(err, previous + 1e-9) << "trial " << trial << " eps " << eps;
      previous = err;
    }
  }
}

TEST(Sinkhorn, StableAtTinyEpsilon) {
  std::mt19937_64 rng(17);
  const EmbeddingBatch a = random_matrix(rng, 6, 4, 50.0);
  const EmbeddingBatch b = random_matrix(rng, 6, 4, 50.0);
  SinkhornConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.max_iterations = 500;
  const auto res = sinkhorn_distance(a, b, cfg);
  EXPECT_TRUE(std::isfinite(res.distance));
  EXPECT_TRUE(res.plan.allFinite());
  const Eigen::MatrixXd grad = sinkhorn_cost_gradient(res, cost_matrix(a, b), cfg);
  EXPECT_TRUE(grad.allFinite());
}

TEST(Sinkhorn, ReportsNonConvergenceWithoutThrowing) {
  std::mt19937_64 rng(18);
  const EmbeddingBatch a = random_matrix(rng, 5, 3);
  const EmbeddingBatch b = random_matrix(rng, 5, 3);
  SinkhornConfig cfg;
  cfg.epsilon = 0.01;
  cfg.max_iterations = 1;
  cfg.tolerance = 1e-12;
  cfg.newton_steps = 0;
  const auto res = sinkhorn_distance(a, b, cfg);
  EXPECT_FALSE(res.converged);
  EXPECT_TRUE(std::isfinite(res.distance));
}

TEST(Sinkhorn, NewtonPolishConvergesWherePlainIterationsStall) {
  std::mt19937_64 rng(19);
  int stalled = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const EmbeddingBatch a = random_matrix(rng, 4, 3);
    const EmbeddingBatch b = random_matrix(rng, 4, 3);
    SinkhornConfig plain;
    plain.epsilon = 0.01;
    plain.tolerance = 1e-10;
    plain.newton_steps = 0;
    SinkhornConfig polished = plain;
    polished.newton_steps = 30;
    const auto p = sinkhorn_distance(a, b, plain);
    const auto q = sinkhorn_distance(a, b, polished);
    stalled += !p.converged;
    EXPECT_TRUE(q.converged) << "trial " << trial;
  }
  EXPECT_GT(stalled, 0);
}

TEST(Sinkhorn, RejectsInvalidConfigAndBatches) {
  SinkhornConfig cfg;
  cfg.epsilon = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EmbeddingBatch bad(2, 2);
  bad << 1.0, std::nan(""), 0.0, 0.0;
  EXPECT_THROW(sinkhorn_distance(bad, bad, SinkhornConfig{}), NumericalError);
  EXPECT_THROW(sinkhorn_distance(EmbeddingBatch(0, 2), bad, SinkhornConfig{}), std::invalid_argument);
}

double tape_distance(const Var<double>& a, const Var<double>& b, const SinkhornConfig& cfg) {
  return sinkhorn_distance(a, b, cfg).item();
}

void check_gradient(const SinkhornConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var<double> a(testing::random_tensor(rng, {3, 4}), true);
  Var<double> b(testing::random_tensor(rng, {3, 4}), true);
  auto loss = [&] { return sinkhorn_distance(a, b, cfg); };
  EXPECT_LE(testing::grad_check(loss, a, 100, 1e-6, 1e-8).max_rel_error, 1e-3);
  EXPECT_LE(testing::grad_check(loss, b, 100, 1e-6, 1e-8).max_rel_error, 1e-3);
  (void)tape_distance;
}

TEST(Sinkhorn, GradientMatchesFiniteDifferencesRelativeEpsilon) {
  for (std::uint64_t seed : {21, 22, 23}) check_gradient(tight(0.05), seed);
  for (std::uint64_t seed : {24, 25}) check_gradient(tight(0.5), seed);
}

TEST(Sinkhorn, GradientMatchesFiniteDifferencesAbsoluteEpsilon) {
  SinkhornConfig cfg = tight(0.3);
  cfg.relative_epsilon = false;
  for (std::uint64_t seed : {31, 32, 33}) check_gradient(cfg, seed);
}

TEST(Sinkhorn, UnequalBatchSizesAreDifferentiable) {
  std::mt19937_64 rng(41);
  Var<double> a(testing::random_tensor(rng, {2, 3}), true);
  Var<double> b(testing::random_tensor(rng, {5, 3}), true);
  const auto cfg = tight(0.1);
  auto loss = [&] { return sinkhorn_distance(a, b, cfg); };
  EXPECT_LE(testing::grad_check(loss, a, 100, 1e-6, 1e-8).max_rel_error, 1e-3);
  EXPECT_LE(testing::grad_check(loss, b, 100, 1e-6, 1e-8).max_rel_error, 1e-3);
}

}  // namespace
}  // namespace modgen
