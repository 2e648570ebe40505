#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pigeonhole/balanced.hpp"
#include "pigeonhole/error.hpp"

using namespace pigeonhole;

namespace {

BalancedBlock random_block(int r, int c, int p, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  BalancedBlock blk{Vector(r * c), Matrix(r * c, p), r, c};
  for (int k = 0; k < r * c; ++k) {
    blk.y[k] = 2.0 * z(rng);
    for (int q = 0; q < p; ++q) blk.X(k, q) = z(rng);
  }
  return blk;
}

Theta random_theta(int p, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Theta t;
  t.b = Vector(p);
  for (auto& v : t.b) v = 0.3 * z(rng);
  t.eta_alpha = z(rng);
  t.eta_beta = z(rng);
  t.eta_e = z(rng);
  return t;
}

}  // namespace

TEST_CASE("precision scalars for (9, 4, 1) on a 2x2 block") {
  const auto s = precision_scalars_from_variances(9.0, 4.0, 1.0, 2, 2);
  const Matrix inv = oracle::block_covariance(9.0, 4.0, 1.0, 2, 2).inverse();
  CHECK(std::abs(s.x - inv(0, 0)) < 1e-10);
  CHECK(std::abs(s.y - inv(0, 1)) < 1e-10);
  CHECK(std::abs(s.w - inv(0, 2)) < 1e-10);
  CHECK(std::abs(s.z - inv(0, 3)) < 1e-10);
  CHECK(s.x == doctest::Approx(0.30019).epsilon(1e-4));
  CHECK(s.y == doctest::Approx(-0.25536).epsilon(1e-4));
  CHECK(s.z == doctest::Approx(0.21832).epsilon(1e-4));
  CHECK(s.w == doctest::Approx(-0.22612).epsilon(1e-4));
}

TEST_CASE("precision scalars in the independent limit") {
  const auto s = precision_scalars_from_variances(0.0, 0.0, 2.0, 3, 4);
  CHECK(s.x == 0.5);
  CHECK(s.y == 0.0);
  CHECK(s.z == 0.0);
  CHECK(s.w == 0.0);
}

TEST_CASE("row/column exchange symmetry") {
  const auto s = precision_scalars_from_variances(2.0, 7.0, 0.5, 3, 5);
  const auto t = precision_scalars_from_variances(7.0, 2.0, 0.5, 5, 3);
  CHECK(s.x == doctest::Approx(t.x));
  CHECK(s.y == doctest::Approx(t.w));
  CHECK(s.w == doctest::Approx(t.y));
  CHECK(s.z == doctest::Approx(t.z));
}

TEST_CASE("covariance entries") {
  const Matrix S = balanced_covariance_from_variances(9.0, 4.0, 1.0, 2, 2);
  CHECK(S(0, 0) == 14.0);
  CHECK(S(0, 1) == 9.0);
  CHECK(S(0, 2) == 4.0);
  CHECK(S(0, 3) == 0.0);
  CHECK(balanced_covariance_from_variances(0.0, 0.0, 3.0, 2, 3).isApprox(3.0 * Matrix::Identity(6, 6)));
  CHECK(S.isApprox(oracle::block_covariance(9.0, 4.0, 1.0, 2, 2)));
}

TEST_CASE("covariance times closed-form precision is the identity") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(2, 12);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const double a = oracle::log_uniform(rng, 0.01, 100), b = oracle::log_uniform(rng, 0.01, 100),
                 e = oracle::log_uniform(rng, 0.01, 100);
    const int r = dim(rng), c = dim(rng);
    const Matrix P = precision_matrix(precision_scalars_from_variances(a, b, e, r, c));
    const Matrix S = oracle::block_covariance(a, b, e, r, c);
    worst = std::max(worst, (S * P - Matrix::Identity(r * c, r * c)).cwiseAbs().maxCoeff());
    CHECK(P.isApprox(P.transpose()));
    CHECK(Eigen::LLT<Matrix>(P).info() == Eigen::Success);
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("log likelihood against the dense oracle") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int r = 2 + trial % 5, c = 2 + trial % 4;
    const BalancedBlock blk = random_block(r, c, 2, rng);
    const Theta t = random_theta(2, rng);
    const double want = oracle::gaussian_logpdf(
        blk.y - blk.X * t.b, oracle::block_covariance(t.sigma2_alpha(), t.sigma2_beta(), t.sigma2_e(), r, c));
    CHECK(std::abs(balanced_loglik(blk, t) - want) < 1e-8 * r * c);
  }
}

TEST_CASE("log likelihood limits and invariance") {
  std::mt19937_64 rng(3);
  BalancedBlock blk = random_block(2, 2, 1, rng);
  const Vector b = Vector::Constant(1, 0.7);
  blk.y = blk.X * b;
  CHECK(balanced_loglik_from_variances(blk, b, 0.0, 0.0, 1.0) == doctest::Approx(-2.0 * std::log(2.0 * std::numbers::pi)));

  BalancedBlock icpt = random_block(3, 4, 2, rng);
  icpt.X.col(0).setOnes();
  Theta t = random_theta(2, rng);
  const double before = balanced_loglik(icpt, t);
  icpt.y.array() += 1.75;
  t.b[0] += 1.75;
  CHECK(balanced_loglik(icpt, t) == doctest::Approx(before).epsilon(1e-12));

  t.eta_e = -800.0;
  CHECK_THROWS_AS(balanced_loglik(icpt, t), DegenerateState);
}

TEST_CASE("gradients with zero residuals") {
  std::mt19937_64 rng(4);
  BalancedBlock blk = random_block(3, 4, 2, rng);
  const Theta t = random_theta(2, rng);
  blk.y = blk.X * t.b;
  const Vector g = balanced_grads(blk, t);
  CHECK(g.head(2).isZero(1e-12));
  const Matrix Si = oracle::block_covariance(t.sigma2_alpha(), t.sigma2_beta(), t.sigma2_e(), 3, 4).inverse();
  const Matrix Da = oracle::block_covariance(t.sigma2_alpha(), 0.0, 0.0, 3, 4);
  const Matrix De = t.sigma2_e() * Matrix::Identity(12, 12);
  CHECK(g[2] == doctest::Approx(-0.5 * (Si * Da).trace()));
  CHECK(g[4] == doctest::Approx(-0.5 * (Si * De).trace()));
}

TEST_CASE("gradients match finite differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int r = 2 + trial % 6, c = 2 + (trial / 6) % 5;
    const BalancedBlock blk = random_block(r, c, 3, rng);
    const Theta t = random_theta(3, rng);
    const auto f = [&](const Vector& v) { return balanced_loglik(blk, Theta::from_vector(v)); };
    CHECK(oracle::relative_error(balanced_grads(blk, t), oracle::central_difference(f, t.to_vector())) < 1e-6);
  }
}

TEST_CASE("variance gradients match the dense trace identity") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const int r = 2 + trial % 5, c = 2 + trial % 3;
    const BalancedBlock blk = random_block(r, c, 2, rng);
    const Theta t = random_theta(2, rng);
    const double a = t.sigma2_alpha(), b = t.sigma2_beta(), e = t.sigma2_e();
    const Matrix Si = oracle::block_covariance(a, b, e, r, c).inverse();
    const Vector u = Si * (blk.y - blk.X * t.b);
    const Matrix D[3] = {oracle::block_covariance(a, 0.0, 0.0, r, c), oracle::block_covariance(0.0, b, 0.0, r, c),
                         oracle::block_covariance(0.0, 0.0, e, r, c)};
    const Vector g = balanced_grads(blk, t);
    CHECK(oracle::relative_error(g.head(2), blk.X.transpose() * u) < 1e-10);
    for (int k = 0; k < 3; ++k) {
      // Naive quadruple sum over cell pairs through the dense matrices.
      const double want = -0.5 * (Si * D[k]).trace() + 0.5 * u.dot(D[k] * u);
      CHECK(std::abs(g[2 + k] - want) < 1e-10 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("balanced block from a batch") {
  std::mt19937_64 rng(7);
  const ObservedTable full = oracle::random_table(4, 5, 2, 1.0, rng);
  const SubsetBatch batch = SubsetBatch::extract(full, {3, 1}, {0, 4, 2});
  const BalancedBlock blk = BalancedBlock::from_batch(batch);
  CHECK(blk.r == 2);
  CHECK(blk.c == 3);
  CHECK(blk.y[1] == full.y(full.find(3, 4)));
  CHECK(blk.y[3] == full.y(full.find(1, 0)));

  const ObservedTable sparse(3, 3, {0, 1, 2}, {0, 1, 2}, Vector::Zero(3), RowMatrix::Zero(3, 1));
  CHECK_THROWS_AS(BalancedBlock::from_batch(SubsetBatch::extract(sparse, {0, 1}, {0, 1})), InvalidArgument);
}
