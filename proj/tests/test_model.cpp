#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pigeonhole/error.hpp"
#include "pigeonhole/model.hpp"
#include "pigeonhole/samplers.hpp"

using namespace pigeonhole;

namespace {

ObservedTable full_table(int R, int C, int p, std::mt19937_64& rng) { return oracle::random_table(R, C, p, 1.0, rng); }

Theta random_theta(int p, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Theta t;
  t.b = Vector(p);
  for (int q = 0; q < p; ++q) t.b[q] = z(rng);
  t.eta_alpha = 0.7 * z(rng);
  t.eta_beta = 0.7 * z(rng);
  t.eta_e = 0.7 * z(rng);
  return t;
}

LatentState random_latent(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  LatentState s{Vector(r), Vector(c)};
  for (auto& v : s.alpha) v = 2.0 * z(rng);
  for (auto& v : s.beta) v = 2.0 * z(rng);
  return s;
}

}  // namespace

TEST_CASE("theta packs and unpacks") {
  const Theta t = Theta::from_variances(Vector::LinSpaced(3, 1, 3), 9.0, 4.0, 1.0);
  CHECK(t.eta_alpha == doctest::Approx(std::log(9.0)));
  const Theta u = Theta::from_vector(t.to_vector());
  CHECK(u.b == t.b);
  CHECK(u.eta_beta == t.eta_beta);
  CHECK(u.sigma2_alpha() == doctest::Approx(9.0));
  CHECK(u.valid());
  Theta bad = t;
  bad.eta_e = 1e6;
  CHECK_FALSE(bad.valid());
}

TEST_CASE("observed table rejects malformed input") {
  const Vector y = Vector::Zero(2);
  const RowMatrix X = RowMatrix::Ones(2, 1);
  CHECK_THROWS_AS(ObservedTable(2, 2, {0, 0}, {1, 1}, y, X), InvalidArgument);
  CHECK_THROWS_AS(ObservedTable(2, 2, {0, 2}, {0, 1}, y, X), InvalidArgument);
  CHECK_THROWS_AS(ObservedTable(2, 2, {0, 1}, {0, 1}, Vector::Zero(3), X), InvalidArgument);
}

TEST_CASE("observed table counts are consistent") {
  std::mt19937_64 rng(5);
  const ObservedTable t = oracle::random_table(9, 7, 2, 0.4, rng);
  std::int64_t by_row = 0, by_col = 0;
  for (int i = 0; i < t.R(); ++i) by_row += t.row_count(i);
  for (int j = 0; j < t.C(); ++j) by_col += t.col_count(j);
  CHECK(by_row == t.N());
  CHECK(by_col == t.N());
  CHECK(t.pruned());
  for (std::int64_t k = 0; k < t.N(); ++k) CHECK(t.find(t.row_of(k), t.col_of(k)) == k);
}

TEST_CASE("subset batch invariants") {
  std::mt19937_64 rng(6);
  const ObservedTable t = oracle::random_table(12, 10, 2, 0.5, rng);
  const SubsetBatch b = SubsetBatch::extract(t, {1, 4, 7}, {0, 2, 5, 9});
  int by_row = 0, by_col = 0;
  for (int i = 0; i < b.r(); ++i) by_row += b.row_count(i);
  for (int j = 0; j < b.c(); ++j) by_col += b.col_count(j);
  CHECK(by_row == b.n());
  CHECK(by_col == b.n());
  CHECK(b.n() <= 12);
  for (int k = 0; k < b.n(); ++k) {
    const auto cell = t.find(b.row_ids()[b.cell_row(k)], b.col_ids()[b.cell_col(k)]);
    REQUIRE(cell >= 0);
    CHECK(b.y()[k] == t.y(cell));
  }
}

TEST_CASE("log prior gradient examples") {
  Theta t = Theta::from_variances(Vector::Constant(4, 2.5), 1.0, 3.0, 1.0);
  const PriorSpec prior;
  const Vector g = log_prior_grad(t, prior);
  CHECK(g.head(4).isZero());
  CHECK(g[4] == 0.0);
  CHECK(g[6] == doctest::Approx(0.0).epsilon(1e-15));

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    t = random_theta(2, rng);
    const PriorSpec pr{1.5, 0.7, 2.0, 0.3, 0.01, 0.01};
    const auto f = [&](const Vector& v) {
      const Theta u = Theta::from_vector(v);
      return oracle::ig_logpdf_eta(u.eta_alpha, pr.a1, pr.b1) + oracle::ig_logpdf_eta(u.eta_beta, pr.a2, pr.b2) +
             oracle::ig_logpdf_eta(u.eta_e, pr.a3, pr.b3);
    };
    CHECK(oracle::relative_error(log_prior_grad(t, pr), oracle::central_difference(f, t.to_vector())) < 1e-6);
  }
}

TEST_CASE("conditional effect examples") {
  // One row with k cells and zero residuals.
  const int k = 4;
  std::vector<int> rows(k, 0), cols(k);
  for (int j = 0; j < k; ++j) cols[j] = j;
  ObservedTable t(2, k + 1, rows, cols, Vector::Zero(k), RowMatrix::Zero(k, 1));
  const SubsetBatch b = SubsetBatch::extract(t, {0}, {0, 1, 2, 3});
  const Theta theta = Theta::from_variances(Vector::Zero(1), 1.0, 1.0, 1.0);
  const LatentState zero{Vector::Zero(1), Vector::Zero(k)};
  const auto nk = conditional_effect_params(Axis::Row, 0, b, theta, zero);
  CHECK(nk.mean == 0.0);
  CHECK(nk.variance == doctest::Approx(1.0 / (k + 1)));

  ObservedTable single(2, 2, {0}, {0}, Vector::Constant(1, 3.0), RowMatrix::Zero(1, 1));
  const SubsetBatch sb = SubsetBatch::extract(single, {0}, {0});
  const auto n1 = conditional_effect_params(Axis::Row, 0, sb, theta, LatentState{Vector::Zero(1), Vector::Zero(1)});
  CHECK(n1.mean == doctest::Approx(1.5));
  CHECK(n1.variance == doctest::Approx(0.5));
}

TEST_CASE("conditional effect matches a quadratic fit of the log joint") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const ObservedTable t = oracle::random_table(8, 8, 2, 0.6, rng);
    const SubsetBatch b = sample_subset(t, 3, 3, 100, rng);
    const Theta theta = random_theta(2, rng);
    const LatentState latent = random_latent(3, 3, rng);
    for (Axis axis : {Axis::Row, Axis::Col}) {
      const int index = trial % 3;
      const auto logjoint = [&](double v) {
        LatentState s = latent;
        (axis == Axis::Row ? s.alpha : s.beta)[index] = v;
        return oracle::complete_loglik(b, theta.b, theta.eta_e, s) + oracle::effects_logpdf(s.alpha, theta.eta_alpha) +
               oracle::effects_logpdf(s.beta, theta.eta_beta);
      };
      const double fm = logjoint(-1.0), f0 = logjoint(0.0), fp = logjoint(1.0);
      const double c2 = 0.5 * (fp + fm - 2.0 * f0), c1 = 0.5 * (fp - fm);
      const double var = -0.5 / c2;
      const auto got = conditional_effect_params(axis, index, b, theta, latent);
      CHECK(got.variance == doctest::Approx(var).epsilon(1e-8));
      CHECK(got.mean == doctest::Approx(c1 * var).epsilon(1e-7));
    }
  }
}

TEST_CASE("stochastic gradient with zero residuals") {
  std::mt19937_64 rng(8);
  const ObservedTable base = full_table(6, 6, 2, rng);
  const Vector b_true = Vector::LinSpaced(2, 1.0, -1.0);
  const Vector y = base.X() * b_true;
  std::vector<int> rows(base.N()), cols(base.N());
  for (std::int64_t k = 0; k < base.N(); ++k) {
    rows[k] = base.row_of(k);
    cols[k] = base.col_of(k);
  }
  const ObservedTable t(6, 6, rows, cols, y, base.X());
  const SubsetBatch batch = SubsetBatch::extract(t, {0, 2, 3}, {1, 4});
  const Theta theta{b_true, 0.0, 0.0, 0.0};
  const LatentState zero{Vector::Zero(3), Vector::Zero(2)};
  const PriorSpec prior{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  const Vector g = stochastic_gradient(batch, theta, std::span(&zero, 1), t.N(), 6, 6, prior);
  CHECK(g.head(2).isZero(1e-12));
  CHECK(g[2] == doctest::Approx(-3.0));  // (R/r)(-r/2)
  CHECK(g[3] == doctest::Approx(-3.0));
  CHECK(g[4] == doctest::Approx(-static_cast<double>(t.N()) / 2.0));
}

TEST_CASE("stochastic gradient matches finite differences") {
  std::mt19937_64 rng(9);
  const PriorSpec prior{1.2, 0.8, 0.9, 1.1, 0.01, 0.01};
  for (int trial = 0; trial < 50; ++trial) {
    const ObservedTable t = oracle::random_table(10, 9, 3, 0.35 + 0.01 * trial, rng);
    const SubsetBatch batch = sample_subset(t, 4, 3, 100, rng);
    const Theta theta = random_theta(3, rng);
    std::vector<LatentState> chain;
    for (int k = 0; k < 3; ++k) chain.push_back(random_latent(4, 3, rng));
    const double sN = static_cast<double>(t.N()) / batch.n(), sR = 10.0 / 4.0, sC = 9.0 / 3.0;
    const auto f = [&](const Vector& v) {
      const Theta u = Theta::from_vector(v);
      double total = 0.0;
      for (const auto& s : chain)
        total += sN * oracle::complete_loglik(batch, u.b, u.eta_e, s) + sR * oracle::effects_logpdf(s.alpha, u.eta_alpha) +
                 sC * oracle::effects_logpdf(s.beta, u.eta_beta);
      return total / chain.size() + oracle::ig_logpdf_eta(u.eta_alpha, prior.a1, prior.b1) +
             oracle::ig_logpdf_eta(u.eta_beta, prior.a2, prior.b2) + oracle::ig_logpdf_eta(u.eta_e, prior.a3, prior.b3);
    };
    const Vector g = stochastic_gradient(batch, theta, chain, t.N(), t.R(), t.C(), prior);
    const Vector fd = oracle::central_difference(f, theta.to_vector());
    CHECK(oracle::relative_error(g, fd) < 1e-6);
  }
}

TEST_CASE("subset averages of the gradient are exact on a full 4x4 table") {
  std::mt19937_64 rng(10);
  const ObservedTable t = full_table(4, 4, 2, rng);
  const Theta theta = random_theta(2, rng);
  const LatentState full = random_latent(4, 4, rng);
  const PriorSpec prior;

  // Full complete-data gradient, summed cell by cell.
  Vector want = Vector::Zero(5);
  const double s2e = theta.sigma2_e();
  for (std::int64_t k = 0; k < t.N(); ++k) {
    const double e = t.y(k) - t.X().row(k).dot(theta.b) - full.alpha[t.row_of(k)] - full.beta[t.col_of(k)];
    want.head(2) += t.X().row(k).transpose() * e / s2e;
    want[4] += -0.5 + 0.5 * e * e / s2e;
  }
  for (double a : full.alpha) want[2] += -0.5 + 0.5 * a * a / theta.sigma2_alpha();
  for (double b : full.beta) want[3] += -0.5 + 0.5 * b * b / theta.sigma2_beta();

  const std::vector<std::vector<int>> pairs{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  Vector avg = Vector::Zero(5);
  for (const auto& rows : pairs)
    for (const auto& cols : pairs) {
      const SubsetBatch batch = SubsetBatch::extract(t, rows, cols);
      LatentState s{Vector(2), Vector(2)};
      for (int k = 0; k < 2; ++k) {
        s.alpha[k] = full.alpha[rows[k]];
        s.beta[k] = full.beta[cols[k]];
      }
      avg += stochastic_gradient(batch, theta, std::span(&s, 1), t.N(), 4, 4, prior) - log_prior_grad(theta, prior);
    }
  avg /= 36.0;
  for (int k = 0; k < 5; ++k) CHECK(std::abs(avg[k] - want[k]) < 1e-10 * std::max(1.0, std::abs(want[k])));
}

TEST_CASE("sieve membership") {
  Theta zero{Vector::Zero(2), 0.0, 0.0, 0.0};
  CHECK(sieve_contains(zero, SieveBounds{0.1, 0.1, 0.1, 0.1, 10}));

  Theta edge{Vector::Constant(2, std::log(1000.0)), 0.0, 0.0, 0.0};
  CHECK(sieve_contains(edge, SieveBounds{1.0, 1.0, 1.0, 1.0, 1000}));
  edge.b[0] = std::nextafter(edge.b[0], 10.0);
  CHECK_FALSE(sieve_contains(edge, SieveBounds{1.0, 1.0, 1.0, 1.0, 1000}));

  Theta t{Vector::Zero(1), 2.0, 0.0, 0.0};
  CHECK(std::log(std::log(100.0)) == doctest::Approx(1.527).epsilon(1e-3));
  CHECK_FALSE(sieve_contains(t, SieveBounds{1.0, 1.0, 1.0, 1.0, 100}));

  CHECK_THROWS_AS(sieve_contains(t, SieveBounds{1.0, 1.0, 1.0, 1.0, 2}), InvalidArgument);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 200; ++trial) {
    Theta u{Vector::Constant(2, 3.0 * z(rng)), z(rng), z(rng), z(rng)};
    const std::int64_t N = 3 + trial * 7;
    if (sieve_contains(u, SieveBounds{1.0, 1.0, 1.0, 1.0, N}))
      CHECK(sieve_contains(u, SieveBounds{1.0, 1.0, 1.0, 1.0, N + 1000}));
  }
}
