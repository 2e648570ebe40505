#include "pigeonhole/balanced.hpp"

#include <cmath>
#include <numbers>

#include "pigeonhole/error.hpp"

namespace pigeonhole {

namespace {

constexpr double kMinVariance = 1e-300;

void check_dims(int r, int c) {
  if (r < 2 || c < 2) throw InvalidArgument("balanced block needs r >= 2 and c >= 2");
}

struct Variances {
  double alpha, beta, e;
};

Variances variances_of(const Theta& theta) {
  const Variances v{theta.sigma2_alpha(), theta.sigma2_beta(), theta.sigma2_e()};
  for (double s2 : {v.alpha, v.beta, v.e})
    if (!(s2 >= kMinVariance) || !std::isfinite(s2))
      throw DegenerateState("variance component outside [1e-300, inf); refusing to evaluate");
  return v;
}

// Row sums, column sums, grand sum and sum of squares of a row-stacked
// residual. The quadratic forms of the pattern matrix reduce to these.
struct ResidualSums {
  Vector row, col;
  double grand = 0.0;
  double squares = 0.0;

  ResidualSums(const Vector& e, int r, int c) : row(Vector::Zero(r)), col(Vector::Zero(c)) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        const double v = e[i * c + j];
        row[i] += v;
        col[j] += v;
        squares += v * v;
      }
    grand = row.sum();
  }
};

// Sigma^{-1} e using the pattern decomposition
//   (x - y - w + z) I + (y - z) I_r(x)J_c + (w - z) J_r(x)I_c + z J_n.
Vector apply_precision(const PrecisionScalars& s, const Vector& e, const ResidualSums& sums) {
  const double diag = s.x - s.y - s.w + s.z;
  Vector out(e.size());
  for (int i = 0; i < s.r; ++i)
    for (int j = 0; j < s.c; ++j)
      out[i * s.c + j] = diag * e[i * s.c + j] + (s.y - s.z) * sums.row[i] + (s.w - s.z) * sums.col[j] + s.z * sums.grand;
  return out;
}

double precision_quadratic(const PrecisionScalars& s, const ResidualSums& sums) {
  return (s.x - s.y - s.w + s.z) * sums.squares + (s.y - s.z) * sums.row.squaredNorm() +
         (s.w - s.z) * sums.col.squaredNorm() + s.z * sums.grand * sums.grand;
}

// Eigenvalues of the two-factor compound symmetry structure.
double log_det_covariance(double a, double b, double e, int r, int c) {
  return (r - 1.0) * (c - 1.0) * std::log(e) + (r - 1.0) * std::log(e + c * a) + (c - 1.0) * std::log(e + r * b) +
         std::log(e + c * a + r * b);
}

double loglik_impl(const BalancedBlock& block, const Vector& b, double a, double bb, double e) {
  const auto s = precision_scalars_from_variances(a, bb, e, block.r, block.c);
  const Vector resid = block.y - block.X * b;
  const ResidualSums sums(resid, block.r, block.c);
  const double n = static_cast<double>(block.y.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det_covariance(a, bb, e, block.r, block.c) +
                 precision_quadratic(s, sums));
}

void check_block(const BalancedBlock& block, const Vector& b) {
  check_dims(block.r, block.c);
  const auto n = static_cast<Eigen::Index>(block.r) * block.c;
  if (block.y.size() != n || block.X.rows() != n)
    throw InvalidArgument("block must be fully observed: y and X need r*c rows");
  if (block.X.cols() != b.size()) throw InvalidArgument("coefficient length does not match covariates");
}

}  // namespace

PrecisionScalars precision_scalars_from_variances(double a, double b, double e, int r, int c) {
  check_dims(r, c);
  if (!(a >= 0.0) || !(b >= 0.0) || !(e > 0.0)) throw InvalidArgument("variances must be non-negative, s2_e > 0");
  const double er = e + r * b;
  const double ec = e + c * a;
  const double erc = e + c * a + r * b;
  PrecisionScalars s;
  s.r = r;
  s.c = c;
  s.z = a * b * (2.0 * e + c * a + r * b) / (e * er * ec * erc);
  s.y = s.z - a / (e * ec);
  s.x = s.y + (e + (r - 1.0) * b) / (e * er);
  s.w = s.z - b / (e * er);
  return s;
}

PrecisionScalars precision_scalars(const Theta& theta, int r, int c) {
  const auto v = variances_of(theta);
  return precision_scalars_from_variances(v.alpha, v.beta, v.e, r, c);
}

Matrix balanced_covariance_from_variances(double a, double b, double e, int r, int c) {
  check_dims(r, c);
  const int n = r * c;
  Matrix S = Matrix::Zero(n, n);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      for (int g = 0; g < r; ++g)
        for (int h = 0; h < c; ++h) {
          double v = 0.0;
          if (i == g) v += a;
          if (j == h) v += b;
          if (i == g && j == h) v += e;
          S(i * c + j, g * c + h) = v;
        }
  return S;
}

Matrix balanced_covariance(const Theta& theta, int r, int c) {
  const auto v = variances_of(theta);
  return balanced_covariance_from_variances(v.alpha, v.beta, v.e, r, c);
}

Matrix precision_matrix(const PrecisionScalars& s) {
  const int n = s.r * s.c;
  Matrix P(n, n);
  for (int i = 0; i < s.r; ++i)
    for (int j = 0; j < s.c; ++j)
      for (int g = 0; g < s.r; ++g)
        for (int h = 0; h < s.c; ++h) {
          const bool same_row = i == g, same_col = j == h;
          P(i * s.c + j, g * s.c + h) = same_row ? (same_col ? s.x : s.y) : (same_col ? s.w : s.z);
        }
  return P;
}

BalancedBlock BalancedBlock::from_batch(const SubsetBatch& batch) {
  if (static_cast<long>(batch.n()) != static_cast<long>(batch.r()) * batch.c())
    throw InvalidArgument("balanced likelihood requires a fully observed batch; use the pigeonhole sampler");
  // extract() orders cells by row then column, which is the row-stacked order.
  return BalancedBlock{batch.y(), batch.X(), batch.r(), batch.c()};
}

double balanced_loglik_from_variances(const BalancedBlock& block, const Vector& b, double a, double bb, double e) {
  check_block(block, b);
  return loglik_impl(block, b, a, bb, e);
}

double balanced_loglik(const BalancedBlock& block, const Theta& theta) {
  check_block(block, theta.b);
  const auto v = variances_of(theta);
  return loglik_impl(block, theta.b, v.alpha, v.beta, v.e);
}

Vector balanced_grads(const BalancedBlock& block, const Theta& theta) {
  check_block(block, theta.b);
  const auto var = variances_of(theta);
  const int r = block.r, c = block.c, p = theta.p();
  const double n = static_cast<double>(r) * c;
  const auto s = precision_scalars_from_variances(var.alpha, var.beta, var.e, r, c);
  const double x = s.x, y = s.y, z = s.z, w = s.w;

  const Vector resid = block.y - block.X * theta.b;
  const ResidualSums sums(resid, r, c);
  const double row_sq = sums.row.squaredNorm();
  const double col_sq = sums.col.squaredNorm();
  const double grand_sq = sums.grand * sums.grand;

  // Row and column sums of the precision pattern.
  const double row_own = x + (c - 1.0) * y;
  const double row_other = w + (c - 1.0) * z;
  const double col_own = x + (r - 1.0) * w;
  const double col_other = y + (r - 1.0) * z;

  const double v1 = row_own * row_own + (r - 1.0) * row_other * row_other;
  const double v2 = 2.0 * row_own * row_other + (r - 2.0) * row_other * row_other;
  const double v3 = col_own * col_own + (c - 1.0) * col_other * col_other;
  const double v4 = 2.0 * col_own * col_other + (c - 2.0) * col_other * col_other;
  const double v5 = x * x + (c - 1.0) * y * y + (r - 1.0) * (w * w + (c - 1.0) * z * z);
  const double v6 = 2.0 * x * y + (c - 2.0) * y * y + (r - 1.0) * (2.0 * w * z + (c - 2.0) * z * z);
  const double v7 = 2.0 * x * w + 2.0 * (c - 1.0) * y * z + (r - 2.0) * (w * w + (c - 1.0) * z * z);
  const double v8 = 2.0 * x * z + 2.0 * y * w + 2.0 * (c - 2.0) * y * z + (r - 2.0) * (2.0 * w * z + (c - 2.0) * z * z);

  Vector g(p + 3);
  g.head(p) = block.X.transpose() * apply_precision(s, resid, sums);

  // Indicator-weighted quadruple sums collapse onto row/column/grand sums.
  const double quad_alpha = (v1 - v2) * row_sq + v2 * grand_sq;
  const double quad_beta = (v3 - v4) * col_sq + v4 * grand_sq;
  const double quad_e = (v5 - v6 - v7 + v8) * sums.squares + (v6 - v8) * row_sq + (v7 - v8) * col_sq + v8 * grand_sq;

  g[p] = -0.5 * row_own * n * var.alpha + 0.5 * quad_alpha * var.alpha;
  g[p + 1] = -0.5 * col_own * n * var.beta + 0.5 * quad_beta * var.beta;
  g[p + 2] = -0.5 * n * x * var.e + 0.5 * quad_e * var.e;
  return g;
}

}  // namespace pigeonhole
