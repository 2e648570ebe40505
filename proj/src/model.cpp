#include "pigeonhole/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pigeonhole/error.hpp"

namespace pigeonhole {

namespace {

std::uint64_t cell_key(int i, int j) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(i)) << 32) | static_cast<std::uint32_t>(j);
}

}  // namespace

// ---------------------------------------------------------------- Theta

Theta Theta::from_variances(Vector b, double s2_alpha, double s2_beta, double s2_e) {
  if (!(s2_alpha > 0.0) || !(s2_beta > 0.0) || !(s2_e > 0.0))
    throw InvalidArgument("variance components must be strictly positive");
  return Theta{std::move(b), std::log(s2_alpha), std::log(s2_beta), std::log(s2_e)};
}

Theta Theta::from_vector(const Vector& packed) {
  if (packed.size() < 4) throw InvalidArgument("packed theta needs at least p+3 = 4 entries");
  const auto p = packed.size() - 3;
  return Theta{packed.head(p), packed[p], packed[p + 1], packed[p + 2]};
}

Vector Theta::to_vector() const {
  Vector v(dim());
  v.head(p()) = b;
  v[p()] = eta_alpha;
  v[p() + 1] = eta_beta;
  v[p() + 2] = eta_e;
  return v;
}

double Theta::sigma2_alpha() const { return std::exp(eta_alpha); }
double Theta::sigma2_beta() const { return std::exp(eta_beta); }
double Theta::sigma2_e() const { return std::exp(eta_e); }

bool Theta::valid() const {
  if (b.size() < 1 || !b.allFinite()) return false;
  for (double eta : {eta_alpha, eta_beta, eta_e}) {
    const double s2 = std::exp(eta);
    if (!std::isfinite(s2) || !(s2 > 0.0)) return false;
  }
  return true;
}

void PriorSpec::validate() const {
  for (double v : {a1, b1, a2, b2, a3, b3})
    if (!(v > 0.0) || !std::isfinite(v))
      throw InvalidArgument("inverse-gamma hyperparameters must be finite and strictly positive");
}

// -------------------------------------------------------- ObservedTable

ObservedTable::ObservedTable(int R, int C, std::vector<int> row, std::vector<int> col, Vector y, RowMatrix X)
    : R_(R), C_(C), row_(std::move(row)), col_(std::move(col)), y_(std::move(y)), X_(std::move(X)) {
  if (R_ < 1 || C_ < 1) throw InvalidArgument("table dimensions must be positive");
  const auto N = static_cast<std::size_t>(y_.size());
  if (row_.size() != N || col_.size() != N || static_cast<std::size_t>(X_.rows()) != N)
    throw InvalidArgument("row, col, y and X must describe the same number of cells");
  if (X_.cols() < 1) throw InvalidArgument("at least one covariate is required");

  row_cells_.assign(R_, {});
  col_cells_.assign(C_, {});
  index_.reserve(N);
  for (std::size_t k = 0; k < N; ++k) {
    const int i = row_[k], j = col_[k];
    if (i < 0 || i >= R_ || j < 0 || j >= C_)
      throw InvalidArgument("cell " + std::to_string(k) + " lies outside the " + std::to_string(R_) + "x" +
                            std::to_string(C_) + " table");
    if (!index_.emplace(cell_key(i, j), static_cast<std::int64_t>(k)).second)
      throw InvalidArgument("duplicate cell at (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    row_cells_[i].push_back(static_cast<std::int64_t>(k));
    col_cells_[j].push_back(static_cast<std::int64_t>(k));
  }
  row_labels_.resize(R_);
  col_labels_.resize(C_);
  std::iota(row_labels_.begin(), row_labels_.end(), 0);
  std::iota(col_labels_.begin(), col_labels_.end(), 0);
}

std::int64_t ObservedTable::find(int i, int j) const {
  const auto it = index_.find(cell_key(i, j));
  return it == index_.end() ? -1 : it->second;
}

bool ObservedTable::pruned() const {
  for (const auto& cells : row_cells_)
    if (cells.empty()) return false;
  for (const auto& cells : col_cells_)
    if (cells.empty()) return false;
  return true;
}

void ObservedTable::set_labels(std::vector<std::int64_t> row_labels, std::vector<std::int64_t> col_labels) {
  if (static_cast<int>(row_labels.size()) != R_ || static_cast<int>(col_labels.size()) != C_)
    throw InvalidArgument("label vectors must match table dimensions");
  row_labels_ = std::move(row_labels);
  col_labels_ = std::move(col_labels);
}

// ---------------------------------------------------------- SubsetBatch

SubsetBatch SubsetBatch::extract(const ObservedTable& table, std::vector<int> rows, std::vector<int> cols) {
  SubsetBatch batch;
  batch.row_ids_ = std::move(rows);
  batch.col_ids_ = std::move(cols);
  const int r = batch.r(), c = batch.c();

  std::vector<std::int64_t> cells;
  cells.reserve(static_cast<std::size_t>(r) * c);
  batch.row_start_.assign(r + 1, 0);
  for (int i = 0; i < r; ++i) {
    const int si = batch.row_ids_[i];
    if (si < 0 || si >= table.R()) throw InvalidArgument("batch row id out of range");
    for (int j = 0; j < c; ++j) {
      const int qj = batch.col_ids_[j];
      if (qj < 0 || qj >= table.C()) throw InvalidArgument("batch column id out of range");
      const auto k = table.find(si, qj);
      if (k >= 0) {
        cells.push_back(k);
        batch.cell_row_.push_back(i);
        batch.cell_col_.push_back(j);
      }
    }
    batch.row_start_[i + 1] = static_cast<int>(cells.size());
  }

  const int n = static_cast<int>(cells.size());
  batch.y_.resize(n);
  batch.X_.resize(n, table.p());
  for (int k = 0; k < n; ++k) {
    batch.y_[k] = table.y(cells[k]);
    batch.X_.row(k) = table.X().row(cells[k]);
  }

  // Counting sort of cells by local column.
  batch.col_start_.assign(c + 1, 0);
  for (int k = 0; k < n; ++k) ++batch.col_start_[batch.cell_col_[k] + 1];
  for (int j = 0; j < c; ++j) batch.col_start_[j + 1] += batch.col_start_[j];
  batch.col_order_.resize(n);
  std::vector<int> fill(batch.col_start_.begin(), batch.col_start_.end() - 1);
  for (int k = 0; k < n; ++k) batch.col_order_[fill[batch.cell_col_[k]]++] = k;
  return batch;
}

std::vector<int> SubsetBatch::empty_rows() const {
  std::vector<int> out;
  for (int i = 0; i < r(); ++i)
    if (row_count(i) == 0) out.push_back(i);
  return out;
}

std::vector<int> SubsetBatch::empty_cols() const {
  std::vector<int> out;
  for (int j = 0; j < c(); ++j)
    if (col_count(j) == 0) out.push_back(j);
  return out;
}

void SieveBounds::validate() const {
  for (double v : {B0, A1, B1, E1})
    if (!(v > 0.0)) throw InvalidArgument("sieve bounds must be strictly positive");
  if (N < 3) throw InvalidArgument("sieve requires N >= 3 so that log log N > 0");
}

// ----------------------------------------------------------- operations

Vector log_prior_grad(const Theta& theta, const PriorSpec& prior) {
  Vector g = Vector::Zero(theta.dim());
  const int p = theta.p();
  g[p] = -prior.a1 + prior.b1 * std::exp(-theta.eta_alpha);
  g[p + 1] = -prior.a2 + prior.b2 * std::exp(-theta.eta_beta);
  g[p + 2] = -prior.a3 + prior.b3 * std::exp(-theta.eta_e);
  return g;
}

Vector fixed_residuals(const SubsetBatch& batch, const Vector& b) {
  if (b.size() != batch.p()) throw InvalidArgument("coefficient length does not match batch covariates");
  return batch.y() - batch.X() * b;
}

NormalParams conditional_effect_params(Axis axis, int index, const SubsetBatch& batch, const Theta& theta,
                                       const LatentState& latent) {
  const Vector resid = fixed_residuals(batch, theta.b);
  const double s2_e = theta.sigma2_e();
  double sum = 0.0;
  int count = 0;
  double s2 = 0.0;
  if (axis == Axis::Row) {
    if (index < 0 || index >= batch.r()) throw InvalidArgument("row index outside batch");
    if (latent.beta.size() != batch.c()) throw InvalidArgument("latent beta length does not match batch");
    count = batch.row_count(index);
    for (int k = batch.row_begin(index); k < batch.row_begin(index + 1); ++k)
      sum += resid[k] - latent.beta[batch.cell_col(k)];
    s2 = theta.sigma2_alpha();
  } else {
    if (index < 0 || index >= batch.c()) throw InvalidArgument("column index outside batch");
    if (latent.alpha.size() != batch.r()) throw InvalidArgument("latent alpha length does not match batch");
    count = batch.col_count(index);
    const auto& order = batch.col_order();
    for (int t = batch.col_begin(index); t < batch.col_begin(index + 1); ++t) {
      const int k = order[t];
      sum += resid[k] - latent.alpha[batch.cell_row(k)];
    }
    s2 = theta.sigma2_beta();
  }
  if (count == 0) throw InvalidArgument("batch row/column has no observations; corrupt batch");
  const double denom = count * s2 + s2_e;
  return {sum * s2 / denom, s2 * s2_e / denom};
}

Vector stochastic_gradient(const SubsetBatch& batch, const Theta& theta, std::span<const LatentState> latent_chain,
                           std::int64_t N, int R, int C, const PriorSpec& prior) {
  const int n = batch.n(), r = batch.r(), c = batch.c(), p = batch.p();
  if (latent_chain.empty()) throw InvalidArgument("latent chain must contain at least one state");
  if (n == 0) throw InvalidArgument("empty batch");
  if (theta.p() != p) throw InvalidArgument("theta dimension does not match batch covariates");

  const Vector resid = fixed_residuals(batch, theta.b);
  Vector resid_sum = Vector::Zero(n);
  double sq_resid = 0.0, sq_alpha = 0.0, sq_beta = 0.0;
  for (const auto& state : latent_chain) {
    if (state.alpha.size() != r || state.beta.size() != c)
      throw InvalidArgument("latent state length does not match batch");
    for (int k = 0; k < n; ++k) {
      const double e = resid[k] - state.alpha[batch.cell_row(k)] - state.beta[batch.cell_col(k)];
      resid_sum[k] += e;
      sq_resid += e * e;
    }
    sq_alpha += state.alpha.squaredNorm();
    sq_beta += state.beta.squaredNorm();
  }

  const double m = static_cast<double>(latent_chain.size());
  const double inv_s2_e = std::exp(-theta.eta_e);
  const double scale_n = static_cast<double>(N) / n;

  Vector g(p + 3);
  g.head(p) = scale_n * inv_s2_e * (batch.X().transpose() * resid_sum) / m;
  g[p] = static_cast<double>(R) / r * 0.5 * (-r + std::exp(-theta.eta_alpha) * sq_alpha / m);
  g[p + 1] = static_cast<double>(C) / c * 0.5 * (-c + std::exp(-theta.eta_beta) * sq_beta / m);
  g[p + 2] = scale_n * 0.5 * (-n + inv_s2_e * sq_resid / m);
  return g + log_prior_grad(theta, prior);
}

bool sieve_contains(const Theta& theta, const SieveBounds& bounds) {
  bounds.validate();
  const double logN = std::log(static_cast<double>(bounds.N));
  const double loglogN = std::log(logN);
  if (theta.b.size() > 0 && theta.b.cwiseAbs().maxCoeff() > bounds.B0 * logN) return false;
  return std::abs(theta.eta_alpha) <= bounds.A1 * loglogN && std::abs(theta.eta_beta) <= bounds.B1 * loglogN &&
         std::abs(theta.eta_e) <= bounds.E1 * loglogN;
}

}  // namespace pigeonhole
