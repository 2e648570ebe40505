#ifndef PIGEONHOLE_MODEL_HPP
#define PIGEONHOLE_MODEL_HPP

/*
 * Two-factor crossed mixed effects model
 *
 *     Y_ij = x_ij' b + alpha_i + beta_j + e_ij,
 *     alpha_i ~ N(0, s2_alpha), beta_j ~ N(0, s2_beta), e_ij ~ N(0, s2_e),
 *
 * with a flat prior on b and inverse-gamma priors on the three variances.
 * Variances are carried on the log scale (eta = log s2) everywhere; s2 is
 * only materialized when reporting.
 *
 * Gradient convention: every gradient returned by this library is an
 * ascent direction of the (scaled) log density, i.e. the bracketed term of
 * the Langevin drift.
 */

#include <cstdint>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace pigeonhole {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Model parameters: fixed effects and log variance components.
struct Theta {
  Vector b;
  double eta_alpha = 0.0;
  double eta_beta = 0.0;
  double eta_e = 0.0;

  static Theta from_variances(Vector b, double s2_alpha, double s2_beta, double s2_e);
  /// Inverse of to_vector(); the last three entries are the eta's.
  static Theta from_vector(const Vector& packed);

  int p() const { return static_cast<int>(b.size()); }
  int dim() const { return p() + 3; }
  Vector to_vector() const;

  double sigma2_alpha() const;
  double sigma2_beta() const;
  double sigma2_e() const;

  /// exp(eta) finite and strictly positive for all three components, b finite.
  bool valid() const;
};

/// Inverse-gamma (shape, rate) pairs for s2_alpha, s2_beta, s2_e.
struct PriorSpec {
  double a1 = 1.0, b1 = 1.0;
  double a2 = 1.0, b2 = 1.0;
  double a3 = 0.01, b3 = 0.01;

  void validate() const;
};

/// Sparse R x C response table with per-cell covariates.
///
/// Cells are stored in insertion order; rows()/cols() give per-row and
/// per-column cell index lists. Original identifiers are kept for every
/// retained row and column so that pruning and filtering stay traceable.
class ObservedTable {
public:
  ObservedTable() = default;

  /// Throws InvalidArgument on out-of-range ids, duplicate (row, col) pairs
  /// or dimension mismatch between y and X.
  ObservedTable(int R, int C, std::vector<int> row, std::vector<int> col, Vector y, RowMatrix X);

  int R() const { return R_; }
  int C() const { return C_; }
  int p() const { return static_cast<int>(X_.cols()); }
  std::int64_t N() const { return static_cast<std::int64_t>(y_.size()); }

  int row_of(std::int64_t cell) const { return row_[cell]; }
  int col_of(std::int64_t cell) const { return col_[cell]; }
  double y(std::int64_t cell) const { return y_[cell]; }
  const Vector& y() const { return y_; }
  const RowMatrix& X() const { return X_; }

  int row_count(int i) const { return static_cast<int>(row_cells_[i].size()); }
  int col_count(int j) const { return static_cast<int>(col_cells_[j].size()); }
  const std::vector<std::int64_t>& row_cells(int i) const { return row_cells_[i]; }
  const std::vector<std::int64_t>& col_cells(int j) const { return col_cells_[j]; }

  /// Cell index at (i, j), or -1 when unobserved.
  std::int64_t find(int i, int j) const;

  bool fully_observed() const { return N() == static_cast<std::int64_t>(R_) * C_; }
  /// Every row and column has at least one cell.
  bool pruned() const;

  const std::vector<std::int64_t>& row_labels() const { return row_labels_; }
  const std::vector<std::int64_t>& col_labels() const { return col_labels_; }
  void set_labels(std::vector<std::int64_t> row_labels, std::vector<std::int64_t> col_labels);

private:
  int R_ = 0;
  int C_ = 0;
  std::vector<int> row_;
  std::vector<int> col_;
  Vector y_;
  RowMatrix X_;
  std::vector<std::vector<std::int64_t>> row_cells_;
  std::vector<std::vector<std::int64_t>> col_cells_;
  std::unordered_map<std::uint64_t, std::int64_t> index_;
  std::vector<std::int64_t> row_labels_;
  std::vector<std::int64_t> col_labels_;
};

/// The r x c sub-block selected in one sampler iteration.
///
/// Cells are ordered by local row; col_order() lists the same cells grouped
/// by local column. Holds copies of y and x for its cells so that it is
/// self-contained.
class SubsetBatch {
public:
  SubsetBatch() = default;

  /// Collect the observed cells of table on the given rows x cols. Does not
  /// require every row/column to be non-empty; see empty_rows()/empty_cols().
  static SubsetBatch extract(const ObservedTable& table, std::vector<int> rows, std::vector<int> cols);

  int r() const { return static_cast<int>(row_ids_.size()); }
  int c() const { return static_cast<int>(col_ids_.size()); }
  int n() const { return static_cast<int>(y_.size()); }
  int p() const { return static_cast<int>(X_.cols()); }

  const std::vector<int>& row_ids() const { return row_ids_; }
  const std::vector<int>& col_ids() const { return col_ids_; }

  int cell_row(int k) const { return cell_row_[k]; }
  int cell_col(int k) const { return cell_col_[k]; }
  const Vector& y() const { return y_; }
  const RowMatrix& X() const { return X_; }

  int row_count(int i) const { return row_start_[i + 1] - row_start_[i]; }
  int col_count(int j) const { return col_start_[j + 1] - col_start_[j]; }
  /// Cells of local row i are [row_begin(i), row_begin(i+1)).
  int row_begin(int i) const { return row_start_[i]; }
  /// Cells of local column j are col_order()[col_begin(j) .. col_begin(j+1)).
  int col_begin(int j) const { return col_start_[j]; }
  const std::vector<int>& col_order() const { return col_order_; }

  std::vector<int> empty_rows() const;
  std::vector<int> empty_cols() const;
  bool valid() const { return empty_rows().empty() && empty_cols().empty(); }

private:
  std::vector<int> row_ids_;
  std::vector<int> col_ids_;
  std::vector<int> cell_row_;
  std::vector<int> cell_col_;
  Vector y_;
  RowMatrix X_;
  std::vector<int> row_start_;
  std::vector<int> col_start_;
  std::vector<int> col_order_;
};

/// Latent row/column effects of one batch.
struct LatentState {
  Vector alpha;
  Vector beta;
};

/// Box constraint on parameters that grows with N.
struct SieveBounds {
  double B0 = 1.0;
  double A1 = 1.0;
  double B1 = 1.0;
  double E1 = 1.0;
  std::int64_t N = 3;

  void validate() const;
};

enum class Axis { Row, Col };

struct NormalParams {
  double mean;
  double variance;
};

/// Gradient of the log prior in (b, eta_alpha, eta_beta, eta_e). The b block
/// is identically zero under the flat prior.
Vector log_prior_grad(const Theta& theta, const PriorSpec& prior);

/// Full conditional of one latent effect given theta, the batch and the
/// partner effects held in latent (beta for rows, alpha for columns).
NormalParams conditional_effect_params(Axis axis, int index, const SubsetBatch& batch, const Theta& theta,
                                       const LatentState& latent);

/// Residuals y - x'b for every batch cell.
Vector fixed_residuals(const SubsetBatch& batch, const Vector& b);

/// Monte Carlo stochastic gradient averaged over a latent chain:
///   (N/n) grad_b log p(Y_n | b, alpha, beta, eta_e),
///   (R/r) grad_eta_alpha log pi(alpha | eta_alpha),
///   (C/c) grad_eta_beta log pi(beta | eta_beta),
///   (N/n) grad_eta_e log p(Y_n | b, alpha, beta, eta_e),
/// each averaged over the chain, plus log_prior_grad.
Vector stochastic_gradient(const SubsetBatch& batch, const Theta& theta, std::span<const LatentState> latent_chain,
                           std::int64_t N, int R, int C, const PriorSpec& prior);

/// Membership of theta in the sieve set (inclusive bounds).
bool sieve_contains(const Theta& theta, const SieveBounds& bounds);

}  // namespace pigeonhole

#endif  // PIGEONHOLE_MODEL_HPP
