#ifndef PIGEONHOLE_BALANCED_HPP
#define PIGEONHOLE_BALANCED_HPP

// Marginal likelihood of a fully observed r x c block, with the row/column
// effects integrated out. The covariance of the row-stacked block is
//
//   Sigma = s2_alpha (I_r (x) J_c) + s2_beta (J_r (x) I_c) + s2_e I_n,
//
// and its inverse has the same four-value pattern: x on the diagonal, y for
// same row / other column, w for other row / same column, z elsewhere.
// Everything below is O(n) in the block size through row, column and grand
// sums of the residual; dense n x n matrices are only built on request.

#include "pigeonhole/model.hpp"

namespace pigeonhole {

struct PrecisionScalars {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 0.0;
  int r = 0;
  int c = 0;
};

/// Inverse-covariance entries for the r x c block, r, c >= 2.
PrecisionScalars precision_scalars(const Theta& theta, int r, int c);
/// Same on the variance scale; s2_alpha and s2_beta may be exactly zero.
PrecisionScalars precision_scalars_from_variances(double s2_alpha, double s2_beta, double s2_e, int r, int c);

Matrix balanced_covariance(const Theta& theta, int r, int c);
Matrix balanced_covariance_from_variances(double s2_alpha, double s2_beta, double s2_e, int r, int c);
/// Dense n x n matrix with the x/y/z/w pattern.
Matrix precision_matrix(const PrecisionScalars& s);

/// Row-stacked fully observed block: y[i*c + j] is cell (i, j).
struct BalancedBlock {
  Vector y;
  Matrix X;
  int r = 0;
  int c = 0;

  /// Throws InvalidArgument when the batch is not fully observed.
  static BalancedBlock from_batch(const SubsetBatch& batch);
};

/// Gaussian log density of the block under the marginal model.
double balanced_loglik(const BalancedBlock& block, const Theta& theta);
double balanced_loglik_from_variances(const BalancedBlock& block, const Vector& b, double s2_alpha, double s2_beta,
                                      double s2_e);

/// (grad_b, grad_eta_alpha, grad_eta_beta, grad_eta_e) of balanced_loglik.
/// Likelihood only: no subset scaling and no prior.
Vector balanced_grads(const BalancedBlock& block, const Theta& theta);

}  // namespace pigeonhole

#endif  // PIGEONHOLE_BALANCED_HPP
