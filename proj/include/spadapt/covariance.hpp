#pragma once

#include <Eigen/Dense>

namespace spadapt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// (1/T) R^T R, uncentered.
MatrixXd residual_gram(const MatrixXd& r);

// Cumulative-variance rank rule over the spectrum of S: smallest K whose
// leading eigenvalues capture a fraction tau_var of the trace. S == 0 gives
// K = 0. The curve is kept for reporting.
struct RankSelection {
  int k = 0;
  VectorXd eigenvalues;  // descending
  VectorXd cumvar;       // cumulative fraction, cumvar(i) for rank i+1
};
RankSelection select_basis_rank(const MatrixXd& s, double tau_var);

// Noise estimate with L active components:
//   sigma^2_L = (tr S - sum_{k<=L} (d_k - tau)) / (N - L),  1 <= L < N.
double sigma_for_rank(int l, const VectorXd& d, double tau, double tr_s, int n);

// Low-rank-plus-noise decomposition of the residual second moment.
//   d:        descending eigenvalues of Phi^T S Phi
//   rotation: the matching eigenvectors V (K x K); Phi V are the decorrelated
//             loading columns
//   lambda:   max(d_k - sigma2 - tau, 0)
//   l_hat:    largest L in {1..K} with d_L - tau > sigma^2_L, 0 when the
//             defining set is empty (then sigma2 = tr S / N)
struct CovarianceEstimate {
  VectorXd d;
  VectorXd lambda;
  MatrixXd rotation;
  double sigma2 = 0.0;
  int l_hat = 0;
  double tau = 0.0;
};

// Plug-in estimator on an orthonormal basis. sigma2 can be exactly 0 when the
// residuals are exactly low-rank and tau = 0; callers must not rely on strict
// positivity.
CovarianceEstimate estimate_covariance(const MatrixXd& phi, const MatrixXd& s, double tau);

// Rotated loading columns Phi V restricted to the retained rank (N x l_hat).
MatrixXd retained_loadings(const CovarianceEstimate& est, const MatrixXd& phi);

// Dense Sigma_r = (Phi V) Lambda (Phi V)^T + sigma2 I, retained columns only.
MatrixXd materialize_sigma(const CovarianceEstimate& est, const MatrixXd& phi);

}  // namespace spadapt
