#pragma once

#include <Eigen/Dense>
#include <vector>

#include "spadapt/geometry.hpp"

namespace spadapt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct Pointwise {
  double rmse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
};
// R^2 uses the evaluation-set mean as the reference.
Pointwise pointwise(const VectorXd& y, const VectorXd& yhat);

struct Classification {
  double acc = 0.0;
  double auc = 0.0;  // NaN when y is single-class
  double f1 = 0.0;
};
// AUC is the Mann-Whitney rank statistic with average ranks at ties.
Classification classification(const VectorXd& y, const VectorXd& p, double threshold = 0.5);

// Column-centered second moment of a prediction block, 1/(T-1) normalization.
MatrixXd prediction_covariance(const MatrixXd& block);

// ||pred - ref||_F / ||ref||_F.
double cov_frob(const MatrixXd& pred, const MatrixXd& ref);

struct SemivariogramConfig {
  int n_bins = 15;
  double delta = 1e-8;  // sv_score denominator stabilizer
};

struct Semivariogram {
  VectorXd h;        // mean pair distance per bin
  VectorXd gamma;    // Matheron estimate, averaged over repetitions
  std::vector<Eigen::Index> counts;  // pairs per bin
};

// Equal-count distance bins over all location pairs; tied distances never
// straddle a bin edge, and bins emptied by the tie snapping are dropped with
// a warning. gamma(h) = (1 / (2 |N(h)| T)) sum over pairs and repetitions of
// the squared difference.
Semivariogram semivariogram(const MatrixXd& block, const LocationSet& locs,
                            const SemivariogramConfig& cfg);

// Model-implied curve from a covariance matrix, same bins as the data
// version: gamma(h) = bin mean of (sigma_ii + sigma_jj - 2 sigma_ij) / 2.
Semivariogram semivariogram_from_cov(const MatrixXd& sigma, const LocationSet& locs,
                                     const SemivariogramConfig& cfg);

// sqrt((1/B) sum_b ((pred_b - obs_b) / (obs_b + delta))^2); bins must match.
double sv_score(const Semivariogram& pred, const Semivariogram& obs, double delta);

struct CoverageStats {
  double cp = 0.0;    // empirical coverage
  double mpiw = 0.0;  // mean interval width
};
CoverageStats cp_mpiw(const VectorXd& y, const VectorXd& lo, const VectorXd& hi);

// Expected calibration error over equal-width probability bins.
double ece(const VectorXd& y, const VectorXd& p, int n_bins = 10);

// Subspace affinity ||Phi_hat^T Phi||_F / sqrt(K); |<phi_hat, phi>| at K = 1.
// Columns must be unit-norm.
double basis_alignment(const MatrixXd& phi_hat, const MatrixXd& phi_true);

}  // namespace spadapt
