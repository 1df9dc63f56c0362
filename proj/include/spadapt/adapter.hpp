#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "spadapt/config.hpp"
#include "spadapt/firststage.hpp"

namespace spadapt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Column-orthonormal basis check (tolerance on ||Phi^T Phi - I||_max) plus the
// sign convention from orient_columns.
bool is_valid_basis(const MatrixXd& phi, double tol = 1e-8);

// Closed-form Gaussian consensus update: the minimizer of
//   ||Z (I - P)||_F^2 + (rho / 2) ||Z - res||_F^2,  P = phi phi^T,
// namely res P + (rho / (rho + 2)) res (I - P), computed through the rank-k
// factorization (cost O(L N k)).
MatrixXd z_update_gaussian(const MatrixXd& res, const MatrixXd& phi, double rho);

// Composite Bernoulli objective: mean BCE(sigmoid(Z (I - P)), Y) plus the
// per-cell coupling (rho / (2 L N)) ||Z - res||_F^2.
double bernoulli_z_objective(const MatrixXd& z, const MatrixXd& y, const MatrixXd& phi,
                             const MatrixXd& res, double rho);
MatrixXd bernoulli_z_gradient(const MatrixXd& z, const MatrixXd& y, const MatrixXd& phi,
                              const MatrixXd& res, double rho);

// n_inner explicit gradient steps on the composite Bernoulli objective.
void z_update_bernoulli(MatrixXd& z, const MatrixXd& y, const MatrixXd& phi, const MatrixXd& res,
                        double rho, double step, int n_inner);

// Surrogate second-moment target for the Bernoulli basis step. Labels must
// lie in [0, 1].
//   A: centered Gram of Z.
//   B: sym((1/2 - Y)^T Z) + (1/8) Z^T Z, uncentered.
//   C: centered Gram of the IRLS working response
//      Z + (Y - sigmoid(Z)) / (sigmoid(Z) (1 - sigmoid(Z)) + eps_w).
MatrixXd surrogate_target(BceVariant v, const MatrixXd& z, const MatrixXd& y, double eps_w = 1e-4);

// Column-mean-centered Gram Z_c^T Z_c (the Gaussian basis target, also
// surrogate variant A).
MatrixXd centered_gram(const MatrixXd& z);

// One basis update: top-k eigenvectors of sym(c - lambda1 * omega) when
// lambda2 == 0; otherwise a reweighted-l1 proximal loop (gradient step,
// entrywise soft-threshold with threshold alpha * lambda2 / (|phi| + eps),
// SVD retraction onto the orthonormal frame) seeded at those eigenvectors.
// Output satisfies is_valid_basis.
MatrixXd basis_step(const MatrixXd& c, const MatrixXd& omega, double lambda1, double lambda2,
                    int k, const Irl1Config& irl1);

// u += z - r (scaled dual ascent).
void dual_update(MatrixXd& u, const MatrixXd& z, const MatrixXd& r);

struct AdmmTrace {
  std::vector<double> primal;  // ||Z - R||_F over the full grid
  std::vector<double> dual;    // rho ||Z_k - Z_{k-1}||_F (batch rows change)
  std::vector<double> dphi;    // last basis change, 0 once frozen
  std::vector<double> scale;   // max(||Z||_F, ||Y||_F), the tolerance scale
  bool converged = false;
  int iterations = 0;
};

struct Stage2Options {
  int k = 1;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double rho = 2.0;
  int batch = 64;
  AdmmSchedule schedule;
  Irl1Config irl1;
  Link link = Link::Identity;
  BceVariant bce_variant = BceVariant::A;
  double bce_step = 0.5;
  int bce_inner = 2;
  double label_eps = 1e-7;
  double trend_lr = 1e-2;
  bool update_trend = false;  // the (T) sweep is skipped when false
  std::uint64_t seed = 0;     // mini-batch shuffling
};

struct AdapterModel {
  TrendModel trend;
  MatrixXd phi;     // N x k
  MatrixXd scores;  // T_train x k, Z Phi at the solution
  AdmmTrace trace;
  Stage2Options opts;
  double offbasis_max = 0.0;   // ||Z P_perp||_max at the solution
  double offbasis_frac = 0.0;  // ||Z P_perp||_F / ||Z||_F
};

// Mini-batch consensus fit of the residual field. y/f are the training block
// (T_train x N); x carries the covariate channels (may be empty when the
// trend is zero or frozen); omega is the N x N roughness matrix. Z and U live
// on the full training grid and only batch rows are touched per iteration.
AdapterModel fit_stage2(const MatrixXd& y, const MatrixXd& f, const std::vector<MatrixXd>& x,
                        const MatrixXd& omega, const TrendModel& warm, const Stage2Options& opts);

// In-basis reconstruction at evaluation cells: trend + (g_inv(Y) - trend) P,
// mapped through the response function for the sigmoid link.
MatrixXd reconstruct(const AdapterModel& model, const MatrixXd& y, const MatrixXd& f,
                     const std::vector<MatrixXd>& x, Link link);

// Directory layout: phi.csv, scores.csv, trend.json, trace.csv, model.json.
void save_model(const std::string& dir, const AdapterModel& model);
AdapterModel load_model(const std::string& dir);

}  // namespace spadapt
