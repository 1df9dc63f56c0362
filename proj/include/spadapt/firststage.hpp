#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "spadapt/config.hpp"

namespace spadapt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Frozen first-stage predictor. Ols stores pooled regression coefficients;
// External wraps a precomputed prediction matrix; Zero predicts 0.
struct FirstStage {
  FirstStageKind kind = FirstStageKind::Zero;
  double intercept = 0.0;
  VectorXd beta;      // one coefficient per covariate channel (Ols)
  MatrixXd external;  // T x N predictions (External)
};

// Pooled OLS with intercept over the (time, location) cells given by
// rows x cols. Throws naming the offending column when the design is
// rank-deficient.
FirstStage fit_ols(const std::vector<MatrixXd>& x, const MatrixXd& y,
                   const std::vector<int>& rows, const std::vector<int>& cols);

// Standard errors of (intercept, beta) from the last fit's design; used by
// tests to bound recovery error.
VectorXd ols_standard_errors(const std::vector<MatrixXd>& x, const MatrixXd& y,
                             const std::vector<int>& rows, const std::vector<int>& cols,
                             const FirstStage& fs);

MatrixXd first_stage_predict(const FirstStage& fs, const std::vector<MatrixXd>& x);

// Natural-parameter residual R = g_inv(Y) - F - M. Identity link: R = Y-F-M.
// Sigmoid link: Y must be 0/1; labels are clamped to [eps, 1-eps] before the
// logit.
MatrixXd compute_residual(const MatrixXd& y, const MatrixXd& f, const MatrixXd& m, Link link,
                          double eps = 1e-7);

// Residual trend head. Linear: w^T x + b. Mlp: two layers with tanh hidden
// units. Zero has no parameters and always outputs 0.
struct TrendModel {
  TrendKind kind = TrendKind::Zero;
  VectorXd w;   // linear weights
  double b = 0.0;
  MatrixXd w1;  // hidden x p
  VectorXd b1;  // hidden
  VectorXd w2;  // hidden
  double b2 = 0.0;
};

// Mlp weights are seeded N(0, 1/sqrt(fan_in)); Linear and Zero start at 0.
TrendModel make_trend(const TrendConfig& cfg, int n_channels, std::uint64_t seed);

// T x N trend surface over all cells.
MatrixXd trend_forward(const TrendModel& tm, const std::vector<MatrixXd>& x);

// Flat parameter access for finite-difference checks.
VectorXd trend_params(const TrendModel& tm);
void set_trend_params(TrendModel& tm, const VectorXd& p);

// Coupling loss (rho / 2) * mean over batch cells of (M(psi) - target)^2,
// with rows selecting the mini-batch. The gradient flows through M only.
double trend_coupling_loss(const TrendModel& tm, const std::vector<MatrixXd>& x,
                           const std::vector<int>& rows, const MatrixXd& target, double rho);
VectorXd trend_coupling_gradient(const TrendModel& tm, const std::vector<MatrixXd>& x,
                                 const std::vector<int>& rows, const MatrixXd& target, double rho);

// One plain gradient-descent step on the coupling loss.
void trend_gradient_step(TrendModel& tm, const std::vector<MatrixXd>& x,
                         const std::vector<int>& rows, const MatrixXd& target, double rho,
                         double lr);

// Task-loss warm-up (mean squared error for identity, mean BCE for sigmoid)
// with SGD + momentum 0.9 over time-row batches and early stopping on the
// validation rows. Returns the per-epoch training loss.
std::vector<double> warmup_trend(TrendModel& tm, const std::vector<MatrixXd>& x, const MatrixXd& y,
                                 const MatrixXd& f, Link link, const std::vector<int>& train_rows,
                                 const std::vector<int>& val_rows, int epochs, int batch, double lr,
                                 int patience, std::uint64_t seed);

}  // namespace spadapt
