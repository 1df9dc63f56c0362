#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace spadapt {

enum class Link { Identity, Sigmoid };
enum class FirstStageKind { Zero, Ols, External };
enum class TrendKind { Zero, Linear, Mlp };
enum class BceVariant { A, B, C };
enum class RankPolicy { Fixed, CumVar };
enum class TuneObjective { Rmse, CovFrob, SvScore };

// Synthetic data-generating process. Covariates are shared across locations up
// to i.i.d. jitter; the spatial signal enters through an AR(1)-scored bump
// basis on an equispaced 1-d grid.
struct DgpConfig {
  int n_locations = 512;
  int n_times = 1024;
  std::vector<double> beta = {10.0, -9.5, 2.6, -1.3, 1.2};
  double intercept = 50.0;
  double noise_sd = 4.0;        // observation noise
  double alpha_rho = 0.8;       // AR(1) coefficient of the basis score
  double alpha_sd = 5.0;        // stationary sd of the basis score
  double gamma_rho = 0.6;       // AR(1) coefficient of the global drift
  bool global_drift = false;    // drift disabled by default
  double s_min = -5.0;
  double s_max = 5.0;
  double covariate_noise_sd = 0.1;   // per-time covariate noise
  double location_jitter_sd = 0.01;  // per-location covariate perturbation
};

struct SplitSpec {
  double train_frac = 0.70;
  double val_frac = 0.15;  // remainder is the test block
};

struct TrendConfig {
  TrendKind kind = TrendKind::Zero;
  int hidden = 32;  // MLP hidden width
  double lr = 1e-2;
  int warmup_epochs = 0;
  int patience = 10;
};

struct RankConfig {
  RankPolicy policy = RankPolicy::Fixed;
  int k = 1;
  double tau_var = 0.9;  // cumulative-variance threshold for CumVar
};

struct AdmmSchedule {
  int max_iters = 3000;
  int min_outer = 20;
  double eps_abs = 0.0;
  double eps_rel = 1e-4;
  int n_phi = 5;       // basis update cadence
  int n_freeze = 200;  // basis frozen from this iteration on
};

struct Irl1Config {
  double alpha_step = 0.0;  // <= 0 selects 1 / (||C||_2 + lambda1 ||Omega||_2)
  double eps = 1e-4;        // reweighting floor
  double tol = 1e-6;
  int max_iters = 100;
};

struct DatasetPaths {
  std::string y;               // T x N response matrix
  std::vector<std::string> x;  // one T x N matrix per covariate channel
  std::string locations;       // N x d coordinate matrix
  std::string predictions;     // optional T x N frozen first-stage output
};

struct TuneConfig {
  double lo1 = 1e-4, hi1 = 1e8;  // lambda1 range, log-uniform
  double lo2 = 1e-4, hi2 = 1e8;  // lambda2 range
  int n_trials = 0;              // 0 disables tuning
  TuneObjective objective = TuneObjective::Rmse;
  bool tied = false;  // draw one lambda and use it for both penalties
};

struct SweepConfig {
  // The basis target is an unnormalized (T-scaled) Gram, so useful penalties
  // sit several decades above the covariance-scale eigenvalues.
  double lo = 1e2, hi = 1e7;
  int points = 7;
  bool include_zero = true;  // prepend lambda = 0 to the grid
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int n_seeds = 1;
  Link link = Link::Identity;
  FirstStageKind first_stage = FirstStageKind::Ols;
  bool standardize = false;  // report metrics on the train-standardized scale
  std::optional<DgpConfig> dgp;
  std::optional<DatasetPaths> dataset;
  SplitSpec splits;
  TrendConfig trend;
  RankConfig rank;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double rho = 2.0;
  int batch = 64;
  BceVariant bce_variant = BceVariant::A;
  double bce_step = 0.5;  // Bernoulli inner gradient step size
  int bce_inner = 2;      // Bernoulli inner iterations per sweep
  AdmmSchedule schedule;
  Irl1Config irl1;
  std::optional<double> tau;  // eigenvalue offset; defaults to lambda1
  TuneConfig tune;
  SweepConfig sweep;
  double holdout_frac = 0.2;
};

}  // namespace spadapt
