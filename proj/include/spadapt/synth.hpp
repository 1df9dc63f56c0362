#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "spadapt/config.hpp"
#include "spadapt/geometry.hpp"

namespace spadapt {

// One synthetic replicate. Covariate channels are ordered
// [temperature, wind, humidity, pressure, pollution], matching beta.
struct SyntheticData {
  MatrixXd y;                // T x N
  std::vector<MatrixXd> x;   // 5 channels, each T x N
  LocationSet locations;     // N x 1
  VectorXd phi_true;         // planted unit-norm basis, length N
  VectorXd alpha_true;       // AR(1) basis score, length T
  VectorXd gamma_true;       // global drift (zero when disabled), length T
  VectorXd beta;             // covariate coefficients
  double intercept = 0.0;
};

// Deterministic for a fixed (cfg, seed): one mt19937_64 stream, consumed in
// the order covariate noise (per time step: temperature, wind, humidity,
// pollution), per-location jitter (channel-major, then time, then location),
// global drift innovations (only when enabled), basis score innovations, and
// finally observation noise (time-major, location-minor).
SyntheticData generate(const DgpConfig& cfg, std::uint64_t seed);

// Planted basis: exp(-s^2) on the location grid, normalized to unit length.
VectorXd true_basis(const DgpConfig& cfg);

// alpha_sd^2 * phi phi^T + noise_sd^2 * I. The optional global drift is a
// common additive term and is not part of this matrix.
MatrixXd true_covariance(const DgpConfig& cfg);

// Equispaced grid on [s_min, s_max], endpoints included.
LocationSet grid_locations(const DgpConfig& cfg);

}  // namespace spadapt
