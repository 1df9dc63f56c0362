#pragma once

#include <Eigen/Dense>

#include "spadapt/config.hpp"

namespace spadapt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Spatial sites in d = 1 or 2 dimensions. Coordinates are stored one site per
// row; duplicates (within 1e-12) are rejected because the interpolation
// system becomes singular.
struct LocationSet {
  MatrixXd coords;  // N x d
  int size() const { return static_cast<int>(coords.rows()); }
  int dim() const { return static_cast<int>(coords.cols()); }
};

// Validates dimensions and duplicate sites.
LocationSet make_locations(MatrixXd coords);

// Radial kernel: r^3 for d = 1, r^2 log r for d = 2 (0 at r = 0).
double tps_kernel(double r, int dim);

// Bending-energy matrix: upper-left N x N block of the inverse of the
// bordered system [[E, T], [T^T, 0]] with T = [1 | coords], symmetrized and
// with negative eigenvalues clipped to 0. Annihilates affine functions of the
// coordinates and is PSD. No rescaling is applied; the smoothness penalty
// weight absorbs the scale.
MatrixXd build_roughness(const LocationSet& locs);

// Natural thin-plate interpolant through (knots, values) columns, with the
// usual side conditions sum(w) = 0 and sum(w * s) = 0 per column.
struct TpsInterpolant {
  LocationSet knots;
  MatrixXd w;     // N x m radial weights
  MatrixXd poly;  // (d+1) x m affine coefficients, intercept first
};

TpsInterpolant tps_fit(const LocationSet& knots, const MatrixXd& values);

// Evaluates all columns at the query rows.
MatrixXd tps_eval(const TpsInterpolant& f, const MatrixXd& queries);

// Interpolates each basis column off-grid. Query rows that coincide with a
// training site (within 1e-12) copy that site's row exactly.
MatrixXd extend_basis(const MatrixXd& phi, const LocationSet& train, const MatrixXd& queries);

}  // namespace spadapt
