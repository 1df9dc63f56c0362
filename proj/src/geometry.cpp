#include "spadapt/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "spadapt/linalg.hpp"

namespace spadapt {

namespace {

constexpr double kDuplicateTol = 1e-12;

// [[E, T], [T^T, 0]] with E the kernel matrix and T = [1 | coords].
MatrixXd bordered_system(const LocationSet& locs) {
  const int n = locs.size();
  const int d = locs.dim();
  const int m = d + 1;
  MatrixXd sys = MatrixXd::Zero(n + m, n + m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      const double r = (locs.coords.row(i) - locs.coords.row(j)).norm();
      const double v = tps_kernel(r, d);
      sys(i, j) = v;
      sys(j, i) = v;
    }
  }
  sys.block(0, n, n, 1).setOnes();
  sys.block(0, n + 1, n, d) = locs.coords;
  sys.block(n, 0, m, n) = sys.block(0, n, n, m).transpose();
  return sys;
}

}  // namespace

LocationSet make_locations(MatrixXd coords) {
  const int n = static_cast<int>(coords.rows());
  const int d = static_cast<int>(coords.cols());
  if (d != 1 && d != 2)
    throw std::invalid_argument("locations: dimension must be 1 or 2, got " + std::to_string(d));
  if (n < d + 2)
    throw std::invalid_argument("locations: need at least " + std::to_string(d + 2) + " sites");
  if (!coords.allFinite()) throw std::invalid_argument("locations: non-finite coordinate");
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if ((coords.row(i) - coords.row(j)).norm() <= kDuplicateTol)
        throw std::invalid_argument("locations: duplicate sites at rows " + std::to_string(j) +
                                    " and " + std::to_string(i));
    }
  }
  return LocationSet{std::move(coords)};
}

double tps_kernel(double r, int dim) {
  if (r < 0) throw std::invalid_argument("tps_kernel: negative radius");
  if (dim == 1) return r * r * r;
  if (dim == 2) return r == 0.0 ? 0.0 : r * r * std::log(r);
  throw std::invalid_argument("tps_kernel: dimension must be 1 or 2");
}

MatrixXd build_roughness(const LocationSet& locs) {
  const int n = locs.size();
  MatrixXd sys = bordered_system(locs);
  Eigen::PartialPivLU<MatrixXd> lu(sys);
  const MatrixXd inv = lu.inverse();
  if (!inv.allFinite())
    throw std::runtime_error("build_roughness: bordered system is singular");
  MatrixXd omega = sym(inv.topLeftCorner(n, n));
  // Clip the tiny negative eigenvalues the inversion leaves behind.
  Eigh eig = eigh_full(omega);
  VectorXd clipped = eig.values.cwiseMax(0.0);
  omega = eig.vectors * clipped.asDiagonal() * eig.vectors.transpose();
  return sym(omega);
}

TpsInterpolant tps_fit(const LocationSet& knots, const MatrixXd& values) {
  const int n = knots.size();
  const int d = knots.dim();
  const int m = d + 1;
  if (static_cast<int>(values.rows()) != n)
    throw std::invalid_argument("tps_fit: values rows must match knot count");
  if (!values.allFinite()) throw std::invalid_argument("tps_fit: non-finite values");
  const int cols = static_cast<int>(values.cols());
  MatrixXd rhs = MatrixXd::Zero(n + m, cols);
  rhs.topRows(n) = values;
  Eigen::PartialPivLU<MatrixXd> lu(bordered_system(knots));
  MatrixXd sol = lu.solve(rhs);
  if (!sol.allFinite()) throw std::runtime_error("tps_fit: interpolation system is singular");
  TpsInterpolant f;
  f.knots = knots;
  f.w = sol.topRows(n);
  f.poly = sol.bottomRows(m);
  return f;
}

MatrixXd tps_eval(const TpsInterpolant& f, const MatrixXd& queries) {
  const int d = f.knots.dim();
  if (static_cast<int>(queries.cols()) != d)
    throw std::invalid_argument("tps_eval: query dimension mismatch");
  const int q = static_cast<int>(queries.rows());
  const int n = f.knots.size();
  MatrixXd kq(q, n);
  for (int a = 0; a < q; ++a)
    for (int i = 0; i < n; ++i)
      kq(a, i) = tps_kernel((queries.row(a) - f.knots.coords.row(i)).norm(), d);
  MatrixXd out = kq * f.w;
  out.rowwise() += f.poly.row(0);
  out.noalias() += queries * f.poly.bottomRows(d);
  return out;
}

MatrixXd extend_basis(const MatrixXd& phi, const LocationSet& train, const MatrixXd& queries) {
  if (static_cast<int>(phi.rows()) != train.size())
    throw std::invalid_argument("extend_basis: phi rows must match training sites");
  const TpsInterpolant f = tps_fit(train, phi);
  MatrixXd out = tps_eval(f, queries);
  for (int a = 0; a < static_cast<int>(queries.rows()); ++a) {
    for (int i = 0; i < train.size(); ++i) {
      if ((queries.row(a) - train.coords.row(i)).norm() <= kDuplicateTol) {
        out.row(a) = phi.row(i);  // exact at coinciding sites
        break;
      }
    }
  }
  return out;
}

}  // namespace spadapt
