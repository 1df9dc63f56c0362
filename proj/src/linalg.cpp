#include "spadapt/linalg.hpp"

#include <lapacke.h>

#include <cmath>
#include <mutex>
#include <stdexcept>
#include <vector>

extern "C" void openblas_set_num_threads(int);

namespace spadapt {

namespace {

void pin_blas_threads() {
  // Threaded BLAS reductions are not bit-reproducible; everything downstream
  // assumes eigh_topk is deterministic for a fixed input.
  static std::once_flag flag;
  std::call_once(flag, [] { openblas_set_num_threads(1); });
}

}  // namespace

MatrixXd sym(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

Eigh eigh_full(const MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("eigh_full: matrix not square");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigh_full: eigendecomposition failed");
  const int n = static_cast<int>(a.rows());
  Eigh out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  (void)n;
  orient_columns(out.vectors);
  return out;
}

Eigh eigh_topk(const MatrixXd& a, int k) {
  if (a.rows() != a.cols()) throw std::invalid_argument("eigh_topk: matrix not square");
  const int n = static_cast<int>(a.rows());
  if (k > n) k = n;
  if (k <= 0 || n == 0) return {VectorXd(0), MatrixXd(n, 0)};
  if (!a.allFinite()) throw std::runtime_error("eigh_topk: non-finite input");
  pin_blas_threads();

  MatrixXd work = a;  // dsyevr destroys its input
  VectorXd w(n);
  MatrixXd z(n, k);
  std::vector<lapack_int> isuppz(2 * static_cast<std::size_t>(k));
  lapack_int m = 0;
  const lapack_int info = LAPACKE_dsyevr(
      LAPACK_COL_MAJOR, 'V', 'I', 'L', n, work.data(), n, 0.0, 0.0,
      n - k + 1, n, 0.0, &m, w.data(), z.data(), n, isuppz.data());
  if (info != 0) throw std::runtime_error("eigh_topk: dsyevr failed with info " + std::to_string(info));
  if (m != k) throw std::runtime_error("eigh_topk: dsyevr returned fewer eigenpairs than requested");

  Eigh out;
  out.values = w.head(k).reverse();
  out.vectors = z.rowwise().reverse();
  orient_columns(out.vectors);
  return out;
}

double spectral_norm(const MatrixXd& a, int iters) {
  if (a.rows() != a.cols()) throw std::invalid_argument("spectral_norm: matrix not square");
  const int n = static_cast<int>(a.rows());
  if (n == 0) return 0.0;
  VectorXd v = VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double est = 0.0;
  for (int i = 0; i < iters; ++i) {
    VectorXd av = a * v;
    const double norm = av.norm();
    if (norm == 0.0) return 0.0;
    est = norm;
    v = av / norm;
  }
  return est;
}

void orient_columns(MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double mag = std::abs(m(i, j));
      if (mag > best) {  // strict: ties keep the lowest row index
        best = mag;
        arg = i;
      }
    }
    if (best > 0.0 && m(arg, j) < 0.0) m.col(j) = -m.col(j);
  }
}

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

}  // namespace spadapt
