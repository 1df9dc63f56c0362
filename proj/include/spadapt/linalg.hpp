#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace spadapt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// (A + A^T) / 2
MatrixXd sym(const MatrixXd& a);

// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
struct Eigh {
  VectorXd values;
  MatrixXd vectors;
};

// Dense symmetric eigendecomposition (Eigen).
Eigh eigh_full(const MatrixXd& a);

// Top-k eigenpairs of a symmetric matrix via LAPACK dsyevr. Runs
// single-threaded so repeated calls are bit-reproducible. k is clamped to
// [0, n]; k == 0 yields empty results.
Eigh eigh_topk(const MatrixXd& a, int k);

// Power-iteration estimate of the spectral norm of a symmetric PSD matrix.
double spectral_norm(const MatrixXd& a, int iters = 50);

// Fix column signs in place: the entry of largest magnitude in each column is
// made non-negative; among ties the lowest row index decides.
void orient_columns(MatrixXd& m);

// FNV-1a, used for config hashes in results records.
std::uint64_t fnv1a(const void* data, std::size_t len,
                    std::uint64_t h = 1469598103934665603ull);
std::uint64_t fnv1a(const std::string& s);

}  // namespace spadapt
