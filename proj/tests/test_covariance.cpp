#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "spadapt/covariance.hpp"
#include "spadapt/linalg.hpp"

using namespace spadapt;

namespace {

// Haar-ish orthonormal K columns via QR of a Gaussian matrix.
MatrixXd random_orthonormal(int n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  MatrixXd a(n, k);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < n; ++i) a(i, j) = g(rng);
  return Eigen::HouseholderQR<MatrixXd>(a).householderQ() * MatrixXd::Identity(n, k);
}

// The rank rule coded the other way around: scan L downward and return the
// first L whose spiked eigenvalue clears its own noise estimate.
int rank_rule_reference(const VectorXd& d, double tau, double tr_s, int n) {
  for (int l = static_cast<int>(d.size()); l >= 1; --l) {
    if (d(l - 1) - tau > sigma_for_rank(l, d, tau, tr_s, n)) return l;
  }
  return 0;
}

}  // namespace

TEST_CASE("residual gram is the uncentered second moment") {
  MatrixXd r(2, 3);
  r << 1.0, 0.0, 2.0, -1.0, 3.0, 0.0;
  const MatrixXd s = residual_gram(r);
  CHECK(s(0, 0) == doctest::Approx(1.0).epsilon(1e-15));   // (1 + 1) / 2
  CHECK(s(1, 1) == doctest::Approx(4.5).epsilon(1e-15));   // (0 + 9) / 2
  CHECK(s(0, 2) == doctest::Approx(1.0).epsilon(1e-15));   // (1*2 + -1*0) / 2
  CHECK((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cumulative-variance rank rule") {
  MatrixXd s = MatrixXd::Zero(4, 4);
  s.diagonal() << 6.0, 3.0, 1.0, 0.0;  // trace 10
  CHECK(select_basis_rank(s, 0.55).k == 1);   // 0.6 captures
  CHECK(select_basis_rank(s, 0.60).k == 1);
  CHECK(select_basis_rank(s, 0.85).k == 2);   // 0.9 captures
  CHECK(select_basis_rank(s, 0.95).k == 3);
  CHECK(select_basis_rank(MatrixXd::Zero(3, 3), 0.9).k == 0);
  const RankSelection sel = select_basis_rank(s, 0.85);
  CHECK(sel.cumvar(0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(sel.cumvar(1) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("noise estimate closed form") {
  VectorXd d(2);
  d << 10.0, 4.0;
  // sigma^2_1 = (tr - (10 - tau)) / (n - 1) with tr = 20, n = 6, tau = 1.
  CHECK(sigma_for_rank(1, d, 1.0, 20.0, 6) == doctest::Approx((20.0 - 9.0) / 5.0).epsilon(1e-15));
  CHECK(sigma_for_rank(2, d, 1.0, 20.0, 6) ==
        doctest::Approx((20.0 - 9.0 - 3.0) / 4.0).epsilon(1e-15));
}

TEST_CASE("estimator is exact on the population covariance") {
  const int n = 24;
  const MatrixXd phi = random_orthonormal(n, 2, 3);
  VectorXd spikes(2);
  spikes << 9.0, 4.0;
  const double sigma2 = 0.5;
  const MatrixXd s = phi * spikes.asDiagonal() * phi.transpose() +
                     sigma2 * MatrixXd::Identity(n, n);
  const CovarianceEstimate est = estimate_covariance(phi, s, 0.0);
  CHECK(est.l_hat == 2);
  CHECK(est.sigma2 == doctest::Approx(sigma2).epsilon(1e-10));
  CHECK(est.lambda(0) == doctest::Approx(9.0).epsilon(1e-10));
  CHECK(est.lambda(1) == doctest::Approx(4.0).epsilon(1e-10));
  const MatrixXd back = materialize_sigma(est, phi);
  CHECK((back - s).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("tau shifts the recovered spikes, not the noise") {
  const int n = 16;
  const MatrixXd phi = random_orthonormal(n, 1, 5);
  const MatrixXd s = 8.0 * phi * phi.transpose() + MatrixXd::Identity(n, n);
  const CovarianceEstimate est = estimate_covariance(phi, s, 2.0);
  CHECK(est.l_hat == 1);
  // d_1 = 9, sigma^2_1 = (tr - (9 - 2)) / (n - 1) = (24 - 7) / 15.
  const double sig = (8.0 + n - 7.0) / (n - 1.0);
  CHECK(est.sigma2 == doctest::Approx(sig).epsilon(1e-10));
  CHECK(est.lambda(0) == doctest::Approx(9.0 - sig - 2.0).epsilon(1e-10));
}

TEST_CASE("isotropic spectra take the empty-set branch") {
  const int n = 12;
  const MatrixXd phi = random_orthonormal(n, 3, 7);
  const MatrixXd s = 2.5 * MatrixXd::Identity(n, n);
  const CovarianceEstimate est = estimate_covariance(phi, s, 0.0);
  CHECK(est.l_hat == 0);
  CHECK(est.sigma2 == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(est.lambda.cwiseAbs().maxCoeff() == 0.0);
  const MatrixXd back = materialize_sigma(est, phi);
  CHECK((back - s).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("rank rule agrees with the scan-down reference on random spectra") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 300; ++rep) {
    const int n = 8 + static_cast<int>(u(rng) * 24);
    const int k = 1 + static_cast<int>(u(rng) * 5);
    const double tau = u(rng) < 0.3 ? 0.0 : u(rng);
    // Random spiked spectrum; occasionally flat to hit the empty branch.
    VectorXd d(k);
    const double base = 0.2 + u(rng);
    for (int i = 0; i < k; ++i) d(i) = base + (u(rng) < 0.2 ? 0.0 : 4.0 * u(rng));
    std::sort(d.data(), d.data() + k, std::greater<double>());
    const double tr_s = d.sum() + base * (n - k);

    const MatrixXd phi = random_orthonormal(n, k, 100 + rep);
    MatrixXd s = phi * d.asDiagonal() * phi.transpose();
    s += base * (MatrixXd::Identity(n, n) - phi * phi.transpose());
    const CovarianceEstimate est = estimate_covariance(phi, s, tau);
    CHECK(est.l_hat == rank_rule_reference(est.d, tau, s.trace(), n));
  }
}

TEST_CASE("spikes past the retained rank are forced to zero") {
  const int n = 20;
  const MatrixXd phi = random_orthonormal(n, 3, 9);
  VectorXd spikes(3);
  spikes << 50.0, 0.02, 0.01;  // two spikes drown in the noise
  MatrixXd s = phi * spikes.asDiagonal() * phi.transpose() + MatrixXd::Identity(n, n);
  const CovarianceEstimate est = estimate_covariance(phi, s, 0.0);
  CHECK(est.l_hat == 1);
  for (int i = est.l_hat; i < 3; ++i) CHECK(est.lambda(i) == 0.0);
  CHECK(retained_loadings(est, phi).cols() == 1);
}

TEST_CASE("Monte Carlo recovery of a planted two-spike model") {
  const int n = 12, k = 2, t = 40000;
  const MatrixXd phi = random_orthonormal(n, k, 23);
  VectorXd spikes(2);
  spikes << 6.0, 2.0;
  const double sigma2 = 1.0;
  std::mt19937_64 rng(29);
  std::normal_distribution<double> g;
  MatrixXd r(t, n);
  for (int j = 0; j < t; ++j) {
    VectorXd row = VectorXd::Zero(n);
    for (int c = 0; c < k; ++c) row += std::sqrt(spikes(c)) * g(rng) * phi.col(c);
    for (int i = 0; i < n; ++i) row(i) += std::sqrt(sigma2) * g(rng);
    r.row(j) = row;
  }
  const CovarianceEstimate est = estimate_covariance(phi, residual_gram(r), 0.0);
  CHECK(est.l_hat == 2);
  CHECK(est.sigma2 == doctest::Approx(sigma2).epsilon(0.03));
  CHECK(est.lambda(0) == doctest::Approx(spikes(0)).epsilon(0.05));
  CHECK(est.lambda(1) == doctest::Approx(spikes(1)).epsilon(0.05));
}

TEST_CASE("rotation diagonalizes the projected second moment") {
  const int n = 18;
  const MatrixXd phi = random_orthonormal(n, 3, 31);
  std::mt19937_64 rng(37);
  std::normal_distribution<double> g;
  MatrixXd b(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) b(i, j) = g(rng);
  const MatrixXd s = b * b.transpose() / n;
  const CovarianceEstimate est = estimate_covariance(phi, s, 0.0);
  const MatrixXd proj = phi.transpose() * s * phi;
  const MatrixXd diag = est.rotation.transpose() * proj * est.rotation;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(std::abs(diag(i, j)) < 1e-10);
  CHECK((est.rotation.transpose() * est.rotation - MatrixXd::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}
