#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <random>

#include "spadapt/adapter.hpp"
#include "spadapt/geometry.hpp"
#include "spadapt/linalg.hpp"

using namespace spadapt;

namespace {

std::mt19937_64 g_rng(2024);

MatrixXd randn(int r, int c) {
  std::normal_distribution<double> g;
  MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = g(g_rng);
  return m;
}

MatrixXd random_basis(int n, int k) {
  MatrixXd q = Eigen::HouseholderQR<MatrixXd>(randn(n, k)).householderQ() *
               MatrixXd::Identity(n, k);
  orient_columns(q);
  return q;
}

// Objective behind the closed-form consensus update.
double z_objective(const MatrixXd& z, const MatrixXd& res, const MatrixXd& phi, double rho) {
  const MatrixXd perp = z - (z * phi) * phi.transpose();
  return perp.squaredNorm() + 0.5 * rho * (z - res).squaredNorm();
}

LocationSet grid_locations(int n, double lo = -5.0, double hi = 5.0) {
  MatrixXd c(n, 1);
  for (int i = 0; i < n; ++i) c(i, 0) = lo + (hi - lo) * i / (n - 1.0);
  return make_locations(c);
}

}  // namespace

TEST_CASE("is_valid_basis accepts oriented orthonormal frames only") {
  const MatrixXd q = random_basis(6, 2);
  CHECK(is_valid_basis(q));
  CHECK_FALSE(is_valid_basis(2.0 * q));
  MatrixXd flipped = q;
  flipped.col(0) *= -1.0;  // breaks the dominant-sign convention
  CHECK_FALSE(is_valid_basis(flipped));
}

TEST_CASE("z_update_gaussian keeps in-basis residuals verbatim") {
  const MatrixXd phi = random_basis(6, 2);
  const MatrixXd res = randn(4, 2) * phi.transpose();  // lies in span(phi)
  const MatrixXd z = z_update_gaussian(res, phi, 1.0);
  CHECK((z - res).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("z_update_gaussian at K = 0 is pure shrinkage") {
  const MatrixXd res = randn(3, 5);
  const MatrixXd z = z_update_gaussian(res, MatrixXd(5, 0), 2.0);
  CHECK((z - 0.5 * res).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("z_update_gaussian matches a gradient-descent convex oracle") {
  for (int trial = 0; trial < 10; ++trial) {
    const MatrixXd phi = random_basis(6, 2);
    const MatrixXd res = randn(4, 6);
    const double rho = 1.0;
    const MatrixXd closed = z_update_gaussian(res, phi, rho);

    // f is (rho)-strongly convex and (2 + rho)-smooth: plain descent nails it.
    MatrixXd z = MatrixXd::Zero(4, 6);
    const double step = 1.0 / (2.0 + rho);
    for (int it = 0; it < 500; ++it) {
      const MatrixXd perp = z - (z * phi) * phi.transpose();
      z -= step * (2.0 * perp + rho * (z - res));
    }
    CHECK((closed - z).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(z_objective(closed, res, phi, rho) <= z_objective(z, res, phi, rho) + 1e-10);
  }
}

TEST_CASE("off-basis shrinkage factor is exactly rho/(rho+2)") {
  for (double rho : {0.5, 1.0, 2.0, 5.0}) {
    const MatrixXd phi = random_basis(8, 3);
    const MatrixXd res = randn(5, 8);
    const MatrixXd z = z_update_gaussian(res, phi, rho);
    const MatrixXd p = phi * phi.transpose();
    const double num = (z - z * p).norm();
    const double den = (res - res * p).norm();
    CHECK(num / den == doctest::Approx(rho / (rho + 2.0)).epsilon(1e-10));
  }
}

TEST_CASE("bernoulli gradient matches central finite differences") {
  const MatrixXd phi = random_basis(3, 1);
  MatrixXd y(2, 3);
  y << 1, 0, 1, 0, 1, 0;
  const MatrixXd z0 = randn(2, 3);
  const MatrixXd res = randn(2, 3);
  const double rho = 1.5;
  const MatrixXd grad = bernoulli_z_gradient(z0, y, phi, res, rho);
  const double h = 1e-6;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      MatrixXd zp = z0, zm = z0;
      zp(i, j) += h;
      zm(i, j) -= h;
      const double fd = (bernoulli_z_objective(zp, y, phi, res, rho) -
                         bernoulli_z_objective(zm, y, phi, res, rho)) /
                        (2.0 * h);
      CHECK(grad(i, j) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("bernoulli inner steps decrease the composite objective") {
  const MatrixXd phi = random_basis(4, 1);
  MatrixXd y(2, 4);
  y << 1, 0, 0, 1, 0, 1, 1, 0;
  const MatrixXd res = randn(2, 4);
  MatrixXd z = randn(2, 4);
  const double before = bernoulli_z_objective(z, y, phi, res, 1.0);

  MatrixXd frozen = z;
  z_update_bernoulli(frozen, y, phi, res, 1.0, 0.0, 2);  // zero step: no-op
  CHECK((frozen - z).cwiseAbs().maxCoeff() == 0.0);

  z_update_bernoulli(z, y, phi, res, 1.0, 0.5, 2);
  CHECK(bernoulli_z_objective(z, y, phi, res, 1.0) < before);
}

TEST_CASE("surrogate targets follow their closed forms") {
  MatrixXd z = randn(5, 3);
  z.rowwise() -= z.colwise().mean();  // zero column means
  MatrixXd y_half = MatrixXd::Constant(5, 3, 0.5);
  CHECK((surrogate_target(BceVariant::A, z, y_half) - z.transpose() * z).norm() < 1e-12);
  CHECK((surrogate_target(BceVariant::B, z, y_half) - 0.125 * z.transpose() * z).norm() < 1e-12);

  // Variant C at Z = 0: working response is +/- 0.5 / (0.25 + eps_w).
  MatrixXd z0 = MatrixXd::Zero(2, 2);
  MatrixXd y01(2, 2);
  y01 << 1, 1, 0, 0;
  const double c = 0.5 / (0.25 + 1e-4);
  CHECK(c == doctest::Approx(1.9992).epsilon(1e-4));
  const MatrixXd target = surrogate_target(BceVariant::C, z0, y01);
  CHECK((target - MatrixXd::Constant(2, 2, 2.0 * c * c)).cwiseAbs().maxCoeff() < 1e-10);

  MatrixXd y_bad = y01;
  y_bad(0, 0) = 1.5;
  CHECK_THROWS(surrogate_target(BceVariant::B, z0, y_bad));
  CHECK_THROWS(surrogate_target(BceVariant::C, z0, y_bad));
}

TEST_CASE("centered_gram removes column means") {
  MatrixXd z(2, 2);
  z << 1.0, 3.0, 3.0, 7.0;
  // Centered columns: (-1, 1) and (-2, 2).
  MatrixXd expect(2, 2);
  expect << 2.0, 4.0, 4.0, 8.0;
  CHECK((centered_gram(z) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("basis_step with no penalties reads off the eigenstructure") {
  MatrixXd c = MatrixXd::Zero(3, 3);
  c.diagonal() << 3.0, 2.0, 1.0;
  const MatrixXd phi = basis_step(c, MatrixXd::Zero(3, 3), 0.0, 0.0, 2, Irl1Config{});
  CHECK(phi(0, 0) == doctest::Approx(1.0));
  CHECK(phi(1, 1) == doctest::Approx(1.0));
  CHECK(std::abs(phi(1, 0)) + std::abs(phi(2, 0)) < 1e-12);
  CHECK(is_valid_basis(phi));
}

TEST_CASE("basis_step at lambda2 = 0 is the penalized eigendecomposition") {
  const LocationSet locs = grid_locations(10);
  const MatrixXd omega = build_roughness(locs);
  const MatrixXd c = centered_gram(randn(40, 10));
  for (double l1 : {0.0, 0.5, 10.0}) {
    const MatrixXd direct = eigh_topk(sym(c - l1 * omega), 2).vectors;
    MatrixXd oriented = direct;
    orient_columns(oriented);
    const MatrixXd phi = basis_step(c, omega, l1, 0.0, 2, Irl1Config{});
    CHECK((phi - oriented).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("basis_step survives a random-restart Stiefel oracle") {
  // Smoothed sparse direction on a 1-d grid: the eigen-seeded IRL1 loop must
  // score at least as well as 500 random unit probes on the penalized
  // objective tr(phi' (C - l1 Omega) phi) - l2 ||phi||_1.
  const int n = 8;
  const LocationSet locs = grid_locations(n, 0.0, 1.0);
  const MatrixXd omega = build_roughness(locs);
  MatrixXd c = centered_gram(randn(30, n));
  c /= spectral_norm(c);  // unit scale so the 1e-4 slack is meaningful
  const double l1 = 0.5 / spectral_norm(omega);
  const double l2 = 0.02;
  const MatrixXd a = sym(c - l1 * omega);

  const MatrixXd phi = basis_step(c, omega, l1, l2, 1, Irl1Config{});
  CHECK(is_valid_basis(phi));

  const auto objective = [&](const MatrixXd& v) {
    return (v.transpose() * a * v)(0, 0) - l2 * v.cwiseAbs().sum();
  };
  double best_random = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < 500; ++t) best_random = std::max(best_random, objective(random_basis(n, 1)));
  CHECK(objective(phi) >= best_random - 1e-4);
}

TEST_CASE("basis_step recovers a planted sparse support as lambda2 sweeps") {
  const int n = 12;
  VectorXd v = VectorXd::Zero(n);
  v(2) = 0.8;
  v(5) = -0.5;
  v(9) = 0.33166247903554;  // unit norm with the others
  const MatrixXd c = 50.0 * (v * v.transpose()) + 0.05 * centered_gram(randn(30, n));
  const MatrixXd omega = MatrixXd::Zero(n, n);

  bool exact_support = false;
  for (double l2 : {0.01, 0.1, 0.5, 1.0, 3.0, 10.0}) {
    const MatrixXd phi = basis_step(c, omega, 0.0, l2, 1, Irl1Config{});
    REQUIRE(is_valid_basis(phi));
    bool match = true;
    for (int i = 0; i < n; ++i) {
      const bool planted = v(i) != 0.0;
      const bool found = std::abs(phi(i, 0)) > 1e-6;
      match = match && (planted == found);
    }
    exact_support = exact_support || match;
  }
  CHECK(exact_support);
}

TEST_CASE("dual_update accumulates the primal gap") {
  const MatrixXd r = randn(3, 4);
  MatrixXd u = MatrixXd::Zero(3, 4);
  dual_update(u, r, r);
  CHECK(u.cwiseAbs().maxCoeff() == 0.0);
  const MatrixXd m1 = randn(3, 4), m2 = randn(3, 4);
  dual_update(u, r + m1, r);
  CHECK((u - m1).cwiseAbs().maxCoeff() < 1e-14);
  dual_update(u, r + m2, r);
  CHECK((u - m1 - m2).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("fit_stage2 on a zero residual field learns nothing") {
  const int t = 40, n = 10;
  const MatrixXd f = randn(t, n);
  const MatrixXd omega = build_roughness(grid_locations(n));
  Stage2Options opts;
  opts.k = 1;
  opts.rho = 1.0;
  opts.batch = 8;
  opts.seed = 3;
  const AdapterModel m = fit_stage2(f, f, {}, omega, TrendModel{}, opts);
  CHECK(m.scores.norm() <= 1e-6 * f.norm());
  const MatrixXd rec = reconstruct(m, f, f, {}, Link::Identity);
  CHECK((rec - f).norm() <= 1e-6 * f.norm());
}

TEST_CASE("fit_stage2 is deterministic for a fixed seed and differs across seeds") {
  const int t = 60, n = 12;
  const MatrixXd y = randn(t, n);
  const MatrixXd f = MatrixXd::Zero(t, n);
  const MatrixXd omega = build_roughness(grid_locations(n));
  Stage2Options opts;
  opts.k = 2;
  opts.rho = 1.0;
  opts.batch = 16;
  opts.lambda1 = 1.0;
  opts.seed = 11;
  const AdapterModel a = fit_stage2(y, f, {}, omega, TrendModel{}, opts);
  const AdapterModel b = fit_stage2(y, f, {}, omega, TrendModel{}, opts);
  CHECK((a.phi - b.phi).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.scores - b.scores).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.trace.iterations == b.trace.iterations);
  opts.seed = 12;
  const AdapterModel c = fit_stage2(y, f, {}, omega, TrendModel{}, opts);
  CHECK((a.phi - c.phi).cwiseAbs().maxCoeff() > 0.0);  // different batch draws
}

TEST_CASE("full-batch identity fit reaches the regularized-PCA solution") {
  // Planted rank-1 field; full-batch consensus drives Z to R, so the final
  // basis matches the penalized eigenvector of the residual Gram.
  const int t = 60, n = 16;
  std::normal_distribution<double> g;
  VectorXd s(n);
  for (int i = 0; i < n; ++i) s(i) = -3.0 + 6.0 * i / (n - 1.0);
  VectorXd phi_true = (-s.array().square()).exp();
  phi_true /= phi_true.norm();
  MatrixXd y(t, n);
  for (int j = 0; j < t; ++j) {
    const double alpha = 3.0 * g(g_rng);
    for (int i = 0; i < n; ++i) y(j, i) = alpha * phi_true(i) + 0.5 * g(g_rng);
  }
  const MatrixXd omega = build_roughness(grid_locations(n, -3.0, 3.0));
  const double l1 = 2.0;

  Stage2Options opts;
  opts.k = 1;
  opts.lambda1 = l1;
  opts.rho = 1.0;
  opts.batch = t;  // full batch
  opts.seed = 5;
  opts.schedule.eps_rel = 1e-9;
  opts.schedule.max_iters = 400;
  const AdapterModel m = fit_stage2(y, MatrixXd::Zero(t, n), {}, omega, TrendModel{}, opts);

  const MatrixXd direct = eigh_topk(sym(centered_gram(y) - l1 * omega), 1).vectors;
  const MatrixXd p_fit = m.phi * m.phi.transpose();
  const MatrixXd p_direct = direct * direct.transpose();
  CHECK((p_fit - p_direct).norm() <= 1e-4);
}

TEST_CASE("reconstruct: full basis copies, empty basis returns the trend") {
  const int t = 20, n = 6;
  const MatrixXd y = randn(t, n);
  const MatrixXd f = randn(t, n);
  AdapterModel full;
  full.phi = MatrixXd::Identity(n, n);
  full.opts.k = n;
  CHECK((reconstruct(full, y, f, {}, Link::Identity) - y).cwiseAbs().maxCoeff() < 1e-12);

  AdapterModel none;
  none.phi = MatrixXd(n, 0);
  none.opts.k = 0;
  CHECK((reconstruct(none, y, f, {}, Link::Identity) - f).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sigmoid reconstruction lands in (0, 1) and matches the hand formula") {
  const int n = 4;
  AdapterModel none;
  none.phi = MatrixXd(n, 0);
  none.opts.k = 0;
  MatrixXd y(1, n), f(1, n);
  y << 1, 0, 1, 0;
  f << 0.5, -0.25, 2.0, 0.0;
  const MatrixXd p = reconstruct(none, y, f, {}, Link::Sigmoid);
  for (int i = 0; i < n; ++i) {
    CHECK(p(0, i) > 0.0);
    CHECK(p(0, i) < 1.0);
    CHECK(p(0, i) == doctest::Approx(1.0 / (1.0 + std::exp(-f(0, i)))).epsilon(1e-12));
  }
}

TEST_CASE("save_model / load_model round-trips the fitted state") {
  const int t = 30, n = 8;
  const MatrixXd y = randn(t, n);
  const MatrixXd omega = build_roughness(grid_locations(n));
  Stage2Options opts;
  opts.k = 1;
  opts.rho = 1.0;
  opts.batch = 10;
  opts.lambda1 = 0.5;
  opts.seed = 9;
  const AdapterModel m = fit_stage2(y, MatrixXd::Zero(t, n), {}, omega, TrendModel{}, opts);

  const auto dir = std::filesystem::temp_directory_path() / "spadapt_model_test";
  std::filesystem::create_directories(dir);
  save_model(dir.string(), m);
  const AdapterModel back = load_model(dir.string());
  CHECK((back.phi - m.phi).cwiseAbs().maxCoeff() == 0.0);  // csv format is exact
  CHECK((back.scores - m.scores).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.trace.iterations == m.trace.iterations);
  CHECK(back.opts.lambda1 == m.opts.lambda1);
  CHECK(back.opts.k == m.opts.k);
}
