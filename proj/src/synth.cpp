#include "spadapt/synth.hpp"

#include <cmath>
#include <random>

namespace spadapt {

namespace {

constexpr double kPi = 3.14159265358979323846;

double normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * kPi));
}

}  // namespace

LocationSet grid_locations(const DgpConfig& cfg) {
  const int n = cfg.n_locations;
  MatrixXd coords(n, 1);
  for (int i = 0; i < n; ++i)
    coords(i, 0) = cfg.s_min + (cfg.s_max - cfg.s_min) * i / (n - 1.0);
  return make_locations(std::move(coords));
}

VectorXd true_basis(const DgpConfig& cfg) {
  const LocationSet locs = grid_locations(cfg);
  VectorXd phi(cfg.n_locations);
  for (int i = 0; i < cfg.n_locations; ++i) {
    const double s = locs.coords(i, 0);
    phi(i) = std::exp(-s * s);
  }
  return phi / phi.norm();
}

MatrixXd true_covariance(const DgpConfig& cfg) {
  const VectorXd phi = true_basis(cfg);
  MatrixXd sigma = (cfg.alpha_sd * cfg.alpha_sd) * (phi * phi.transpose());
  sigma.diagonal().array() += cfg.noise_sd * cfg.noise_sd;
  return sigma;
}

SyntheticData generate(const DgpConfig& cfg, std::uint64_t seed) {
  const int t_len = cfg.n_times;
  const int n = cfg.n_locations;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto draw = [&] { return nd(rng); };

  SyntheticData out;
  out.locations = grid_locations(cfg);
  out.phi_true = true_basis(cfg);
  out.beta = Eigen::Map<const VectorXd>(cfg.beta.data(), static_cast<Eigen::Index>(cfg.beta.size()));
  out.intercept = cfg.intercept;

  // Shared covariate series over t in [0, 2*pi].
  VectorXd temp(t_len), wind(t_len), hum(t_len), pres(t_len), poll(t_len);
  for (int j = 0; j < t_len; ++j) {
    const double t = 2.0 * kPi * j / (t_len - 1.0);
    temp(j) = 15.0 + 10.0 * std::sin(t) + cfg.covariate_noise_sd * draw();
    wind(j) = std::abs(3.0 + cfg.covariate_noise_sd * draw());
    hum(j) = 70.0 - 0.5 * temp(j) + cfg.covariate_noise_sd * draw();
    pres(j) = 1000.0 + 20.0 * normal_pdf(t, kPi, 1.0);
    poll(j) = 50.0 + 2.0 * temp(j) - 3.0 * wind(j) + cfg.covariate_noise_sd * draw();
  }

  // Replicate per location with i.i.d. jitter, channel-major draw order.
  out.x.assign(5, MatrixXd(t_len, n));
  const VectorXd* base[5] = {&temp, &wind, &hum, &pres, &poll};
  for (int c = 0; c < 5; ++c)
    for (int j = 0; j < t_len; ++j)
      for (int i = 0; i < n; ++i)
        out.x[static_cast<std::size_t>(c)](j, i) = (*base[c])(j) + cfg.location_jitter_sd * draw();

  // Global drift, stationary AR(1) with unit variance; disabled by default.
  out.gamma_true = VectorXd::Zero(t_len);
  if (cfg.global_drift) {
    out.gamma_true(0) = draw();
    const double innov = std::sqrt(1.0 - cfg.gamma_rho * cfg.gamma_rho);
    for (int j = 1; j < t_len; ++j)
      out.gamma_true(j) = cfg.gamma_rho * out.gamma_true(j - 1) + innov * draw();
  }

  // Basis score, stationary AR(1) with sd alpha_sd.
  out.alpha_true = VectorXd(t_len);
  out.alpha_true(0) = cfg.alpha_sd * draw();
  const double alpha_innov = cfg.alpha_sd * std::sqrt(1.0 - cfg.alpha_rho * cfg.alpha_rho);
  for (int j = 1; j < t_len; ++j)
    out.alpha_true(j) = cfg.alpha_rho * out.alpha_true(j - 1) + alpha_innov * draw();

  out.y = MatrixXd(t_len, n);
  for (int j = 0; j < t_len; ++j) {
    for (int i = 0; i < n; ++i) {
      double mean = cfg.intercept + out.gamma_true(j) + out.alpha_true(j) * out.phi_true(i);
      for (int c = 0; c < 5; ++c)
        mean += out.beta(c) * out.x[static_cast<std::size_t>(c)](j, i);
      out.y(j, i) = mean + cfg.noise_sd * draw();
    }
  }
  return out;
}

}  // namespace spadapt
