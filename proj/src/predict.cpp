#include "spadapt/predict.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>

#include "spadapt/linalg.hpp"

namespace spadapt {

double normal_quantile(double p) {
  if (!(p > 0.0) || !(p < 1.0)) throw std::invalid_argument("normal_quantile: p must lie in (0, 1)");
  static constexpr double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                  -2.759285104469687e+02, 1.383577518672690e+02,
                                  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                  -1.556989798598866e+02, 6.680131188771972e+01,
                                  -1.328068155288572e+01};
  static constexpr double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                  -2.400758277161838e+00, -2.549732539343734e+00,
                                  4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                  2.445134137142996e+00, 3.754408661907416e+00};
  static constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

MatrixXd conditional_score_cov(const VectorXd& lambda, double sigma2, const MatrixXd& phi_o,
                               CondPath path) {
  const int l = static_cast<int>(lambda.size());
  if (l == 0) return MatrixXd(0, 0);
  if ((lambda.array() <= 0.0).any())
    throw std::invalid_argument("conditional_score_cov: retained eigenvalues must be > 0");
  const Eigen::Index m = phi_o.rows();
  if (m == 0) return MatrixXd(lambda.asDiagonal());
  if (phi_o.cols() != l)
    throw std::invalid_argument("conditional_score_cov: loading width != retained rank");
  if (sigma2 <= 0.0)
    throw std::invalid_argument("conditional_score_cov: sigma2 must be > 0 with observations");

  const bool direct = path == CondPath::Direct || (path == CondPath::Auto && m >= l);
  if (direct) {
    MatrixXd prec = MatrixXd(lambda.cwiseInverse().asDiagonal());
    prec.noalias() += (phi_o.transpose() * phi_o) / sigma2;
    return sym(Eigen::LLT<MatrixXd>(prec).solve(MatrixXd::Identity(l, l)));
  }
  // Woodbury: the |O| x |O| system is the cheaper factorization when |O| < L.
  const MatrixXd phi_l = phi_o * lambda.asDiagonal();  // phi_o diag(lambda)
  MatrixXd small = phi_l * phi_o.transpose();
  small.diagonal().array() += sigma2;
  MatrixXd out = MatrixXd(lambda.asDiagonal());
  out.noalias() -= phi_l.transpose() * Eigen::LLT<MatrixXd>(sym(small)).solve(phi_l);
  return sym(out);
}

VectorXd conditional_scores(const MatrixXd& lambda_cond, double sigma2, const MatrixXd& phi_o,
                            const VectorXd& r_o) {
  const Eigen::Index l = lambda_cond.rows();
  if (l == 0) return VectorXd(0);
  if (phi_o.rows() == 0) return VectorXd::Zero(l);
  if (phi_o.cols() != l || r_o.size() != phi_o.rows())
    throw std::invalid_argument("conditional_scores: shape mismatch");
  if (sigma2 <= 0.0) throw std::invalid_argument("conditional_scores: sigma2 must be > 0");
  return (lambda_cond * (phi_o.transpose() * r_o)) / sigma2;
}

double krige_mean(double trend, const VectorXd& phi_star, const VectorXd& alpha_hat) {
  if (phi_star.size() != alpha_hat.size())
    throw std::invalid_argument("krige_mean: basis row and score length differ");
  return trend + phi_star.dot(alpha_hat);
}

double krige_variance(const VectorXd& phi_star, const MatrixXd& lambda_cond, double sigma2) {
  if (phi_star.size() != lambda_cond.rows())
    throw std::invalid_argument("krige_variance: basis row and covariance size differ");
  if (phi_star.size() == 0) return sigma2;
  return sigma2 + phi_star.dot(lambda_cond * phi_star);
}

Interval gaussian_interval(double eta, double v, double alpha) {
  if (v < 0) throw std::invalid_argument("gaussian_interval: negative variance");
  if (!(alpha > 0.0) || !(alpha < 1.0))
    throw std::invalid_argument("gaussian_interval: alpha must lie in (0, 1)");
  const double z = normal_quantile(1.0 - alpha / 2.0);
  const double half = z * std::sqrt(v);
  return {eta - half, eta + half};
}

Interval logistic_interval(double eta, double v, double alpha) {
  const Interval g = gaussian_interval(eta, v, alpha);
  const auto sig = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return {sig(g.lo), sig(g.hi)};
}

}  // namespace spadapt
