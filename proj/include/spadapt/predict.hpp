#pragma once

#include <Eigen/Dense>

namespace spadapt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Standard normal quantile, rational approximation (Acklam coefficients),
// relative accuracy ~1.2e-9 over (0, 1).
double normal_quantile(double p);

// Which inverse to take in conditional_score_cov. Auto picks Direct when
// |O| >= retained rank and the Woodbury identity otherwise.
enum class CondPath { Auto, Direct, Woodbury };

// Conditional score covariance given observed rows phi_o (|O| x L) of the
// retained loadings and retained eigenvalues lambda (> 0):
//   Direct:   (diag(lambda)^-1 + sigma2^-1 phi_o^T phi_o)^-1
//   Woodbury: L - L phi_o^T (sigma2 I + phi_o L phi_o^T)^-1 phi_o L,
//             L = diag(lambda).
// Empty O returns diag(lambda); zero retained rank returns a 0x0 matrix.
MatrixXd conditional_score_cov(const VectorXd& lambda, double sigma2, const MatrixXd& phi_o,
                               CondPath path = CondPath::Auto);

// alpha_hat = sigma2^-1 * lambda_cond * phi_o^T * r_o; zero vector when O is
// empty.
VectorXd conditional_scores(const MatrixXd& lambda_cond, double sigma2, const MatrixXd& phi_o,
                            const VectorXd& r_o);

// trend + phi_star . alpha_hat, trend = first stage + residual trend at the
// query cell.
double krige_mean(double trend, const VectorXd& phi_star, const VectorXd& alpha_hat);

// v_hat = sigma2 + phi_star^T lambda_cond phi_star. Targets a new noisy
// observation at the query, hence the sigma2 floor.
double krige_variance(const VectorXd& phi_star, const MatrixXd& lambda_cond, double sigma2);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// eta +/- z_{alpha/2} sqrt(v).
Interval gaussian_interval(double eta, double v, double alpha);

// Sigmoid pushforward of the Gaussian interval; endpoints stay ordered
// because the sigmoid is monotone.
Interval logistic_interval(double eta, double v, double alpha);

}  // namespace spadapt
