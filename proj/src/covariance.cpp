#include "spadapt/covariance.hpp"

#include <cmath>
#include <stdexcept>

#include "spadapt/linalg.hpp"

namespace spadapt {

MatrixXd residual_gram(const MatrixXd& r) {
  if (r.rows() == 0) throw std::invalid_argument("residual_gram: empty residual block");
  return (r.transpose() * r) / static_cast<double>(r.rows());
}

RankSelection select_basis_rank(const MatrixXd& s, double tau_var) {
  if (s.rows() != s.cols()) throw std::invalid_argument("select_basis_rank: S must be square");
  if (!(tau_var > 0.0) || tau_var > 1.0)
    throw std::invalid_argument("select_basis_rank: tau_var must lie in (0, 1]");
  RankSelection sel;
  if (s.rows() == 0) return sel;
  const Eigh eig = eigh_full(sym(s));
  sel.eigenvalues = eig.values.cwiseMax(0.0);  // PSD up to roundoff
  const double total = sel.eigenvalues.sum();
  sel.cumvar = VectorXd::Zero(sel.eigenvalues.size());
  if (total <= 0.0) return sel;  // S == 0: K = 0, flat curve
  double run = 0.0;
  for (Eigen::Index i = 0; i < sel.eigenvalues.size(); ++i) {
    run += sel.eigenvalues(i);
    sel.cumvar(i) = run / total;
    if (sel.k == 0 && sel.cumvar(i) >= tau_var) sel.k = static_cast<int>(i) + 1;
  }
  if (sel.k == 0) sel.k = static_cast<int>(sel.eigenvalues.size());  // roundoff guard
  return sel;
}

double sigma_for_rank(int l, const VectorXd& d, double tau, double tr_s, int n) {
  if (l < 1 || l >= n) throw std::invalid_argument("sigma_for_rank: need 1 <= L < N");
  if (l > d.size()) throw std::invalid_argument("sigma_for_rank: L exceeds spectrum length");
  double retained = 0.0;
  for (int k = 0; k < l; ++k) retained += d(k) - tau;
  return (tr_s - retained) / static_cast<double>(n - l);
}

CovarianceEstimate estimate_covariance(const MatrixXd& phi, const MatrixXd& s, double tau) {
  const int n = static_cast<int>(s.rows());
  const int k = static_cast<int>(phi.cols());
  if (s.cols() != n) throw std::invalid_argument("estimate_covariance: S must be square");
  if (phi.rows() != n) throw std::invalid_argument("estimate_covariance: basis row count != N");
  if (tau < 0) throw std::invalid_argument("estimate_covariance: tau must be >= 0");
  if (k > 0) {
    const MatrixXd gram = phi.transpose() * phi;
    if ((gram - MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() > 1e-8)
      throw std::invalid_argument("estimate_covariance: basis is not orthonormal");
  }

  CovarianceEstimate est;
  est.tau = tau;
  const double tr_s = s.trace();

  if (k == 0) {
    est.rotation = MatrixXd(0, 0);
    est.sigma2 = n > 0 ? tr_s / n : 0.0;
    return est;
  }

  const Eigh eig = eigh_full(sym(phi.transpose() * s * phi));
  est.d = eig.values;
  est.rotation = eig.vectors;
  orient_columns(est.rotation);

  // Scan L downward; the first L whose shrunk eigenvalue clears the matched
  // noise level sets the rank. k == n would zero the denominator at L = n,
  // so the scan starts below it.
  est.l_hat = 0;
  for (int l = std::min(k, n - 1); l >= 1; --l) {
    const double s2 = sigma_for_rank(l, est.d, tau, tr_s, n);
    if (est.d(l - 1) - tau > s2) {
      est.l_hat = l;
      est.sigma2 = s2;
      break;
    }
  }
  if (est.l_hat == 0) est.sigma2 = tr_s / n;

  est.lambda = (est.d.array() - est.sigma2 - tau).cwiseMax(0.0);
  for (Eigen::Index i = est.l_hat; i < est.lambda.size(); ++i) est.lambda(i) = 0.0;
  return est;
}

MatrixXd retained_loadings(const CovarianceEstimate& est, const MatrixXd& phi) {
  if (phi.cols() != est.rotation.rows())
    throw std::invalid_argument("retained_loadings: basis width != estimate rank");
  return phi * est.rotation.leftCols(est.l_hat);
}

MatrixXd materialize_sigma(const CovarianceEstimate& est, const MatrixXd& phi) {
  const Eigen::Index n = phi.rows();
  MatrixXd out = est.sigma2 * MatrixXd::Identity(n, n);
  if (est.l_hat > 0) {
    const MatrixXd load = retained_loadings(est, phi);
    out.noalias() += load * est.lambda.head(est.l_hat).asDiagonal() * load.transpose();
  }
  return sym(out);
}

}  // namespace spadapt
