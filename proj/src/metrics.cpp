#include "spadapt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace spadapt {

Pointwise pointwise(const VectorXd& y, const VectorXd& yhat) {
  if (y.size() == 0) throw std::invalid_argument("pointwise: empty evaluation set");
  if (y.size() != yhat.size()) throw std::invalid_argument("pointwise: length mismatch");
  const VectorXd err = y - yhat;
  Pointwise out;
  out.rmse = std::sqrt(err.squaredNorm() / static_cast<double>(y.size()));
  out.mae = err.cwiseAbs().mean();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  const double ss_err = err.squaredNorm();
  out.r2 = ss_tot > 0 ? 1.0 - ss_err / ss_tot : (ss_err == 0 ? 1.0 : 0.0);
  return out;
}

Classification classification(const VectorXd& y, const VectorXd& p, double threshold) {
  const Eigen::Index n = y.size();
  if (n == 0) throw std::invalid_argument("classification: empty evaluation set");
  if (p.size() != n) throw std::invalid_argument("classification: length mismatch");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y(i) != 0.0 && y(i) != 1.0)
      throw std::invalid_argument("classification: labels must be 0/1");
    if (p(i) < 0.0 || p(i) > 1.0)
      throw std::invalid_argument("classification: scores must lie in [0, 1]");
  }

  Classification out;
  Eigen::Index tp = 0, fp = 0, fn = 0, correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool pred = p(i) >= threshold;
    const bool truth = y(i) == 1.0;
    correct += pred == truth;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  out.acc = static_cast<double>(correct) / static_cast<double>(n);
  out.f1 = (2 * tp + fp + fn) > 0 ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;

  const Eigen::Index n_pos = static_cast<Eigen::Index>(y.sum());
  const Eigen::Index n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    out.auc = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  // Mann-Whitney via average ranks of the scores.
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) { return p(a) < p(b); });
  double rank_sum_pos = 0.0;
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j < n && p(idx[static_cast<std::size_t>(j)]) == p(idx[static_cast<std::size_t>(i)])) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j + 1);  // ranks are 1-based
    for (Eigen::Index t = i; t < j; ++t)
      if (y(idx[static_cast<std::size_t>(t)]) == 1.0) rank_sum_pos += avg_rank;
    i = j;
  }
  out.auc = (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
            (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return out;
}

MatrixXd prediction_covariance(const MatrixXd& block) {
  if (block.rows() < 2) throw std::invalid_argument("prediction_covariance: need >= 2 repetitions");
  const MatrixXd centered = block.rowwise() - block.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(block.rows() - 1);
}

double cov_frob(const MatrixXd& pred, const MatrixXd& ref) {
  if (pred.rows() != ref.rows() || pred.cols() != ref.cols())
    throw std::invalid_argument("cov_frob: shape mismatch");
  const double denom = ref.norm();
  if (denom == 0) throw std::invalid_argument("cov_frob: zero reference covariance");
  return (pred - ref).norm() / denom;
}

namespace {

struct DistPair {
  double dist;
  double sq;  // squared-difference mass for this pair
};

// Shared binning core: equal-count edges pushed past tied distances, bin
// gamma = sum(sq) / (2 * count * reps).
Semivariogram bin_pairs(std::vector<DistPair>& pairs, int n_bins, double reps) {
  std::sort(pairs.begin(), pairs.end(),
            [](const DistPair& a, const DistPair& b) { return a.dist < b.dist; });
  const std::size_t m = pairs.size();
  const std::size_t bins = std::min<std::size_t>(static_cast<std::size_t>(n_bins), m);
  Semivariogram sv;
  std::vector<double> hs, gs;
  std::size_t start = 0;
  int dropped = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    std::size_t end = b + 1 == bins ? m : (m * (b + 1)) / bins;
    if (end < start) end = start;
    while (end > start && end < m && pairs[end].dist == pairs[end - 1].dist) ++end;
    if (end == start) {
      ++dropped;
      continue;
    }
    double h_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      h_sum += pairs[i].dist;
      sq_sum += pairs[i].sq;
    }
    const double count = static_cast<double>(end - start);
    hs.push_back(h_sum / count);
    gs.push_back(sq_sum / (2.0 * count * reps));
    sv.counts.push_back(static_cast<Eigen::Index>(end - start));
    start = end;
  }
  if (dropped > 0)
    std::cerr << "semivariogram: dropped " << dropped << " empty bin(s) after tie snapping\n";
  sv.h = Eigen::Map<VectorXd>(hs.data(), static_cast<Eigen::Index>(hs.size()));
  sv.gamma = Eigen::Map<VectorXd>(gs.data(), static_cast<Eigen::Index>(gs.size()));
  return sv;
}

}  // namespace

Semivariogram semivariogram(const MatrixXd& block, const LocationSet& locs,
                            const SemivariogramConfig& cfg) {
  const Eigen::Index n = locs.size();
  const Eigen::Index t_len = block.rows();
  if (block.cols() != n) throw std::invalid_argument("semivariogram: block width != locations");
  if (n < 2) throw std::invalid_argument("semivariogram: need >= 2 locations");
  if (cfg.n_bins < 2) throw std::invalid_argument("semivariogram: need >= 2 bins");
  if (t_len < 1) throw std::invalid_argument("semivariogram: empty block");

  // Sum over repetitions of (y_i - y_i')^2 collapses to Gram diagonals:
  // ||col_i - col_i'||^2 = g_ii + g_jj - 2 g_ij.
  const MatrixXd gram = block.transpose() * block;

  std::vector<DistPair> pairs;
  pairs.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dist = (locs.coords.row(i) - locs.coords.row(j)).norm();
      pairs.push_back({dist, gram(i, i) + gram(j, j) - 2.0 * gram(i, j)});
    }
  }
  return bin_pairs(pairs, cfg.n_bins, static_cast<double>(t_len));
}

Semivariogram semivariogram_from_cov(const MatrixXd& sigma, const LocationSet& locs,
                                     const SemivariogramConfig& cfg) {
  const Eigen::Index n = locs.size();
  if (sigma.rows() != n || sigma.cols() != n)
    throw std::invalid_argument("semivariogram_from_cov: covariance size != locations");
  if (n < 2) throw std::invalid_argument("semivariogram_from_cov: need >= 2 locations");
  if (cfg.n_bins < 2) throw std::invalid_argument("semivariogram_from_cov: need >= 2 bins");

  std::vector<DistPair> pairs;
  pairs.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double dist = (locs.coords.row(i) - locs.coords.row(j)).norm();
      pairs.push_back({dist, sigma(i, i) + sigma(j, j) - 2.0 * sigma(i, j)});
    }
  }
  return bin_pairs(pairs, cfg.n_bins, 1.0);
}

double sv_score(const Semivariogram& pred, const Semivariogram& obs, double delta) {
  if (pred.gamma.size() != obs.gamma.size() || pred.gamma.size() == 0)
    throw std::invalid_argument("sv_score: bin mismatch");
  if (delta <= 0) throw std::invalid_argument("sv_score: delta must be > 0");
  double acc = 0.0;
  for (Eigen::Index b = 0; b < pred.gamma.size(); ++b) {
    const double rel = (pred.gamma(b) - obs.gamma(b)) / (obs.gamma(b) + delta);
    acc += rel * rel;
  }
  return std::sqrt(acc / static_cast<double>(pred.gamma.size()));
}

CoverageStats cp_mpiw(const VectorXd& y, const VectorXd& lo, const VectorXd& hi) {
  const Eigen::Index n = y.size();
  if (n == 0) throw std::invalid_argument("cp_mpiw: empty evaluation set");
  if (lo.size() != n || hi.size() != n) throw std::invalid_argument("cp_mpiw: length mismatch");
  CoverageStats out;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.cp += (y(i) >= lo(i) && y(i) <= hi(i)) ? 1.0 : 0.0;
    out.mpiw += hi(i) - lo(i);
  }
  out.cp /= static_cast<double>(n);
  out.mpiw /= static_cast<double>(n);
  return out;
}

double ece(const VectorXd& y, const VectorXd& p, int n_bins) {
  const Eigen::Index n = y.size();
  if (n == 0) throw std::invalid_argument("ece: empty evaluation set");
  if (p.size() != n) throw std::invalid_argument("ece: length mismatch");
  if (n_bins < 1) throw std::invalid_argument("ece: need >= 1 bin");
  std::vector<double> p_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> y_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<Eigen::Index> count(static_cast<std::size_t>(n_bins), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (p(i) < 0.0 || p(i) > 1.0) throw std::invalid_argument("ece: scores must lie in [0, 1]");
    auto b = static_cast<std::size_t>(std::min<int>(
        static_cast<int>(p(i) * n_bins), n_bins - 1));  // p == 1 lands in the top bin
    p_sum[b] += p(i);
    y_sum[b] += y(i);
    ++count[b];
  }
  double out = 0.0;
  for (std::size_t b = 0; b < static_cast<std::size_t>(n_bins); ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    out += nb / static_cast<double>(n) * std::abs(p_sum[b] / nb - y_sum[b] / nb);
  }
  return out;
}

double basis_alignment(const MatrixXd& phi_hat, const MatrixXd& phi_true) {
  if (phi_hat.rows() != phi_true.rows() || phi_hat.cols() != phi_true.cols())
    throw std::invalid_argument("basis_alignment: shape mismatch");
  const Eigen::Index k = phi_hat.cols();
  if (k == 0) throw std::invalid_argument("basis_alignment: empty basis");
  for (Eigen::Index c = 0; c < k; ++c) {
    if (std::abs(phi_hat.col(c).norm() - 1.0) > 1e-6 ||
        std::abs(phi_true.col(c).norm() - 1.0) > 1e-6)
      throw std::invalid_argument("basis_alignment: columns must be unit-norm");
  }
  return (phi_hat.transpose() * phi_true).norm() / std::sqrt(static_cast<double>(k));
}

}  // namespace spadapt
