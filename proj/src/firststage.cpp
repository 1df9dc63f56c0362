#include "spadapt/firststage.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace spadapt {

namespace {

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void check_channels(const std::vector<MatrixXd>& x, Eigen::Index rows, Eigen::Index cols,
                    const char* who) {
  for (const auto& xc : x)
    if (xc.rows() != rows || xc.cols() != cols)
      throw std::invalid_argument(std::string(who) + ": covariate channel dims mismatch");
}

// Pooled design matrix [1 | x_0 | x_1 | ...] over the selected cells.
MatrixXd pooled_design(const std::vector<MatrixXd>& x, const std::vector<int>& rows,
                       const std::vector<int>& cols) {
  const int p = static_cast<int>(x.size());
  const Eigen::Index m = static_cast<Eigen::Index>(rows.size()) * static_cast<Eigen::Index>(cols.size());
  MatrixXd d(m, p + 1);
  Eigen::Index r = 0;
  for (int j : rows) {
    for (int i : cols) {
      d(r, 0) = 1.0;
      for (int c = 0; c < p; ++c) d(r, c + 1) = x[static_cast<std::size_t>(c)](j, i);
      ++r;
    }
  }
  return d;
}

VectorXd pooled_response(const MatrixXd& y, const std::vector<int>& rows,
                         const std::vector<int>& cols) {
  VectorXd v(static_cast<Eigen::Index>(rows.size()) * static_cast<Eigen::Index>(cols.size()));
  Eigen::Index r = 0;
  for (int j : rows)
    for (int i : cols) v(r++) = y(j, i);
  return v;
}

std::string design_column_name(int idx) {
  return idx == 0 ? std::string("intercept") : "x" + std::to_string(idx - 1);
}

}  // namespace

FirstStage fit_ols(const std::vector<MatrixXd>& x, const MatrixXd& y,
                   const std::vector<int>& rows, const std::vector<int>& cols) {
  if (rows.empty() || cols.empty()) throw std::invalid_argument("fit_ols: empty training index set");
  check_channels(x, y.rows(), y.cols(), "fit_ols");
  const MatrixXd d = pooled_design(x, rows, cols);
  const VectorXd v = pooled_response(y, rows, cols);
  if (d.rows() < d.cols()) throw std::invalid_argument("fit_ols: fewer cells than coefficients");

  // Normal equations on the column-equilibrated design: raw covariate scales
  // differ by ~1e3, which would square into the Gram and trip the rank test
  // on a perfectly identifiable design.
  VectorXd scale = d.colwise().norm();
  for (int j = 0; j < scale.size(); ++j)
    if (scale(j) == 0.0)
      throw std::runtime_error("fit_ols: design is rank-deficient, column '" +
                               design_column_name(j) + "' is zero");
  const MatrixXd g =
      scale.cwiseInverse().asDiagonal() * (d.transpose() * d) * scale.cwiseInverse().asDiagonal();
  Eigen::FullPivLU<MatrixXd> lu(g);
  lu.setThreshold(1e-10);
  if (lu.rank() < g.rows()) {
    // First column not covered by the pivoted rank is the redundant one.
    const auto& perm = lu.permutationQ();
    const int bad = perm.indices()(lu.rank());
    throw std::runtime_error("fit_ols: design is rank-deficient, column '" +
                             design_column_name(bad) + "' is collinear");
  }
  const VectorXd coef =
      scale.cwiseInverse().asDiagonal() * lu.solve(scale.cwiseInverse().asDiagonal() *
                                                   (d.transpose() * v));
  FirstStage fs;
  fs.kind = FirstStageKind::Ols;
  fs.intercept = coef(0);
  fs.beta = coef.tail(coef.size() - 1);
  return fs;
}

VectorXd ols_standard_errors(const std::vector<MatrixXd>& x, const MatrixXd& y,
                             const std::vector<int>& rows, const std::vector<int>& cols,
                             const FirstStage& fs) {
  const MatrixXd d = pooled_design(x, rows, cols);
  const VectorXd v = pooled_response(y, rows, cols);
  VectorXd coef(d.cols());
  coef(0) = fs.intercept;
  coef.tail(fs.beta.size()) = fs.beta;
  const double dof = static_cast<double>(d.rows() - d.cols());
  const double s2 = (v - d * coef).squaredNorm() / dof;
  const VectorXd scale = d.colwise().norm();
  const MatrixXd g =
      scale.cwiseInverse().asDiagonal() * (d.transpose() * d) * scale.cwiseInverse().asDiagonal();
  const MatrixXd cov = s2 * scale.cwiseInverse().asDiagonal() * MatrixXd(g.inverse()) *
                       scale.cwiseInverse().asDiagonal();
  return cov.diagonal().cwiseSqrt();
}

MatrixXd first_stage_predict(const FirstStage& fs, const std::vector<MatrixXd>& x) {
  switch (fs.kind) {
    case FirstStageKind::Zero: {
      if (x.empty()) throw std::invalid_argument("first_stage_predict: zero kind needs covariates for dims");
      return MatrixXd::Zero(x[0].rows(), x[0].cols());
    }
    case FirstStageKind::External:
      return fs.external;
    case FirstStageKind::Ols: {
      if (static_cast<int>(x.size()) != fs.beta.size())
        throw std::invalid_argument("first_stage_predict: channel count mismatch");
      check_channels(x, x[0].rows(), x[0].cols(), "first_stage_predict");
      MatrixXd f = MatrixXd::Constant(x[0].rows(), x[0].cols(), fs.intercept);
      for (int c = 0; c < fs.beta.size(); ++c) f.noalias() += fs.beta(c) * x[static_cast<std::size_t>(c)];
      return f;
    }
  }
  throw std::logic_error("first_stage_predict: bad kind");
}

MatrixXd compute_residual(const MatrixXd& y, const MatrixXd& f, const MatrixXd& m, Link link,
                          double eps) {
  if (y.rows() != f.rows() || y.cols() != f.cols() || y.rows() != m.rows() || y.cols() != m.cols())
    throw std::invalid_argument("compute_residual: shape mismatch");
  if (link == Link::Identity) return y - f - m;
  if (!(eps > 0 && eps < 0.5)) throw std::invalid_argument("compute_residual: eps out of range");
  MatrixXd r(y.rows(), y.cols());
  for (Eigen::Index j = 0; j < y.rows(); ++j) {
    for (Eigen::Index i = 0; i < y.cols(); ++i) {
      const double v = y(j, i);
      if (v != 0.0 && v != 1.0)
        throw std::invalid_argument("compute_residual: sigmoid link requires 0/1 labels");
      const double c = std::clamp(v, eps, 1.0 - eps);
      r(j, i) = std::log(c / (1.0 - c)) - f(j, i) - m(j, i);
    }
  }
  return r;
}

TrendModel make_trend(const TrendConfig& cfg, int n_channels, std::uint64_t seed) {
  TrendModel tm;
  tm.kind = cfg.kind;
  if (cfg.kind == TrendKind::Linear) {
    tm.w = VectorXd::Zero(n_channels);
  } else if (cfg.kind == TrendKind::Mlp) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    tm.w1 = MatrixXd(cfg.hidden, n_channels);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(n_channels));
    for (int h = 0; h < cfg.hidden; ++h)
      for (int c = 0; c < n_channels; ++c) tm.w1(h, c) = s1 * nd(rng);
    tm.b1 = VectorXd::Zero(cfg.hidden);
    tm.w2 = VectorXd(cfg.hidden);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
    for (int h = 0; h < cfg.hidden; ++h) tm.w2(h) = s2 * nd(rng);
    tm.b2 = 0.0;
  }
  return tm;
}

MatrixXd trend_forward(const TrendModel& tm, const std::vector<MatrixXd>& x) {
  if (x.empty()) throw std::invalid_argument("trend_forward: need covariates for dims");
  const Eigen::Index t_len = x[0].rows(), n = x[0].cols();
  check_channels(x, t_len, n, "trend_forward");
  switch (tm.kind) {
    case TrendKind::Zero:
      return MatrixXd::Zero(t_len, n);
    case TrendKind::Linear: {
      if (tm.w.size() != static_cast<Eigen::Index>(x.size()))
        throw std::invalid_argument("trend_forward: channel count mismatch");
      MatrixXd m = MatrixXd::Constant(t_len, n, tm.b);
      for (Eigen::Index c = 0; c < tm.w.size(); ++c) m.noalias() += tm.w(c) * x[static_cast<std::size_t>(c)];
      return m;
    }
    case TrendKind::Mlp: {
      if (tm.w1.cols() != static_cast<Eigen::Index>(x.size()))
        throw std::invalid_argument("trend_forward: channel count mismatch");
      MatrixXd m(t_len, n);
      const int p = static_cast<int>(x.size());
      VectorXd xi(p);
      for (Eigen::Index j = 0; j < t_len; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
          for (int c = 0; c < p; ++c) xi(c) = x[static_cast<std::size_t>(c)](j, i);
          const VectorXd h = ((tm.w1 * xi + tm.b1).array().tanh()).matrix();
          m(j, i) = tm.w2.dot(h) + tm.b2;
        }
      }
      return m;
    }
  }
  throw std::logic_error("trend_forward: bad kind");
}

VectorXd trend_params(const TrendModel& tm) {
  switch (tm.kind) {
    case TrendKind::Zero:
      return VectorXd(0);
    case TrendKind::Linear: {
      VectorXd p(tm.w.size() + 1);
      p.head(tm.w.size()) = tm.w;
      p(tm.w.size()) = tm.b;
      return p;
    }
    case TrendKind::Mlp: {
      const Eigen::Index n1 = tm.w1.size(), nb = tm.b1.size(), n2 = tm.w2.size();
      VectorXd p(n1 + nb + n2 + 1);
      p.head(n1) = Eigen::Map<const VectorXd>(tm.w1.data(), n1);
      p.segment(n1, nb) = tm.b1;
      p.segment(n1 + nb, n2) = tm.w2;
      p(n1 + nb + n2) = tm.b2;
      return p;
    }
  }
  throw std::logic_error("trend_params: bad kind");
}

void set_trend_params(TrendModel& tm, const VectorXd& p) {
  switch (tm.kind) {
    case TrendKind::Zero:
      if (p.size() != 0) throw std::invalid_argument("set_trend_params: zero trend has no parameters");
      return;
    case TrendKind::Linear:
      if (p.size() != tm.w.size() + 1) throw std::invalid_argument("set_trend_params: size mismatch");
      tm.w = p.head(tm.w.size());
      tm.b = p(tm.w.size());
      return;
    case TrendKind::Mlp: {
      const Eigen::Index n1 = tm.w1.size(), nb = tm.b1.size(), n2 = tm.w2.size();
      if (p.size() != n1 + nb + n2 + 1) throw std::invalid_argument("set_trend_params: size mismatch");
      Eigen::Map<VectorXd>(tm.w1.data(), n1) = p.head(n1);
      tm.b1 = p.segment(n1, nb);
      tm.w2 = p.segment(n1 + nb, n2);
      tm.b2 = p(n1 + nb + n2);
      return;
    }
  }
  throw std::logic_error("set_trend_params: bad kind");
}

double trend_coupling_loss(const TrendModel& tm, const std::vector<MatrixXd>& x,
                           const std::vector<int>& rows, const MatrixXd& target, double rho) {
  if (x.empty() || rows.empty()) throw std::invalid_argument("trend_coupling_loss: empty input");
  const Eigen::Index n = x[0].cols();
  if (target.rows() != static_cast<Eigen::Index>(rows.size()) || target.cols() != n)
    throw std::invalid_argument("trend_coupling_loss: target shape mismatch");
  const MatrixXd m = trend_forward(tm, x);
  double acc = 0.0;
  for (std::size_t b = 0; b < rows.size(); ++b)
    acc += (m.row(rows[b]) - target.row(static_cast<Eigen::Index>(b))).squaredNorm();
  const double cells = static_cast<double>(rows.size()) * static_cast<double>(n);
  return 0.5 * rho * acc / cells;
}

VectorXd trend_coupling_gradient(const TrendModel& tm, const std::vector<MatrixXd>& x,
                                 const std::vector<int>& rows, const MatrixXd& target, double rho) {
  if (x.empty() || rows.empty()) throw std::invalid_argument("trend_coupling_gradient: empty input");
  const Eigen::Index n = x[0].cols();
  const int p = static_cast<int>(x.size());
  const double cells = static_cast<double>(rows.size()) * static_cast<double>(n);
  const double scale = rho / cells;

  switch (tm.kind) {
    case TrendKind::Zero:
      return VectorXd(0);
    case TrendKind::Linear: {
      VectorXd g = VectorXd::Zero(p + 1);
      for (std::size_t b = 0; b < rows.size(); ++b) {
        const int j = rows[b];
        for (Eigen::Index i = 0; i < n; ++i) {
          double m = tm.b;
          for (int c = 0; c < p; ++c) m += tm.w(c) * x[static_cast<std::size_t>(c)](j, i);
          const double e = scale * (m - target(static_cast<Eigen::Index>(b), i));
          for (int c = 0; c < p; ++c) g(c) += e * x[static_cast<std::size_t>(c)](j, i);
          g(p) += e;
        }
      }
      return g;
    }
    case TrendKind::Mlp: {
      MatrixXd gw1 = MatrixXd::Zero(tm.w1.rows(), tm.w1.cols());
      VectorXd gb1 = VectorXd::Zero(tm.b1.size());
      VectorXd gw2 = VectorXd::Zero(tm.w2.size());
      double gb2 = 0.0;
      VectorXd xi(p);
      for (std::size_t b = 0; b < rows.size(); ++b) {
        const int j = rows[b];
        for (Eigen::Index i = 0; i < n; ++i) {
          for (int c = 0; c < p; ++c) xi(c) = x[static_cast<std::size_t>(c)](j, i);
          const VectorXd a = tm.w1 * xi + tm.b1;
          const VectorXd h = a.array().tanh().matrix();
          const double m = tm.w2.dot(h) + tm.b2;
          const double e = scale * (m - target(static_cast<Eigen::Index>(b), i));
          gw2.noalias() += e * h;
          gb2 += e;
          const VectorXd dh = (e * tm.w2.array() * (1.0 - h.array().square())).matrix();
          gw1.noalias() += dh * xi.transpose();
          gb1 += dh;
        }
      }
      VectorXd g(gw1.size() + gb1.size() + gw2.size() + 1);
      g.head(gw1.size()) = Eigen::Map<const VectorXd>(gw1.data(), gw1.size());
      g.segment(gw1.size(), gb1.size()) = gb1;
      g.segment(gw1.size() + gb1.size(), gw2.size()) = gw2;
      g(g.size() - 1) = gb2;
      return g;
    }
  }
  throw std::logic_error("trend_coupling_gradient: bad kind");
}

void trend_gradient_step(TrendModel& tm, const std::vector<MatrixXd>& x,
                         const std::vector<int>& rows, const MatrixXd& target, double rho,
                         double lr) {
  if (tm.kind == TrendKind::Zero) return;
  const VectorXd g = trend_coupling_gradient(tm, x, rows, target, rho);
  set_trend_params(tm, trend_params(tm) - lr * g);
}

std::vector<double> warmup_trend(TrendModel& tm, const std::vector<MatrixXd>& x, const MatrixXd& y,
                                 const MatrixXd& f, Link link, const std::vector<int>& train_rows,
                                 const std::vector<int>& val_rows, int epochs, int batch, double lr,
                                 int patience, std::uint64_t seed) {
  if (tm.kind == TrendKind::Zero || epochs <= 0) return {};
  if (batch < 1) throw std::invalid_argument("warmup_trend: batch must be >= 1");
  const Eigen::Index n = y.cols();

  auto task_loss = [&](const std::vector<int>& rows) {
    const MatrixXd m = trend_forward(tm, x);
    double acc = 0.0;
    for (int j : rows) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double eta = f(j, i) + m(j, i);
        if (link == Link::Identity) {
          const double e = y(j, i) - eta;
          acc += e * e;
        } else {
          const double p = sigmoid(eta);
          const double yy = y(j, i);
          acc += -(yy * std::log(std::max(p, 1e-12)) +
                   (1.0 - yy) * std::log(std::max(1.0 - p, 1e-12)));
        }
      }
    }
    return acc / (static_cast<double>(rows.size()) * static_cast<double>(n));
  };

  // Gradient of the mean task loss restricted to a batch of time rows.
  auto task_gradient = [&](const std::vector<int>& rows) {
    const MatrixXd m = trend_forward(tm, x);
    MatrixXd err(static_cast<Eigen::Index>(rows.size()), n);
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const int j = rows[b];
      for (Eigen::Index i = 0; i < n; ++i) {
        const double eta = f(j, i) + m(j, i);
        err(static_cast<Eigen::Index>(b), i) =
            link == Link::Identity ? 2.0 * (eta - y(j, i)) : sigmoid(eta) - y(j, i);
      }
    }
    // Reuse the coupling machinery: with target = M - err the coupling
    // gradient at rho = 1 equals mean(err * dM/dpsi), the task-loss gradient.
    MatrixXd target(static_cast<Eigen::Index>(rows.size()), n);
    for (std::size_t b = 0; b < rows.size(); ++b)
      target.row(static_cast<Eigen::Index>(b)) = m.row(rows[b]) - err.row(static_cast<Eigen::Index>(b));
    return trend_coupling_gradient(tm, x, rows, target, 1.0);
  };

  std::mt19937_64 rng(seed);
  std::vector<int> order = train_rows;
  VectorXd velocity = VectorXd::Zero(trend_params(tm).size());
  std::vector<double> history;
  double best_val = std::numeric_limits<double>::infinity();
  VectorXd best_params = trend_params(tm);
  int since_best = 0;

  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch));
      const std::vector<int> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(stop));
      const VectorXd g = task_gradient(rows);
      velocity = 0.9 * velocity - lr * g;
      set_trend_params(tm, trend_params(tm) + velocity);
    }
    history.push_back(task_loss(train_rows));
    if (!val_rows.empty()) {
      const double vl = task_loss(val_rows);
      if (vl < best_val) {
        best_val = vl;
        best_params = trend_params(tm);
        since_best = 0;
      } else if (++since_best >= patience) {
        set_trend_params(tm, best_params);
        break;
      }
    }
  }
  if (!val_rows.empty()) set_trend_params(tm, best_params);
  return history;
}

}  // namespace spadapt
