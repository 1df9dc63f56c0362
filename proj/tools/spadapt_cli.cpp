// Experiment driver. Every subcommand writes deterministic files under
// --out-dir for a fixed config+seed; wall-clock timing goes to stderr only.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spadapt/adapter.hpp"
#include "spadapt/covariance.hpp"
#include "spadapt/dataio.hpp"
#include "spadapt/experiments.hpp"
#include "spadapt/metrics.hpp"
#include "spadapt/predict.hpp"

namespace {

using json = nlohmann::json;
using namespace spadapt;

ExperimentConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  if (path.empty()) throw CLI::ValidationError("--config is required for this subcommand");
  ExperimentConfig cfg = read_config(path);
  if (seed) cfg.seed = *seed;
  return cfg;
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
}

void log_seconds(const std::string& what, std::chrono::steady_clock::time_point t0) {
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "[" << what << "] " << s << " s\n";
}

MatrixXd residual_for_model(const AdapterModel& model, const Pipeline& pipe,
                            const std::vector<int>& rows, Link link) {
  const MatrixXd y = take_rows(pipe.data.y, rows);
  const MatrixXd f = take_rows(pipe.f, rows);
  const MatrixXd m = model.trend.kind == TrendKind::Zero
                         ? MatrixXd::Zero(y.rows(), y.cols())
                         : trend_forward(model.trend, take_rows(pipe.data.x, rows));
  return compute_residual(y, f, m, link);
}

void write_covariance_files(const std::string& dir, const CovarianceEstimate& est,
                            const MatrixXd& phi, bool materialize) {
  std::filesystem::create_directories(dir);
  write_matrix_csv(dir + "/eigenvalues.csv", est.d);
  write_matrix_csv(dir + "/lambda.csv", est.lambda);
  write_matrix_csv(dir + "/rotation.csv", est.rotation);
  write_matrix_csv(dir + "/loadings.csv", retained_loadings(est, phi));
  if (materialize) write_matrix_csv(dir + "/sigma.csv", materialize_sigma(est, phi));
  json j;
  j["sigma2"] = est.sigma2;
  j["l_hat"] = est.l_hat;
  j["tau"] = est.tau;
  write_json(dir + "/summary.json", j);
}

int cmd_synth(const ExperimentConfig& cfg, const std::string& out, bool dump_data) {
  const auto t0 = std::chrono::steady_clock::now();
  const SyntheticOutcome res = run_synthetic(cfg);
  std::vector<ResultsRecord> agg;
  if (cfg.n_seeds > 1) agg.push_back(res.aggregate);
  write_outcome(out, cfg, res.seeds, agg, res.reg_traces.empty() ? nullptr : &res.reg_traces[0]);
  json j;
  j["lambda1"] = res.lambda1;
  j["lambda2"] = res.lambda2;
  j["n_seeds"] = cfg.n_seeds;
  write_json(out + "/summary.json", j);
  if (dump_data) {
    const SyntheticData data = generate(*cfg.dgp, cfg.seed);
    std::filesystem::create_directories(out + "/data");
    write_matrix_csv(out + "/data/y.csv", data.y);
    for (std::size_t c = 0; c < data.x.size(); ++c)
      write_matrix_csv(out + "/data/x" + std::to_string(c) + ".csv", data.x[c]);
    write_matrix_csv(out + "/data/locations.csv", data.locations.coords);
    write_matrix_csv(out + "/data/phi_true.csv", data.phi_true);
    write_matrix_csv(out + "/data/sigma_true.csv", true_covariance(*cfg.dgp));
  }
  log_seconds("synth", t0);
  return 0;
}

int cmd_fit(const ExperimentConfig& cfg, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const Pipeline pipe = prepare_pipeline(cfg, cfg.seed);
  const VariantFit fit = fit_variant(pipe, cfg, cfg.lambda1, cfg.lambda2, cfg.seed);

  std::filesystem::create_directories(out);
  save_model(out + "/model", fit.model);
  write_covariance_files(out + "/covariance", fit.cov, fit.model.phi, false);

  ResultsRecord rec;
  rec.run_id = "fit_seed" + std::to_string(cfg.seed);
  rec.config_hash = config_hash(cfg);
  rec.metrics["rmse"] = fit.rmse;
  rec.metrics["mae"] = fit.mae;
  rec.metrics["r2"] = fit.r2;
  rec.metrics["lhat"] = fit.cov.l_hat;
  rec.metrics["sigma2"] = fit.cov.sigma2;
  rec.metrics["iterations"] = fit.model.trace.iterations;
  rec.metrics["converged"] = fit.model.trace.converged ? 1.0 : 0.0;
  if (cfg.dgp) {
    rec.metrics["covfrob_true"] = fit.covfrob_true;
    rec.metrics["alignment"] = fit.alignment;
  }
  write_outcome(out, cfg, {rec}, {}, &fit.model.trace);
  log_seconds("fit", t0);
  return 0;
}

int cmd_reconstruct(const ExperimentConfig& cfg, const std::string& model_dir,
                    const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const AdapterModel model = load_model(model_dir);
  const Pipeline pipe = prepare_pipeline(cfg, cfg.seed);
  const MatrixXd y_te = take_rows(pipe.data.y, pipe.splits.test);
  const MatrixXd f_te = take_rows(pipe.f, pipe.splits.test);
  const MatrixXd yhat =
      reconstruct(model, y_te, f_te, take_rows(pipe.data.x, pipe.splits.test), cfg.link);

  std::filesystem::create_directories(out);
  write_matrix_csv(out + "/reconstruction.csv", yhat);
  const Pointwise pw = pointwise(Eigen::Map<const VectorXd>(y_te.data(), y_te.size()),
                                 Eigen::Map<const VectorXd>(yhat.data(), yhat.size()));
  json j;
  j["rmse"] = pw.rmse;
  j["mae"] = pw.mae;
  j["r2"] = pw.r2;
  write_json(out + "/metrics.json", j);
  log_seconds("reconstruct", t0);
  return 0;
}

int cmd_covariance(const ExperimentConfig& cfg, const std::string& model_dir,
                   const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const AdapterModel model = load_model(model_dir);
  const Pipeline pipe = prepare_pipeline(cfg, cfg.seed);
  const MatrixXd r_tr = residual_for_model(model, pipe, pipe.splits.train, cfg.link);
  const double tau = cfg.tau.value_or(model.opts.lambda1);
  const CovarianceEstimate est = estimate_covariance(model.phi, residual_gram(r_tr), tau);
  write_covariance_files(out, est, model.phi, true);
  log_seconds("covariance", t0);
  return 0;
}

// Single-replicate station-holdout demonstration: fit on the observed
// stations, krige every held-out station at every test time, and report
// interval calibration against the ground truth.
int cmd_krige(const ExperimentConfig& cfg, const std::string& out, double alpha) {
  if (!cfg.dgp) throw std::runtime_error("krige: synthetic config (dgp block) required");
  const auto t0 = std::chrono::steady_clock::now();
  const SyntheticData data = generate(*cfg.dgp, cfg.seed);
  const Splits splits = make_splits(static_cast<int>(data.y.rows()), cfg.splits);
  const int n = data.locations.size();

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(perm.begin(), perm.end(), rng);
  const int n_held = std::max(1, static_cast<int>(std::floor(cfg.holdout_frac * n)));
  std::vector<int> held(perm.begin(), perm.begin() + n_held);
  std::vector<int> obs(perm.begin() + n_held, perm.end());
  std::sort(held.begin(), held.end());
  std::sort(obs.begin(), obs.end());

  const FirstStage fs = cfg.first_stage == FirstStageKind::Ols
                            ? fit_ols(data.x, data.y, splits.train, obs)
                            : FirstStage{};
  const MatrixXd f = cfg.first_stage == FirstStageKind::Zero
                         ? MatrixXd::Zero(data.y.rows(), data.y.cols())
                         : first_stage_predict(fs, data.x);

  auto take_cols = [](const MatrixXd& m, const std::vector<int>& cols) {
    MatrixXd r(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i)
      r.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
    return r;
  };
  MatrixXd coords_obs(static_cast<Eigen::Index>(obs.size()), data.locations.dim());
  for (std::size_t i = 0; i < obs.size(); ++i)
    coords_obs.row(static_cast<Eigen::Index>(i)) = data.locations.coords.row(obs[i]);
  const LocationSet locs_obs = make_locations(coords_obs);
  MatrixXd coords_held(static_cast<Eigen::Index>(held.size()), data.locations.dim());
  for (std::size_t i = 0; i < held.size(); ++i)
    coords_held.row(static_cast<Eigen::Index>(i)) = data.locations.coords.row(held[i]);

  const MatrixXd y_tr = take_cols(take_rows(data.y, splits.train), obs);
  const MatrixXd f_tr = take_cols(take_rows(f, splits.train), obs);
  Stage2Options opts = stage2_options(cfg, cfg.lambda1, cfg.lambda2, cfg.seed);
  opts.update_trend = false;
  const AdapterModel model =
      fit_stage2(y_tr, f_tr, {}, build_roughness(locs_obs), TrendModel{}, opts);
  const double tau = cfg.tau.value_or(cfg.lambda1);
  const CovarianceEstimate est = estimate_covariance(model.phi, residual_gram(y_tr - f_tr), tau);

  const MatrixXd load_obs = retained_loadings(est, model.phi);
  const MatrixXd load_held =
      extend_basis(model.phi, locs_obs, coords_held) * est.rotation.leftCols(est.l_hat);
  const VectorXd lam = est.lambda.head(est.l_hat);
  const MatrixXd lam_cond = conditional_score_cov(lam, est.sigma2, load_obs);

  const MatrixXd y_te = take_rows(data.y, splits.test);
  const MatrixXd f_te = take_rows(f, splits.test);
  const MatrixXd r_te_obs = take_cols(y_te, obs) - take_cols(f_te, obs);
  const MatrixXd y_te_held = take_cols(y_te, held);
  const MatrixXd f_te_held = take_cols(f_te, held);

  const Eigen::Index t_test = y_te.rows();
  MatrixXd mean(t_test, n_held), lo(t_test, n_held), hi(t_test, n_held);
  VectorXd variance(n_held);
  for (int i = 0; i < n_held; ++i)
    variance(i) = krige_variance(load_held.row(i).transpose(), lam_cond, est.sigma2);
  for (Eigen::Index j = 0; j < t_test; ++j) {
    const VectorXd a =
        conditional_scores(lam_cond, est.sigma2, load_obs, r_te_obs.row(j).transpose());
    for (int i = 0; i < n_held; ++i) {
      mean(j, i) = krige_mean(f_te_held(j, i), load_held.row(i).transpose(), a);
      const Interval pi = cfg.link == Link::Sigmoid
                              ? logistic_interval(mean(j, i), variance(i), alpha)
                              : gaussian_interval(mean(j, i), variance(i), alpha);
      lo(j, i) = pi.lo;
      hi(j, i) = pi.hi;
    }
  }

  std::filesystem::create_directories(out);
  write_config(out + "/config.json", cfg);
  write_matrix_csv(out + "/mean.csv", mean);
  write_matrix_csv(out + "/variance.csv", variance.transpose());
  write_matrix_csv(out + "/lo.csv", lo);
  write_matrix_csv(out + "/hi.csv", hi);
  write_matrix_csv(out + "/truth.csv", y_te_held);
  MatrixXd held_coords_out(n_held, data.locations.dim());
  for (int i = 0; i < n_held; ++i) held_coords_out.row(i) = coords_held.row(i);
  write_matrix_csv(out + "/held_locations.csv", held_coords_out);

  const auto flat = [](const MatrixXd& m) {
    return VectorXd(Eigen::Map<const VectorXd>(m.data(), m.size()));
  };
  const CoverageStats cs = cp_mpiw(flat(y_te_held), flat(lo), flat(hi));
  const Pointwise pw = pointwise(flat(y_te_held), flat(mean));
  json j;
  j["cp"] = cs.cp;
  j["mpiw"] = cs.mpiw;
  j["rmse"] = pw.rmse;
  j["rmse_first_stage"] = pointwise(flat(y_te_held), flat(f_te_held)).rmse;
  j["alpha"] = alpha;
  j["n_held"] = n_held;
  j["l_hat"] = est.l_hat;
  write_json(out + "/summary.json", j);
  log_seconds("krige", t0);
  return 0;
}

int cmd_metrics(const std::string& y_path, const std::string& yhat_path, bool binary,
                const std::string& out) {
  const MatrixXd y = read_matrix(y_path);
  const MatrixXd yhat = read_matrix(yhat_path);
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols())
    throw std::runtime_error("metrics: shape mismatch between --y and --yhat");
  const Eigen::Map<const VectorXd> yv(y.data(), y.size());
  const Eigen::Map<const VectorXd> pv(yhat.data(), yhat.size());
  json j;
  const Pointwise pw = pointwise(yv, pv);
  j["rmse"] = pw.rmse;
  j["mae"] = pw.mae;
  j["r2"] = pw.r2;
  if (binary) {
    const Classification cls = classification(yv, pv);
    j["acc"] = cls.acc;
    j["auc"] = cls.auc;
    j["f1"] = cls.f1;
    j["ece"] = ece(yv, pv);
  }
  std::filesystem::create_directories(out);
  write_json(out + "/metrics.json", j);
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const RegPathOutcome res = run_reg_path(cfg);

  std::filesystem::create_directories(out);
  write_config(out + "/config.json", cfg);
  {
    std::ofstream f(out + "/path.csv", std::ios::binary);
    f << "lambda,align_median,align_q1,align_q3,covfrob_median,covfrob_q1,covfrob_q3\n";
    f.precision(17);
    for (const auto& pt : res.points)
      f << pt.lambda << ',' << pt.align_median << ',' << pt.align_q1 << ',' << pt.align_q3 << ','
        << pt.covfrob_median << ',' << pt.covfrob_q1 << ',' << pt.covfrob_q3 << '\n';
  }
  {
    std::ofstream f(out + "/path_seeds.csv", std::ios::binary);
    f << "lambda,seed,alignment,covfrob\n";
    f.precision(17);
    for (const auto& pt : res.points)
      for (std::size_t s = 0; s < pt.align_seeds.size(); ++s)
        f << pt.lambda << ',' << cfg.seed + s << ',' << pt.align_seeds[s] << ','
          << pt.covfrob_seeds[s] << '\n';
  }
  json j;
  j["lambda_star"] = res.lambda_star;
  j["star_index"] = res.star_index;
  write_json(out + "/summary.json", j);
  log_seconds("sweep", t0);
  return 0;
}

int cmd_holdout(const ExperimentConfig& cfg, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const HoldoutOutcome res = run_holdout(cfg);
  std::vector<ResultsRecord> agg;
  if (cfg.n_seeds > 1) agg.push_back(res.aggregate);
  write_outcome(out, cfg, res.seeds, agg, nullptr);
  log_seconds("holdout", t0);
  return 0;
}

int cmd_ablate_bce(const ExperimentConfig& cfg, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const AblationOutcome res = run_bce_ablation(cfg);
  write_outcome(out, cfg, res.seeds, res.aggregates, nullptr);
  log_seconds("ablate-bce", t0);
  return 0;
}

int cmd_tune(const ExperimentConfig& cfg, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const Pipeline pipe = prepare_pipeline(cfg, cfg.seed);
  const TuneResult res = tune_lambdas(pipe, cfg, cfg.seed);

  std::filesystem::create_directories(out);
  write_config(out + "/config.json", cfg);
  {
    std::ofstream f(out + "/trials.csv", std::ios::binary);
    f << "trial,lambda1,lambda2,objective\n";
    f.precision(17);
    for (std::size_t i = 0; i < res.trials.size(); ++i)
      f << i << ',' << res.trials[i].lambda1 << ',' << res.trials[i].lambda2 << ','
        << res.trials[i].objective << '\n';
  }

  // Refit at the selection and score the test block under all three criteria.
  const VariantFit fit = fit_variant(pipe, cfg, res.lambda1, res.lambda2, cfg.seed);
  const MatrixXd y_te = take_rows(pipe.data.y, pipe.splits.test);
  const MatrixXd f_te = take_rows(pipe.f, pipe.splits.test);
  const MatrixXd r_te = compute_residual(y_te, f_te, MatrixXd::Zero(y_te.rows(), y_te.cols()),
                                         cfg.link);
  const MatrixXd sigma_hat = materialize_sigma(fit.cov, fit.model.phi);
  SemivariogramConfig sv_cfg;
  json j;
  j["lambda1"] = res.lambda1;
  j["lambda2"] = res.lambda2;
  j["objective"] = res.objective;
  j["test_rmse"] = fit.rmse;
  j["test_covfrob_empirical"] = cov_frob(sigma_hat, prediction_covariance(r_te));
  j["test_sv_score"] = sv_score(semivariogram_from_cov(sigma_hat, pipe.data.locations, sv_cfg),
                                semivariogram(r_te, pipe.data.locations, sv_cfg), sv_cfg.delta);
  if (cfg.dgp) {
    j["covfrob_true"] = fit.covfrob_true;
    j["alignment"] = fit.alignment;
  }
  write_json(out + "/best.json", j);
  log_seconds("tune", t0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank spatial residual adapter toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  int threads = 1;
  app.add_option("--config", config_path, "Experiment config (JSON)");
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--out-dir", out_dir, "Output directory");
  app.add_option("--threads", threads,
                 "Worker threads (BLAS stays single-threaded for reproducibility)")
      ->check(CLI::PositiveNumber);
  app.fallthrough();

  auto* synth = app.add_subcommand("synth", "Synthetic benchmark: OLS vs unregularized vs "
                                            "regularized adapter across seeds");
  bool dump_data = false;
  synth->add_flag("--dump-data", dump_data, "Also write the first seed's generated matrices");

  auto* fit = app.add_subcommand("fit", "Fit one adapter and save the model + covariance");
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct the test block with a saved model");
  auto* cov = app.add_subcommand("covariance", "Covariance estimate from a saved model");
  std::string model_dir;
  rec->add_option("--model", model_dir, "Saved model directory")->required();
  cov->add_option("--model", model_dir, "Saved model directory")->required();

  auto* krige = app.add_subcommand("krige", "Station-holdout kriging with plug-in intervals");
  double alpha = 0.05;
  krige->add_option("--alpha", alpha, "Interval miscoverage level")
      ->check(CLI::Range(1e-6, 0.5));

  auto* metrics = app.add_subcommand("metrics", "Score a prediction matrix against a reference");
  std::string y_path, yhat_path;
  bool binary = false;
  metrics->add_option("--y", y_path, "Reference matrix")->required();
  metrics->add_option("--yhat", yhat_path, "Prediction matrix")->required();
  metrics->add_flag("--binary", binary, "Also report classification metrics");

  auto* sweep = app.add_subcommand("sweep", "Regularization path (lambda1 = lambda2)");
  auto* holdout = app.add_subcommand("holdout", "Station-holdout RMSE comparison across seeds");
  auto* ablate = app.add_subcommand("ablate-bce", "Bernoulli surrogate ablation (variants A/B/C)");
  auto* tune = app.add_subcommand("tune", "Random hyperparameter search + refit report");

  CLI11_PARSE(app, argc, argv);
  if (threads > 1)
    std::cerr << "note: linear algebra is pinned to one thread; --threads affects nothing else\n";

  try {
    if (app.got_subcommand(metrics)) return cmd_metrics(y_path, yhat_path, binary, out_dir);
    const ExperimentConfig cfg = load_config(config_path, seed);
    if (app.got_subcommand(synth)) return cmd_synth(cfg, out_dir, dump_data);
    if (app.got_subcommand(fit)) return cmd_fit(cfg, out_dir);
    if (app.got_subcommand(rec)) return cmd_reconstruct(cfg, model_dir, out_dir);
    if (app.got_subcommand(cov)) return cmd_covariance(cfg, model_dir, out_dir);
    if (app.got_subcommand(krige)) return cmd_krige(cfg, out_dir, alpha);
    if (app.got_subcommand(sweep)) return cmd_sweep(cfg, out_dir);
    if (app.got_subcommand(holdout)) return cmd_holdout(cfg, out_dir);
    if (app.got_subcommand(ablate)) return cmd_ablate_bce(cfg, out_dir);
    if (app.got_subcommand(tune)) return cmd_tune(cfg, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
