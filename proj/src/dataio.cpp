#include "spadapt/dataio.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "spadapt/linalg.hpp"

namespace spadapt {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'S', 'P', 'A', 'D', 'M', 'T', 'R', 'X'};

static_assert(sizeof(double) == 8, "binary matrix format assumes 8-byte doubles");

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double: to_chars failed");
  return std::string(buf, ptr);
}

double parse_double(const std::string& tok, const std::string& where) {
  double v = 0.0;
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  while (ptr < e && (*ptr == ' ' || *ptr == '\t' || *ptr == '\r')) ++ptr;
  if (ec != std::errc{} || ptr != e)
    throw std::runtime_error("matrix csv: bad numeric value '" + tok + "' at " + where);
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

MatrixXd read_matrix_csv_impl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  // The first line is always a header; only its field count matters, so
  // files with foreign column names still load.
  const auto header = split_csv_line(line);
  const int cols = static_cast<int>(header.size());
  std::vector<double> values;
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto toks = split_csv_line(line);
    if (static_cast<int>(toks.size()) != cols)
      throw std::runtime_error(path + ": row " + std::to_string(rows) + " has " +
                               std::to_string(toks.size()) + " fields, expected " +
                               std::to_string(cols));
    for (int j = 0; j < cols; ++j)
      values.push_back(parse_double(toks[static_cast<std::size_t>(j)],
                                    path + ":" + std::to_string(rows + 2)));
    ++rows;
  }
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      m(i, j) = values[static_cast<std::size_t>(i) * cols + j];
  return m;
}

MatrixXd read_matrix_binary_impl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": missing binary matrix magic");
  std::uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in) throw std::runtime_error(path + ": truncated header");
  MatrixXd m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) {
      double v;
      in.read(reinterpret_cast<char*>(&v), 8);
      if (!in)
        throw std::runtime_error(path + ": payload shorter than declared " +
                                 std::to_string(rows) + "x" + std::to_string(cols));
      m(i, j) = v;
    }
  }
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error(path + ": payload longer than declared dimensions");
  return m;
}

bool has_binary_magic(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  return in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0;
}

MatrixXd read_matrix_any(const std::string& path) {
  return has_binary_magic(path) ? read_matrix_binary_impl(path) : read_matrix_csv_impl(path);
}

void check_finite(const MatrixXd& m, const std::string& path) {
  if (!m.allFinite())
    throw std::runtime_error(path + ": non-finite value (use read_matrix_masked for missing data)");
}

// --- config helpers ---

[[noreturn]] void config_error(const std::string& msg) {
  throw std::runtime_error("config: " + msg);
}

void warn_unknown_keys(const json& j, const std::set<std::string>& known,
                       const std::string& scope) {
  for (const auto& item : j.items()) {
    if (!known.count(item.key()))
      std::cerr << "config warning: unknown key '" << scope << item.key() << "' ignored\n";
  }
}

template <typename T>
void get_to_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

Link parse_link(const std::string& s) {
  if (s == "identity") return Link::Identity;
  if (s == "sigmoid") return Link::Sigmoid;
  config_error("link must be 'identity' or 'sigmoid', got '" + s + "'");
}

FirstStageKind parse_first_stage(const std::string& s) {
  if (s == "zero") return FirstStageKind::Zero;
  if (s == "ols") return FirstStageKind::Ols;
  if (s == "external") return FirstStageKind::External;
  config_error("first_stage must be zero|ols|external, got '" + s + "'");
}

TrendKind parse_trend_kind(const std::string& s) {
  if (s == "zero") return TrendKind::Zero;
  if (s == "linear") return TrendKind::Linear;
  if (s == "mlp") return TrendKind::Mlp;
  config_error("trend.kind must be zero|linear|mlp, got '" + s + "'");
}

BceVariant parse_bce_variant(const std::string& s) {
  if (s == "A") return BceVariant::A;
  if (s == "B") return BceVariant::B;
  if (s == "C") return BceVariant::C;
  config_error("bce_variant must be A|B|C, got '" + s + "'");
}

RankPolicy parse_rank_policy(const std::string& s) {
  if (s == "fixed") return RankPolicy::Fixed;
  if (s == "cumvar") return RankPolicy::CumVar;
  config_error("rank.policy must be fixed|cumvar, got '" + s + "'");
}

TuneObjective parse_objective(const std::string& s) {
  if (s == "rmse") return TuneObjective::Rmse;
  if (s == "covfrob") return TuneObjective::CovFrob;
  if (s == "sv") return TuneObjective::SvScore;
  config_error("tune.objective must be rmse|covfrob|sv, got '" + s + "'");
}

const char* link_name(Link l) { return l == Link::Identity ? "identity" : "sigmoid"; }
const char* first_stage_name(FirstStageKind k) {
  switch (k) {
    case FirstStageKind::Zero: return "zero";
    case FirstStageKind::Ols: return "ols";
    default: return "external";
  }
}
const char* trend_name(TrendKind k) {
  switch (k) {
    case TrendKind::Zero: return "zero";
    case TrendKind::Linear: return "linear";
    default: return "mlp";
  }
}
const char* bce_name(BceVariant v) {
  switch (v) {
    case BceVariant::A: return "A";
    case BceVariant::B: return "B";
    default: return "C";
  }
}
const char* rank_policy_name(RankPolicy p) { return p == RankPolicy::Fixed ? "fixed" : "cumvar"; }
const char* objective_name(TuneObjective o) {
  switch (o) {
    case TuneObjective::Rmse: return "rmse";
    case TuneObjective::CovFrob: return "covfrob";
    default: return "sv";
  }
}

void parse_dgp(const json& j, DgpConfig& d) {
  warn_unknown_keys(j,
                    {"n_locations", "n_times", "beta", "intercept", "noise_sd", "alpha_rho",
                     "alpha_sd", "gamma_rho", "global_drift", "s_range", "covariate_noise_sd",
                     "location_jitter_sd"},
                    "dgp.");
  get_to_if(j, "n_locations", d.n_locations);
  get_to_if(j, "n_times", d.n_times);
  get_to_if(j, "beta", d.beta);
  get_to_if(j, "intercept", d.intercept);
  get_to_if(j, "noise_sd", d.noise_sd);
  get_to_if(j, "alpha_rho", d.alpha_rho);
  get_to_if(j, "alpha_sd", d.alpha_sd);
  get_to_if(j, "gamma_rho", d.gamma_rho);
  get_to_if(j, "global_drift", d.global_drift);
  if (j.contains("s_range")) {
    std::vector<double> r = j.at("s_range").get<std::vector<double>>();
    if (r.size() != 2) config_error("dgp.s_range must have two entries");
    d.s_min = r[0];
    d.s_max = r[1];
  }
  get_to_if(j, "covariate_noise_sd", d.covariate_noise_sd);
  get_to_if(j, "location_jitter_sd", d.location_jitter_sd);

  if (d.n_locations < 2) config_error("dgp.n_locations must be >= 2");
  if (d.n_times < 2) config_error("dgp.n_times must be >= 2");
  if (d.beta.size() != 5) config_error("dgp.beta must have 5 entries (one per covariate)");
  if (d.noise_sd <= 0) config_error("dgp.noise_sd must be > 0");
  if (d.alpha_sd <= 0) config_error("dgp.alpha_sd must be > 0");
  if (std::abs(d.alpha_rho) >= 1) config_error("dgp.alpha_rho must be in (-1, 1)");
  if (std::abs(d.gamma_rho) >= 1) config_error("dgp.gamma_rho must be in (-1, 1)");
  if (!(d.s_max > d.s_min)) config_error("dgp.s_range must be increasing");
  if (d.covariate_noise_sd < 0 || d.location_jitter_sd < 0)
    config_error("dgp noise sds must be >= 0");
}

void validate_config(const ExperimentConfig& c) {
  if (c.n_seeds < 1) config_error("n_seeds must be >= 1");
  if (c.lambda1 < 0) config_error("lambda1 must be >= 0");
  if (c.lambda2 < 0) config_error("lambda2 must be >= 0");
  if (c.rho <= 0) config_error("rho must be > 0");
  if (c.batch < 1) config_error("batch must be >= 1");
  if (!(c.splits.train_frac > 0 && c.splits.train_frac < 1))
    config_error("splits.train_frac must be in (0, 1)");
  if (c.splits.val_frac < 0 || c.splits.train_frac + c.splits.val_frac > 1)
    config_error("splits: train_frac + val_frac must be <= 1");
  if (c.rank.k < 0) config_error("rank.k must be >= 0");
  if (!(c.rank.tau_var > 0 && c.rank.tau_var <= 1))
    config_error("rank.tau_var must be in (0, 1]");
  if (c.schedule.max_iters < 1) config_error("schedule.max_iters must be >= 1");
  if (c.schedule.min_outer < 0) config_error("schedule.min_outer must be >= 0");
  if (c.schedule.eps_abs < 0 || c.schedule.eps_rel < 0)
    config_error("schedule tolerances must be >= 0");
  if (c.schedule.n_phi < 1) config_error("schedule.n_phi must be >= 1");
  if (c.schedule.n_freeze < 0) config_error("schedule.n_freeze must be >= 0");
  if (c.irl1.eps <= 0 || c.irl1.tol <= 0 || c.irl1.max_iters < 1)
    config_error("irl1 parameters out of range");
  if (c.trend.hidden < 1) config_error("trend.hidden must be >= 1");
  if (c.trend.lr <= 0) config_error("trend.lr must be > 0");
  if (c.trend.warmup_epochs < 0) config_error("trend.warmup_epochs must be >= 0");
  if (c.trend.patience < 1) config_error("trend.patience must be >= 1");
  if (c.bce_step <= 0) config_error("bce_step must be > 0");
  if (c.bce_inner < 1) config_error("bce_inner must be >= 1");
  if (c.tau && *c.tau < 0) config_error("tau must be >= 0");
  if (c.tune.n_trials < 0) config_error("tune.n_trials must be >= 0");
  if (c.tune.lo1 <= 0 || c.tune.lo2 <= 0 || c.tune.hi1 < c.tune.lo1 || c.tune.hi2 < c.tune.lo2)
    config_error("tune ranges must satisfy 0 < lo <= hi");
  if (c.sweep.points < 2) config_error("sweep.points must be >= 2");
  if (c.sweep.lo <= 0 || c.sweep.hi < c.sweep.lo)
    config_error("sweep range must satisfy 0 < lo <= hi");
  if (c.holdout_frac < 0 || c.holdout_frac >= 1)
    config_error("holdout_frac must be in [0, 1)");
  if (!c.dgp && !c.dataset) config_error("one of 'dgp' or 'dataset' is required");
  if (c.dgp && c.dataset) config_error("'dgp' and 'dataset' are mutually exclusive");
  if (c.dataset && c.dataset->y.empty()) config_error("dataset.y path is required");
}

}  // namespace

MatrixXd read_matrix(const std::string& path) {
  MatrixXd m = read_matrix_any(path);
  check_finite(m, path);
  return m;
}

void write_matrix_csv(const std::string& path, const MatrixXd& m) {
  std::ofstream out(path, std::ios::binary);  // binary: keep LF line endings
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    if (j) out << ',';
    out << 'c' << j;
  }
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_matrix_binary(const std::string& path, const MatrixXd& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, 8);
  const std::uint32_t rows = static_cast<std::uint32_t>(m.rows());
  const std::uint32_t cols = static_cast<std::uint32_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

MaskedMatrix read_matrix_masked(const std::string& path) {
  MatrixXd m = read_matrix_any(path);
  MaskedMatrix out;
  out.values = m;
  out.mask.resize(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      if (std::isnan(v)) {
        out.mask(i, j) = false;
        out.values(i, j) = 0.0;
      } else if (std::isinf(v)) {
        throw std::runtime_error(path + ": infinite value is not a valid missing marker");
      } else {
        out.mask(i, j) = true;
      }
    }
  }
  return out;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    config_error(std::string("invalid json: ") + e.what());
  }
  if (!j.is_object()) config_error("top level must be an object");

  warn_unknown_keys(j,
                    {"seed", "n_seeds", "link", "first_stage", "standardize", "dgp", "dataset",
                     "splits", "trend", "rank", "lambda1", "lambda2", "rho", "batch",
                     "bce_variant", "bce_step", "bce_inner", "schedule", "irl1", "tau", "tune",
                     "sweep", "holdout_frac"},
                    "");

  ExperimentConfig c;
  get_to_if(j, "seed", c.seed);
  get_to_if(j, "n_seeds", c.n_seeds);
  if (j.contains("link")) c.link = parse_link(j.at("link").get<std::string>());
  if (j.contains("first_stage"))
    c.first_stage = parse_first_stage(j.at("first_stage").get<std::string>());
  get_to_if(j, "standardize", c.standardize);

  if (j.contains("dgp")) {
    DgpConfig d;
    parse_dgp(j.at("dgp"), d);
    c.dgp = d;
  }
  if (j.contains("dataset")) {
    const json& jd = j.at("dataset");
    warn_unknown_keys(jd, {"y", "x", "locations", "predictions"}, "dataset.");
    DatasetPaths p;
    get_to_if(jd, "y", p.y);
    get_to_if(jd, "x", p.x);
    get_to_if(jd, "locations", p.locations);
    get_to_if(jd, "predictions", p.predictions);
    c.dataset = p;
  }
  if (j.contains("splits")) {
    const json& js = j.at("splits");
    warn_unknown_keys(js, {"train_frac", "val_frac"}, "splits.");
    get_to_if(js, "train_frac", c.splits.train_frac);
    get_to_if(js, "val_frac", c.splits.val_frac);
  }
  if (j.contains("trend")) {
    const json& jt = j.at("trend");
    warn_unknown_keys(jt, {"kind", "hidden", "lr", "warmup_epochs", "patience"}, "trend.");
    if (jt.contains("kind")) c.trend.kind = parse_trend_kind(jt.at("kind").get<std::string>());
    get_to_if(jt, "hidden", c.trend.hidden);
    get_to_if(jt, "lr", c.trend.lr);
    get_to_if(jt, "warmup_epochs", c.trend.warmup_epochs);
    get_to_if(jt, "patience", c.trend.patience);
  }
  if (j.contains("rank")) {
    const json& jr = j.at("rank");
    warn_unknown_keys(jr, {"policy", "k", "tau_var"}, "rank.");
    if (jr.contains("policy")) c.rank.policy = parse_rank_policy(jr.at("policy").get<std::string>());
    get_to_if(jr, "k", c.rank.k);
    get_to_if(jr, "tau_var", c.rank.tau_var);
  }
  get_to_if(j, "lambda1", c.lambda1);
  get_to_if(j, "lambda2", c.lambda2);
  get_to_if(j, "rho", c.rho);
  get_to_if(j, "batch", c.batch);
  if (j.contains("bce_variant"))
    c.bce_variant = parse_bce_variant(j.at("bce_variant").get<std::string>());
  get_to_if(j, "bce_step", c.bce_step);
  get_to_if(j, "bce_inner", c.bce_inner);
  if (j.contains("schedule")) {
    const json& js = j.at("schedule");
    warn_unknown_keys(js, {"max_iters", "min_outer", "eps_abs", "eps_rel", "n_phi", "n_freeze"},
                      "schedule.");
    get_to_if(js, "max_iters", c.schedule.max_iters);
    get_to_if(js, "min_outer", c.schedule.min_outer);
    get_to_if(js, "eps_abs", c.schedule.eps_abs);
    get_to_if(js, "eps_rel", c.schedule.eps_rel);
    get_to_if(js, "n_phi", c.schedule.n_phi);
    get_to_if(js, "n_freeze", c.schedule.n_freeze);
  }
  if (j.contains("irl1")) {
    const json& ji = j.at("irl1");
    warn_unknown_keys(ji, {"alpha_step", "eps", "tol", "max_iters"}, "irl1.");
    get_to_if(ji, "alpha_step", c.irl1.alpha_step);
    get_to_if(ji, "eps", c.irl1.eps);
    get_to_if(ji, "tol", c.irl1.tol);
    get_to_if(ji, "max_iters", c.irl1.max_iters);
  }
  if (j.contains("tau") && !j.at("tau").is_null()) c.tau = j.at("tau").get<double>();
  if (j.contains("tune")) {
    const json& jt = j.at("tune");
    warn_unknown_keys(jt, {"lo1", "hi1", "lo2", "hi2", "lo", "hi", "n_trials", "objective", "tied"},
                      "tune.");
    if (jt.contains("lo")) {  // shorthand for a shared range
      c.tune.lo1 = c.tune.lo2 = jt.at("lo").get<double>();
    }
    if (jt.contains("hi")) {
      c.tune.hi1 = c.tune.hi2 = jt.at("hi").get<double>();
    }
    get_to_if(jt, "lo1", c.tune.lo1);
    get_to_if(jt, "hi1", c.tune.hi1);
    get_to_if(jt, "lo2", c.tune.lo2);
    get_to_if(jt, "hi2", c.tune.hi2);
    get_to_if(jt, "n_trials", c.tune.n_trials);
    if (jt.contains("objective"))
      c.tune.objective = parse_objective(jt.at("objective").get<std::string>());
    get_to_if(jt, "tied", c.tune.tied);
  }
  if (j.contains("sweep")) {
    const json& js = j.at("sweep");
    warn_unknown_keys(js, {"lo", "hi", "points", "include_zero"}, "sweep.");
    get_to_if(js, "lo", c.sweep.lo);
    get_to_if(js, "hi", c.sweep.hi);
    get_to_if(js, "points", c.sweep.points);
    get_to_if(js, "include_zero", c.sweep.include_zero);
  }
  get_to_if(j, "holdout_frac", c.holdout_frac);

  validate_config(c);
  return c;
}

ExperimentConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["n_seeds"] = c.n_seeds;
  j["link"] = link_name(c.link);
  j["first_stage"] = first_stage_name(c.first_stage);
  j["standardize"] = c.standardize;
  if (c.dgp) {
    const DgpConfig& d = *c.dgp;
    j["dgp"] = {{"n_locations", d.n_locations},
                {"n_times", d.n_times},
                {"beta", d.beta},
                {"intercept", d.intercept},
                {"noise_sd", d.noise_sd},
                {"alpha_rho", d.alpha_rho},
                {"alpha_sd", d.alpha_sd},
                {"gamma_rho", d.gamma_rho},
                {"global_drift", d.global_drift},
                {"s_range", std::vector<double>{d.s_min, d.s_max}},
                {"covariate_noise_sd", d.covariate_noise_sd},
                {"location_jitter_sd", d.location_jitter_sd}};
  }
  if (c.dataset) {
    j["dataset"] = {{"y", c.dataset->y},
                    {"x", c.dataset->x},
                    {"locations", c.dataset->locations},
                    {"predictions", c.dataset->predictions}};
  }
  j["splits"] = {{"train_frac", c.splits.train_frac}, {"val_frac", c.splits.val_frac}};
  j["trend"] = {{"kind", trend_name(c.trend.kind)},
                {"hidden", c.trend.hidden},
                {"lr", c.trend.lr},
                {"warmup_epochs", c.trend.warmup_epochs},
                {"patience", c.trend.patience}};
  j["rank"] = {{"policy", rank_policy_name(c.rank.policy)},
               {"k", c.rank.k},
               {"tau_var", c.rank.tau_var}};
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["rho"] = c.rho;
  j["batch"] = c.batch;
  j["bce_variant"] = bce_name(c.bce_variant);
  j["bce_step"] = c.bce_step;
  j["bce_inner"] = c.bce_inner;
  j["schedule"] = {{"max_iters", c.schedule.max_iters}, {"min_outer", c.schedule.min_outer},
                   {"eps_abs", c.schedule.eps_abs},     {"eps_rel", c.schedule.eps_rel},
                   {"n_phi", c.schedule.n_phi},         {"n_freeze", c.schedule.n_freeze}};
  j["irl1"] = {{"alpha_step", c.irl1.alpha_step},
               {"eps", c.irl1.eps},
               {"tol", c.irl1.tol},
               {"max_iters", c.irl1.max_iters}};
  if (c.tau) j["tau"] = *c.tau;
  j["tune"] = {{"lo1", c.tune.lo1},           {"hi1", c.tune.hi1},
               {"lo2", c.tune.lo2},           {"hi2", c.tune.hi2},
               {"n_trials", c.tune.n_trials}, {"objective", objective_name(c.tune.objective)},
               {"tied", c.tune.tied}};
  j["sweep"] = {{"lo", c.sweep.lo},
                {"hi", c.sweep.hi},
                {"points", c.sweep.points},
                {"include_zero", c.sweep.include_zero}};
  j["holdout_frac"] = c.holdout_frac;
  return j.dump(2) + "\n";
}

void write_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << config_to_json(cfg);
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a(config_to_json(cfg)); }

void write_results_csv(const std::string& path, const std::vector<ResultsRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "run_id,metric,value\n";
  for (const auto& r : records)
    for (const auto& [name, value] : r.metrics)
      out << r.run_id << ',' << name << ',' << format_double(value) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

// Timing stays off disk: output files must be identical across reruns of the
// same config+seed, so wall_seconds is reported on stderr by the CLI instead.
void write_results_json(const std::string& path, const std::vector<ResultsRecord>& records) {
  json arr = json::array();
  for (const auto& r : records) {
    json jr;
    jr["run_id"] = r.run_id;
    jr["config_hash"] = r.config_hash;
    jr["metrics"] = r.metrics;
    arr.push_back(jr);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << arr.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace spadapt
