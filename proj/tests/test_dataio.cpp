#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "spadapt/dataio.hpp"

using namespace spadapt;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  const fs::path d = fs::temp_directory_path() / "spadapt_dataio_test";
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

MatrixXd random_matrix(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  MatrixXd m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = g(rng);
  return m;
}

const char* kMinimalSynthetic = R"({"dgp": {"n_locations": 8, "n_times": 16}})";

}  // namespace

TEST_CASE("read_matrix accepts any header row and parses the payload") {
  const fs::path p = tmp_dir() / "foreign_header.csv";
  spit(p, "a,b\n1,2\n3,4\n");
  const MatrixXd m = read_matrix(p.string());
  REQUIRE(m.rows() == 2);
  REQUIRE(m.cols() == 2);
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 2.0);
  CHECK(m(1, 0) == 3.0);
  CHECK(m(1, 1) == 4.0);
}

TEST_CASE("csv write -> read -> write is byte-identical") {
  const MatrixXd m = random_matrix(7, 3, 91);
  const fs::path p1 = tmp_dir() / "rt1.csv";
  const fs::path p2 = tmp_dir() / "rt2.csv";
  write_matrix_csv(p1.string(), m);
  const MatrixXd back = read_matrix(p1.string());
  CHECK(back == m);  // shortest round-trip formatting is exact
  write_matrix_csv(p2.string(), back);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("binary write -> read round-trips and is detected by magic") {
  const MatrixXd m = random_matrix(5, 9, 17);
  const fs::path p = tmp_dir() / "rt.bin";
  write_matrix_binary(p.string(), m);
  CHECK(read_matrix(p.string()) == m);
  const std::string bytes = slurp(p);
  CHECK(bytes.substr(0, 8) == "SPADMTRX");
  CHECK(bytes.size() == 16 + 5 * 9 * 8);
}

TEST_CASE("truncated binary payload is a hard error") {
  // Declares 3x2 but carries only 5 doubles.
  std::string bytes = "SPADMTRX";
  const std::uint32_t rows = 3, cols = 2;
  bytes.append(reinterpret_cast<const char*>(&rows), 4);
  bytes.append(reinterpret_cast<const char*>(&cols), 4);
  for (int i = 0; i < 5; ++i) {
    const double v = i;
    bytes.append(reinterpret_cast<const char*>(&v), 8);
  }
  const fs::path p = tmp_dir() / "truncated.bin";
  spit(p, bytes);
  CHECK_THROWS_WITH_AS(read_matrix(p.string()), doctest::Contains("payload shorter"),
                       std::runtime_error);

  const double extra = 99.0;
  bytes.append(reinterpret_cast<const char*>(&extra), 8);  // now 6 doubles: ok
  bytes.append(reinterpret_cast<const char*>(&extra), 8);  // 7: too long
  spit(p, bytes);
  CHECK_THROWS_WITH_AS(read_matrix(p.string()), doctest::Contains("longer"), std::runtime_error);
}

TEST_CASE("malformed csv cells and ragged rows are rejected") {
  const fs::path p = tmp_dir() / "bad.csv";
  spit(p, "c0,c1\n1,oops\n");
  CHECK_THROWS_WITH_AS(read_matrix(p.string()), doctest::Contains("bad numeric"),
                       std::runtime_error);
  spit(p, "c0,c1\n1,2\n3\n");
  CHECK_THROWS_WITH_AS(read_matrix(p.string()), doctest::Contains("fields"), std::runtime_error);
}

TEST_CASE("read_matrix rejects non-finite values; masked read maps NaN") {
  const fs::path p = tmp_dir() / "missing.csv";
  spit(p, "c0,c1\n1,nan\n3,4\n");
  CHECK_THROWS_WITH_AS(read_matrix(p.string()), doctest::Contains("non-finite"),
                       std::runtime_error);
  const MaskedMatrix mm = read_matrix_masked(p.string());
  CHECK(mm.mask(0, 0));
  CHECK_FALSE(mm.mask(0, 1));
  CHECK(mm.values(0, 1) == 0.0);
  CHECK(mm.values(1, 1) == 4.0);

  spit(p, "c0\ninf\n");
  CHECK_THROWS(read_matrix_masked(p.string()));
}

TEST_CASE("config defaults match the benchmark table") {
  const ExperimentConfig c = parse_config(kMinimalSynthetic);
  CHECK(c.rho == 2.0);  // generic default; bundled configs override per table
  CHECK(c.rank.k == 1);
  CHECK(c.rank.tau_var == 0.9);
  CHECK(c.schedule.max_iters == 3000);
  CHECK(c.schedule.min_outer == 20);
  CHECK(c.schedule.n_phi == 5);
  CHECK(c.schedule.n_freeze == 200);
  CHECK(c.batch == 64);
  CHECK_FALSE(c.tau.has_value());  // estimator offset defaults to lambda1 downstream
}

TEST_CASE("bundled synthetic config pins the published hyperparameters") {
  const ExperimentConfig c = read_config(std::string(SPADAPT_SOURCE_DIR) +
                                         "/configs/synthetic1d.json");
  CHECK(c.rho == 1.0);
  CHECK(c.rank.k == 1);
  CHECK(c.schedule.max_iters == 3000);
  CHECK(c.n_seeds == 30);
  CHECK(c.batch == 64);
  REQUIRE(c.dgp.has_value());
  CHECK(c.dgp->n_locations == 512);
  CHECK(c.dgp->n_times == 1024);
  CHECK(c.splits.train_frac == 0.70);
  CHECK(c.splits.val_frac == 0.15);
  REQUIRE(c.tau.has_value());
  CHECK(*c.tau == 0.0);
}

TEST_CASE("config validation rejects out-of-range hyperparameters") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"lambda1": -1, "dgp": {}})"),
                       doctest::Contains("lambda1"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"rho": 0, "dgp": {}})"), doctest::Contains("rho"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"tau": -0.5, "dgp": {}})"), doctest::Contains("tau"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config(R"({"rank": {"tau_var": 1.5}, "dgp": {}})"),
                       doctest::Contains("tau_var"), std::runtime_error);
  CHECK_THROWS_WITH_AS(parse_config("{}"), doctest::Contains("dgp"), std::runtime_error);
  CHECK_THROWS(parse_config("not json"));
}

TEST_CASE("unknown keys warn but do not fail") {
  const ExperimentConfig c =
      parse_config(R"({"dgp": {"n_locations": 8, "n_times": 16}, "mystery_knob": 3})");
  CHECK(c.dgp->n_locations == 8);
}

TEST_CASE("config json round-trips through parse and hashes stably") {
  ExperimentConfig c = parse_config(kMinimalSynthetic);
  c.lambda1 = 12.5;
  c.tau = 0.0;
  c.tune.n_trials = 7;
  const std::string text = config_to_json(c);
  const ExperimentConfig back = parse_config(text);
  CHECK(config_to_json(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  c.lambda1 = 13.0;
  CHECK(config_hash(back) != config_hash(c));

  const fs::path p = tmp_dir() / "cfg.json";
  write_config(p.string(), back);
  const ExperimentConfig re = read_config(p.string());
  CHECK(config_to_json(re) == text);
}

TEST_CASE("results writers are deterministic and keep timing off disk") {
  ResultsRecord r1;
  r1.run_id = "seed1";
  r1.metrics = {{"rmse", 1.25}, {"align", 0.995}};
  r1.config_hash = 42;
  r1.wall_seconds = 3.14;  // varies run to run; must not reach the files
  ResultsRecord r2 = r1;
  r2.run_id = "seed2";
  r2.wall_seconds = 2.71;

  const fs::path pc = tmp_dir() / "res.csv";
  const fs::path pj = tmp_dir() / "res.json";
  write_results_csv(pc.string(), {r1, r2});
  write_results_json(pj.string(), {r1, r2});
  const std::string csv = slurp(pc), js = slurp(pj);
  CHECK(csv == "run_id,metric,value\nseed1,align,0.995\nseed1,rmse,1.25\n"
               "seed2,align,0.995\nseed2,rmse,1.25\n");
  CHECK(js.find("wall") == std::string::npos);
  CHECK(js.find("seed2") != std::string::npos);

  r1.wall_seconds = 99.0;  // timing changes; bytes must not
  write_results_csv(pc.string(), {r1, r2});
  write_results_json(pj.string(), {r1, r2});
  CHECK(slurp(pc) == csv);
  CHECK(slurp(pj) == js);
}
