#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spadapt/config.hpp"

namespace spadapt {

using Eigen::MatrixXd;

// Matrix container formats
// ------------------------
// CSV: header "c0,c1,...,c{cols-1}", then one row per line. Values are written
// with shortest round-trip formatting, so write -> read -> write is
// byte-identical.
// Binary: magic "SPADMTRX", rows and cols as little-endian u32, then rows*cols
// doubles in row-major order.

// Reads either format; binary is detected by the magic bytes. Rejects
// non-finite values.
MatrixXd read_matrix(const std::string& path);

void write_matrix_csv(const std::string& path, const MatrixXd& m);
void write_matrix_binary(const std::string& path, const MatrixXd& m);

// Missing entries are NaN cells (CSV) or NaN payload values (binary).
// mask(i,j) is true where a value is present; missing cells read as 0.
struct MaskedMatrix {
  MatrixXd values;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
};
MaskedMatrix read_matrix_masked(const std::string& path);

// Experiment configuration (JSON)
// -------------------------------
// Unknown keys warn on stderr and are ignored; recognized keys are validated.
ExperimentConfig read_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& cfg);
void write_config(const std::string& path, const ExperimentConfig& cfg);
std::uint64_t config_hash(const ExperimentConfig& cfg);

struct ResultsRecord {
  std::string run_id;
  std::map<std::string, double> metrics;
  std::uint64_t config_hash = 0;
  double wall_seconds = 0.0;
};

// Long format: run_id,metric,value (one row per metric).
void write_results_csv(const std::string& path, const std::vector<ResultsRecord>& records);
void write_results_json(const std::string& path, const std::vector<ResultsRecord>& records);

}  // namespace spadapt
