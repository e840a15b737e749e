#pragma once

#include <Eigen/Dense>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "hfl/common.hpp"
#include "hfl/training.hpp"

namespace hfl {

/// Fully resolved experiment configuration. Defaults are desk scale.
struct ExperimentConfig {
  std::string experiment = "compare";  // compare | transfer | reconstruct | universality | verify
  std::vector<int> d_grid = {16};
  int r = 3;
  int p = 4;
  int p_pretrain = 2;
  std::vector<int> p_transfer = {4, 6, 8};
  std::vector<long> n_grid = {256, 1024, 4096, 16384};  // compare: total sample budget
  long n1 = 16384;                                       // transfer: pretraining size
  std::vector<long> n2_grid = {1024, 4096, 16384};
  std::vector<long> n1_grid;  // reconstruct; empty means {d^2, d^3, d^4}
  int m1 = 2048;
  int m2 = 4096;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  int n_test = 10000;
  long n_cal = 1L << 20;

  long T = 100000000;
  std::string backend = "spectral";
  double lambda2 = -1.0;
  double eta_quantile = 1.0;
  int tile_rows = kDefaultTileRows;

  long n_univ = 200000;
  int L = 64;

  std::string hessian = "analytic";  // analytic | monte_carlo
  std::vector<int> feature_order;    // optional permutation of the feature list

  bool timing = true;
  std::string inject_fault;  // verify only
  int jobs = 1;
  std::string out_dir = "out";

  static ExperimentConfig defaults_for(const std::string& experiment);
  void validate() const;
  TrainConfig train_config() const;
  /// Configuration without execution-only keys (out_dir, jobs).
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j, const std::string& experiment);
  std::string hash() const;
};

/// Reads a YAML (or JSON) document over the defaults for the experiment kind.
ExperimentConfig load_config(const std::string& path, const std::string& experiment);
/// Overlays a YAML node given as text.
ExperimentConfig apply_yaml(const ExperimentConfig& base, const std::string& yaml_text);
std::string config_to_yaml(const ExperimentConfig& cfg);

struct ResultRow {
  std::string run_id;
  std::string experiment;
  std::string method;  // alg1 | rf | transfer
  int d = 0, r = 0, p = 0;
  long n1 = 0, n2 = 0;
  int m1 = 0, m2 = 0;
  std::uint64_t seed = 0;
  double test_mae = 0.0;
  double test_mse = 0.0;
  double mae_stderr = 0.0;
  double wall_seconds = 0.0;
};

struct ReconRow {
  int feature_idx = 0;
  double true_value = 0.0;
  double recon_value = 0.0;
  long n1 = 0;
  int m2 = 0;
  std::uint64_t seed = 0;
};

struct ReconSummary {
  long n1 = 0;
  std::uint64_t seed = 0;
  Eigen::VectorXd correlations;
};

struct UniversalityRow {
  int d = 0, r = 0;
  long n = 0;
  int L = 0;
  std::uint64_t seed = 0;
  double mean_abs_mean = 0.0;
  double max_cov_dev = 0.0;
  double sliced_w1 = 0.0;
  double gaussian_floor = 0.0;
};

/// One independently resumable piece of an experiment.
struct RunOutput {
  std::vector<ResultRow> results;
  std::vector<ReconRow> recon;
  std::vector<ReconSummary> recon_summary;
  std::vector<UniversalityRow> universality;
  std::vector<std::pair<std::string, std::vector<TraceRow>>> traces;
};

struct RunUnit {
  std::string run_id;
  std::function<RunOutput()> run;
};

std::vector<RunUnit> plan_runs(const ExperimentConfig& cfg);

std::vector<ResultRow> run_compare(const ExperimentConfig& cfg);
std::vector<ResultRow> run_transfer(const ExperimentConfig& cfg);
RunOutput run_reconstruct(const ExperimentConfig& cfg);
std::vector<UniversalityRow> run_universality(const ExperimentConfig& cfg);

struct VerifyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};
std::vector<VerifyResult> run_verify(const ExperimentConfig& cfg);

struct RunOptions {
  bool resume = false;
  bool quiet = false;
};

/// Runs an experiment into cfg.out_dir: per-run files under runs/, merged
/// CSVs and manifest.json. Throws ConfigError when the directory holds
/// results of a different configuration.
void execute_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

std::string results_csv_header();
std::string format_result_row(const ResultRow& row, const std::string& config_hash);

}  // namespace hfl
