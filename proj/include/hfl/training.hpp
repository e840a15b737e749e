#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hfl/common.hpp"
#include "hfl/network.hpp"
#include "hfl/targets.hpp"

namespace hfl {

struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::string target_id;
  std::uint64_t seed = 0;

  int n() const { return static_cast<int>(X.rows()); }
};

Dataset make_dataset(const Target& f, int n, std::uint64_t seed);
/// Same inputs, labels recomputed under another target.
Dataset relabel(const Dataset& D, const Target& f);

enum class Stage2Backend { Iterative, Spectral };

struct TrainConfig {
  // Stage 1 runs at eta = 1 with lambda1 = 1/eta1 and is rescaled once eta is known.
  double eta = 0.0;  // <= 0: calibrate on D2
  double eta_quantile = 1.0;
  double eta_ceiling = 0.9;

  double lambda2 = -1.0;  // < 0: select from the grid on a held-out split of D2
  std::vector<double> lambda2_grid = {1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
  double validation_fraction = 0.2;
  double eta2 = 0.0;  // <= 0: 1 / (lambda2 + lambda_max(G))
  long T = 100000000;
  Stage2Backend backend = Stage2Backend::Spectral;
  double early_stop_rel = 1e-10;
  int divergence_window = 10;
  long trace_every = 1;

  double bias_range = 3.0;
  int tile_rows = kDefaultTileRows;
  bool warn_out_of_zone = true;
};

struct StageOneState {
  NetworkParams theta0;
  Dataset D1;
  Eigen::MatrixXd W1_unit;  // W^(1) at eta = 1
  double eta1_unit = 0.0;   // eta1 / eta = m1 / (2 epsilon m2)
  double out_of_zone_fraction = 0.0;
  int tile_rows = kDefaultTileRows;

  Eigen::MatrixXd W1(double eta) const { return eta * W1_unit; }
};

/// One full-batch gradient step on W of the half squared loss with weight
/// decay lambda1 = 1/eta1, using the exact sigma1'.
StageOneState stage1_step(const NetworkParams& theta0, const Dataset& D1, const TrainConfig& cfg);

/// h1(x') = (1/(n1 m2)) sum_i y_i <h0(x_i), h0(x')> h0(x_i), one row per x'.
Eigen::MatrixXd compute_h1(const StageOneState& state, const Eigen::MatrixXd& Xp);
Eigen::VectorXd compute_h1(const StageOneState& state, const Eigen::VectorXd& xp);

/// b_i ~ Unif[-range, range]
Eigen::VectorXd reinit_bias(int m1, std::uint64_t seed, double range = 3.0);

/// Fixed Stage-2 feature map psi(x)_j = sigma1(eta * <u_j, h0(x)> + b_j) / m1.
/// The layer-wise method uses u_j = w_j^(1) at unit eta; the random-feature baseline
/// uses u_j = a_j w_j^(0) / epsilon.
struct FeatureMap {
  Eigen::MatrixXd V;
  ActivationSpec spec;
  Eigen::MatrixXd U;  // m1 x m2
  Eigen::VectorXd b;
  double eta = 1.0;
  int tile_rows = kDefaultTileRows;

  int m1() const { return static_cast<int>(U.rows()); }
  Eigen::MatrixXd unit_preactivations(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd psi(const Eigen::MatrixXd& X) const;
};

FeatureMap alg1_feature_map(const StageOneState& state, const Eigen::VectorXd& b);
FeatureMap rf_feature_map(const NetworkParams& theta0, const Eigen::VectorXd& b);

/// eta such that the q-quantile of |eta * unit preactivation| over X equals
/// the ceiling. Throws DegenerateScale when that quantile is below 1e-30.
double calibrate_eta(const FeatureMap& map, const Eigen::MatrixXd& X, double q = 1.0, double ceiling = 0.9);

struct TraceRow {
  long step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double a_norm = 0.0;
};

struct RidgeResult {
  Eigen::VectorXd a;
  double lambda = 0.0;
  double lambda_rel = 0.0;  // lambda / tr(G) when selected from the grid
  double step_size = 0.0;
  double lambda_max = 0.0;
  long steps = 0;
  std::vector<TraceRow> trace;
};

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
double power_method_lambda_max(const Eigen::MatrixXd& G, int max_iter = 1000, double tol = 1e-10);

/// T steps of gradient descent from a = 0 on
/// J(a) = (1/2n)||Psi a - y||^2 + (lambda/2)||a||^2.
RidgeResult ridge_gd(const Eigen::MatrixXd& Psi, const Eigen::VectorXd& y, double lambda, const TrainConfig& cfg);

/// ridge_gd with lambda chosen on a held-out split when cfg.lambda2 < 0,
/// then refit on all rows.
RidgeResult fit_stage2(const Eigen::MatrixXd& Psi, const Eigen::VectorXd& y, const TrainConfig& cfg);

struct TrainedModel {
  std::string method;
  FeatureMap features;
  Eigen::VectorXd a;
  double lambda2 = 0.0;
  double lambda2_rel = 0.0;
  long steps = 0;
  std::vector<TraceRow> trace;

  Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
  /// Equivalent three-layer network (forward() reproduces predict()).
  NetworkParams as_network(const NetworkParams& theta0) const;
};

/// Calibrates eta on D2 (unless cfg.eta > 0), relabels D2 with target2 and
/// trains the outer layer.
TrainedModel stage2_train(const StageOneState& state, const Eigen::VectorXd& b, const Dataset& D2,
                          const TrainConfig& cfg, const Target& target2);

/// Same procedure with the untrained inner representation.
TrainedModel rf_baseline_train(const NetworkParams& theta0, const Eigen::VectorXd& b, const Dataset& D,
                               const TrainConfig& cfg);

struct TestError {
  double mae = 0.0;
  double mse = 0.0;
  double mae_se = 0.0;
  double mse_se = 0.0;
  std::size_t n = 0;
};

TestError test_error(const TrainedModel& model, const Target& target, int n_test, std::uint64_t seed);

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace);

void save_model(const TrainedModel& model, const NetworkParams& theta0, const std::string& path);

}  // namespace hfl
