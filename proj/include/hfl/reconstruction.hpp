#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hfl/common.hpp"
#include "hfl/features.hpp"
#include "hfl/network.hpp"
#include "hfl/targets.hpp"
#include "hfl/training.hpp"

namespace hfl {

struct KernelEstimate {
  double empirical = 0.0;
  double analytic = 0.0;
  double deviation = 0.0;  // |empirical - analytic|
};

/// K0(x,x') = sum_i c_i^2 Q_i(<x,x'>) / B(d,i)
double analytic_kernel(double t, const ActivationSpec& spec);

/// Empirical (1/m2) <sigma2(Vx), sigma2(Vx')> against the analytic limit.
KernelEstimate kernel_pair(const Eigen::MatrixXd& V, const Eigen::VectorXd& x, const Eigen::VectorXd& xp,
                           const ActivationSpec& spec);

/// Row-paired deviations |K_m2(x_i, x'_i) - K0(x_i, x'_i)|.
Eigen::VectorXd kernel_deviations(const Eigen::MatrixXd& V, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xp,
                                  const ActivationSpec& spec);

struct ReconMatrix {
  Eigen::MatrixXd Bstar;  // r x m2
  Eigen::MatrixXd P;      // m2 x r, P(j,k) = v_j^T A_k v_j
  Eigen::MatrixXd H;
  double scale = 0.0;  // B(d,2)^2 d (d-1) / c2^2
  double op_norm = 0.0;
  int d = 0;
  int m2 = 0;
  int r() const { return static_cast<int>(Bstar.rows()); }
};

/// B* = scale (1/m2) H^{-1} P^T. Throws SingularHessian when H is not
/// safely invertible and ConfigError when c2 = 0.
ReconMatrix build_Bstar(const FeatureSet& F, const Eigen::MatrixXd& H, const Eigen::MatrixXd& V,
                        const ActivationSpec& spec);

/// Rows B* h1(x_i), computed without forming h1: the Stage-1 sum is first
/// contracted against B*, costing O(r n1 m2) instead of O(n' n1 m2).
Eigen::MatrixXd reconstruct_features(const ReconMatrix& B, const StageOneState& state, const Eigen::MatrixXd& X);

/// Direct evaluation B* compute_h1(X); used to cross-check the fast path.
Eigen::MatrixXd reconstruct_features_naive(const ReconMatrix& B, const StageOneState& state, const Eigen::MatrixXd& X);

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Affinely rescales each column of recon to the mean and standard
/// deviation of the matching column of truth.
Eigen::MatrixXd variance_match(const Eigen::MatrixXd& recon, const Eigen::MatrixXd& truth);

/// Per-feature correlation after variance matching.
Eigen::VectorXd feature_correlations(const Eigen::MatrixXd& recon, const Eigen::MatrixXd& truth);

struct MatrixEstimate {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd std_error;
  std::size_t n = 0;
};

/// Monte-Carlo estimate of E[f(x) <W, xx^T - I> (xx^T - I)].
MatrixEstimate t_operator_mc(const Target& f, const Eigen::MatrixXd& W, std::size_t n, std::uint64_t seed);

/// sum_k <W, A_k>/||A_k||_F^2 sum_j H_kj A_j
Eigen::MatrixXd t_star(const FeatureSet& F, const Eigen::MatrixXd& H, const Eigen::MatrixXd& W);

/// ||T_hat(W) - T*(W)||_F with the Monte-Carlo variance subtracted from the
/// squared norm (clamped at zero).
double corrected_t_residual(const MatrixEstimate& That, const Eigen::MatrixXd& Tstar);

}  // namespace hfl
