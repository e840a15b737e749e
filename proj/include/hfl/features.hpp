#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <vector>

#include "hfl/common.hpp"

namespace hfl {

/// r symmetric d x d matrices defining the quadratic features x -> x^T A_k x.
/// Immutable once built.
class FeatureSet {
 public:
  FeatureSet() = default;
  FeatureSet(int d, std::vector<Eigen::MatrixXd> matrices);

  int d() const { return d_; }
  int r() const { return static_cast<int>(matrices_.size()); }
  const Eigen::MatrixXd& matrix(int k) const { return matrices_.at(k); }
  const std::vector<Eigen::MatrixXd>& matrices() const { return matrices_; }

  /// sqrt(d) * max_k ||A_k||_op
  double kappa1() const { return kappa1_; }

  /// True when every A_k is diagonal; diagonals() is then d x r.
  bool is_diagonal() const { return diagonal_; }
  const Eigen::MatrixXd& diagonals() const { return diag_; }

  /// G_kl = E[(x^T A_k x)(x^T A_l x)]
  Eigen::MatrixXd gram() const;

  /// Throws InvariantFailure unless every A_k is traceless and the Gram is
  /// the identity within tol.
  void check_invariants(double tol = 1e-9) const;

  FeatureSet permuted(const std::vector<int>& order) const;

 private:
  int d_ = 0;
  std::vector<Eigen::MatrixXd> matrices_;
  Eigen::MatrixXd diag_;
  bool diagonal_ = false;
  double kappa1_ = 0.0;
};

/// The three block sign-pattern diagonal features, d divisible by 4.
FeatureSet make_sign_features(int d);

/// Trace removal followed by Gram-Schmidt in the feature inner product
/// 2d/(d+2) <A,B>_F. Throws RankDeficiency on a pivot below 1e-10
/// (relative to the largest input norm).
FeatureSet orthonormalize(const std::vector<Eigen::MatrixXd>& raw);

/// n x r matrix of p(x) values, one row per sample.
Eigen::MatrixXd eval_features(const FeatureSet& F, const Eigen::MatrixXd& X);

nlohmann::json to_json(const FeatureSet& F);
FeatureSet feature_set_from_json(const nlohmann::json& j);

}  // namespace hfl
