#include "hfl/features.hpp"

#include <algorithm>
#include <cmath>

#include "hfl/sphere_math.hpp"

namespace hfl {

FeatureSet::FeatureSet(int d, std::vector<Eigen::MatrixXd> matrices)
    : d_(d), matrices_(std::move(matrices)) {
  require(d >= 1, "FeatureSet: d must be positive");
  require(!matrices_.empty(), "FeatureSet: at least one feature is required");
  diagonal_ = true;
  double max_op = 0.0;
  for (const auto& A : matrices_) {
    if (A.rows() != d || A.cols() != d) throw DimensionMismatch("FeatureSet: matrix is not d x d");
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff())) {
      throw InvariantFailure("FeatureSet: matrix is not symmetric");
    }
    Eigen::MatrixXd off = A;
    off.diagonal().setZero();
    if (off.cwiseAbs().maxCoeff() != 0.0) diagonal_ = false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    max_op = std::max(max_op, es.eigenvalues().cwiseAbs().maxCoeff());
  }
  kappa1_ = std::sqrt(static_cast<double>(d)) * max_op;
  if (diagonal_) {
    diag_.resize(d, r());
    for (int k = 0; k < r(); ++k) diag_.col(k) = matrices_[k].diagonal();
  }
}

Eigen::MatrixXd FeatureSet::gram() const {
  Eigen::MatrixXd G(r(), r());
  for (int k = 0; k < r(); ++k) {
    for (int l = k; l < r(); ++l) {
      G(k, l) = G(l, k) = quadratic_moment(matrices_[k], matrices_[l], d_);
    }
  }
  return G;
}

void FeatureSet::check_invariants(double tol) const {
  for (int k = 0; k < r(); ++k) {
    if (std::abs(matrices_[k].trace()) > tol) {
      throw InvariantFailure("feature " + std::to_string(k) + " is not traceless");
    }
  }
  const Eigen::MatrixXd G = gram();
  const double dev = (G - Eigen::MatrixXd::Identity(r(), r())).cwiseAbs().maxCoeff();
  if (dev > tol) {
    throw InvariantFailure("feature Gram deviates from identity by " + std::to_string(dev));
  }
}

FeatureSet FeatureSet::permuted(const std::vector<int>& order) const {
  require(static_cast<int>(order.size()) == r(), "permuted: order has wrong length");
  std::vector<Eigen::MatrixXd> out;
  for (int k : order) out.push_back(matrices_.at(k));
  return FeatureSet(d_, std::move(out));
}

FeatureSet make_sign_features(int d) {
  require(d >= 4 && d % 4 == 0, "make_sign_features: d must be a positive multiple of 4");
  static constexpr int kPatterns[3][4] = {{1, 1, -1, -1}, {1, -1, 1, -1}, {1, -1, -1, 1}};
  const double c = std::sqrt((d + 2.0) / (2.0 * d * d));
  const int block = d / 4;
  std::vector<Eigen::MatrixXd> mats;
  for (const auto& pattern : kPatterns) {
    Eigen::VectorXd diag(d);
    for (int i = 0; i < d; ++i) diag[i] = c * pattern[i / block];
    mats.push_back(diag.asDiagonal());
  }
  return FeatureSet(d, std::move(mats));
}

FeatureSet orthonormalize(const std::vector<Eigen::MatrixXd>& raw) {
  require(!raw.empty(), "orthonormalize: empty input");
  const int d = static_cast<int>(raw.front().rows());
  const double w = 2.0 * d / (d + 2.0);
  auto inner = [w](const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    return w * (A.array() * B.array()).sum();
  };
  double scale = 0.0;
  for (const auto& A : raw) {
    if (A.rows() != d || A.cols() != d) throw DimensionMismatch("orthonormalize: sizes differ");
    scale = std::max(scale, std::sqrt(inner(A, A)));
  }
  std::vector<Eigen::MatrixXd> out;
  for (const auto& A : raw) {
    Eigen::MatrixXd B = 0.5 * (A + A.transpose());
    B.diagonal().array() -= B.trace() / d;
    // two passes of modified Gram-Schmidt
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& Q : out) B -= inner(B, Q) * Q;
    }
    const double norm = std::sqrt(inner(B, B));
    if (!(norm > 1e-10 * std::max(scale, 1e-300))) {
      throw RankDeficiency("orthonormalize: input " + std::to_string(out.size()) +
                           " is dependent after trace removal");
    }
    B /= norm;
    B.diagonal().array() -= B.trace() / d;
    out.push_back(B);
  }
  return FeatureSet(d, std::move(out));
}

Eigen::MatrixXd eval_features(const FeatureSet& F, const Eigen::MatrixXd& X) {
  if (X.rows() > 0 && X.cols() != F.d()) throw DimensionMismatch("eval_features: X has wrong width");
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd out(n, F.r());
  if (n == 0) return out;
  if (F.is_diagonal()) {
    out.noalias() = X.array().square().matrix() * F.diagonals();
    return out;
  }
  for (int k = 0; k < F.r(); ++k) {
    out.col(k) = ((X * F.matrix(k)).array() * X.array()).rowwise().sum();
  }
  return out;
}

nlohmann::json to_json(const FeatureSet& F) {
  nlohmann::json mats = nlohmann::json::array();
  for (const auto& A : F.matrices()) {
    std::vector<double> flat;
    flat.reserve(A.size());
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j < A.cols(); ++j) flat.push_back(A(i, j));
    mats.push_back(flat);
  }
  return {{"d", F.d()}, {"r", F.r()}, {"matrices", mats}};
}

FeatureSet feature_set_from_json(const nlohmann::json& j) {
  const int d = j.at("d").get<int>();
  const int r = j.at("r").get<int>();
  const auto& mats = j.at("matrices");
  if (static_cast<int>(mats.size()) != r) throw DimensionMismatch("feature JSON: r does not match");
  std::vector<Eigen::MatrixXd> out;
  for (const auto& m : mats) {
    const auto flat = m.get<std::vector<double>>();
    if (static_cast<int>(flat.size()) != d * d) throw DimensionMismatch("feature JSON: matrix size");
    Eigen::MatrixXd A(d, d);
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < d; ++k) A(i, k) = flat[i * d + k];
    out.push_back(A);
  }
  return FeatureSet(d, std::move(out));
}

}  // namespace hfl
