#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <vector>

#include "hfl/common.hpp"
#include "hfl/features.hpp"

namespace hfl {

/// One monomial coef * prod_i z_i^{powers[i]}.
struct Monomial {
  double coef = 0.0;
  std::vector<int> powers;
};

/// Polynomial g: R^r -> R stored as symmetric coefficient tensors
/// T_0..T_p (tensor k is a flat row-major array of length r^k), so that
/// g(z) = sum_k <T_k, z^{(x)k}>. A compact monomial form is kept for
/// evaluation.
class LinkPolynomial {
 public:
  LinkPolynomial() = default;
  LinkPolynomial(int r, std::vector<std::vector<double>> tensors);

  static LinkPolynomial from_monomials(int r, const std::vector<Monomial>& monomials);
  /// coef * sum_k z_k^power + constant
  static LinkPolynomial power_sum(int r, int power, double coef = 1.0, double constant = 0.0);

  int r() const { return r_; }
  int degree() const { return static_cast<int>(tensors_.size()) - 1; }
  const std::vector<double>& tensor(int k) const { return tensors_.at(k); }
  const std::vector<std::vector<double>>& tensors() const { return tensors_; }
  const std::vector<Monomial>& monomials() const { return monomials_; }

  double eval(const Eigen::Ref<const Eigen::VectorXd>& z) const;
  Eigen::MatrixXd hessian_at(const Eigen::Ref<const Eigen::VectorXd>& z) const;

  /// (g - shift) / scale
  LinkPolynomial affine(double shift, double scale) const;

 private:
  void build_monomials();

  int r_ = 0;
  std::vector<std::vector<double>> tensors_;
  std::vector<Monomial> monomials_;
};

/// Row-wise g(z_i).
Eigen::VectorXd eval_link(const LinkPolynomial& g, const Eigen::MatrixXd& Z);

struct HessianMatrix {
  Eigen::MatrixXd H;
  Eigen::MatrixXd std_error;  // zero in analytic mode
  double lambda_min = 0.0;
  std::size_t n_mc = 0;
};

enum class HessianMode { Analytic, MonteCarlo };

/// E_{z ~ N(0, I_r)}[Hessian of g]. Analytic mode contracts the tensors
/// against Gaussian moments and supports degree <= 6.
HessianMatrix expected_hessian(const LinkPolynomial& g, HessianMode mode = HessianMode::Analytic,
                               std::size_t n_mc = 1000000, std::uint64_t seed = 0);

/// f(x) = (g(p(x)) - shift) / scale
struct Target {
  LinkPolynomial link;
  FeatureSet features;
  double shift = 0.0;
  double scale = 1.0;
  std::string id;
  bool degenerate = false;  // P_2 dominant (linear link)
  std::size_t n_cal = 0;
  std::uint64_t cal_seed = 0;

  Eigen::VectorXd operator()(const Eigen::MatrixXd& X) const;
  int d() const { return features.d(); }
  /// The link composed with the standardization, z -> (g(z) - shift)/scale.
  LinkPolynomial standardized_link() const { return link.affine(shift, scale); }
};

inline constexpr std::size_t kDefaultCalibrationSamples = std::size_t{1} << 20;

/// Estimates shift and scale on n_cal fresh sphere samples.
/// Throws ScaleUnderflow when the calibration variance is below 1e-12.
Target standardize_target(const LinkPolynomial& g, const FeatureSet& F, std::size_t n_cal,
                          std::uint64_t seed, std::string id = "custom");

/// f_{d,p}: raw sum_k (x^T A_k x)^p, standardized.
Target make_standard_target(int d, int p, const FeatureSet& F,
                            std::size_t n_cal = kDefaultCalibrationSamples, std::uint64_t seed = 0);

/// A target with no standardization (shift 0, scale 1).
Target raw_target(const LinkPolynomial& g, const FeatureSet& F, std::string id = "raw");

/// Estimate of ||P_k f||^2 as B(d,k) * mean f(x) f(x') Q_k(<x,x'>) over n_pairs pairs.
McEstimate projection_norm(const Target& f, int k, std::size_t n_pairs, std::uint64_t seed);

struct TargetDiagnostics {
  McEstimate mean;
  McEstimate second_moment;
  McEstimate p2_norm_sq;
  double p2_fraction = 0.0;  // ||P_2 f||^2 / E f^2
  bool p2_dominant = false;
  double lambda_min = 0.0;
  double sqrt_r_lambda_min = 0.0;
  std::vector<std::string> warnings;
};

/// Mean, P_2 energy and Hessian conditioning in one report.
TargetDiagnostics hermite_target_check(const Target& f, std::size_t n = 200000,
                                       std::uint64_t seed = 0);

nlohmann::json to_json(const LinkPolynomial& g);
LinkPolynomial link_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Target& t);
Target target_from_json(const nlohmann::json& j);

}  // namespace hfl
