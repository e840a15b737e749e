#include <gtest/gtest.h>

#include <cmath>

#include "hfl/sphere_math.hpp"
#include "hfl/targets.hpp"
#include "oracles.hpp"

using namespace hfl;

namespace {

// z0^2 z1 + 3 z2^4 - z0 z1 z2 + 0.5 z1 + 2
LinkPolynomial mixed_link() {
  return LinkPolynomial::from_monomials(3, {{1.0, {2, 1, 0}},
                                            {3.0, {0, 0, 4}},
                                            {-1.0, {1, 1, 1}},
                                            {0.5, {0, 1, 0}},
                                            {2.0, {0, 0, 0}}});
}

}  // namespace

TEST(LinkPolynomial, MonomialEvalMatchesNestedTensorEval) {
  const auto g = mixed_link();
  Rng rng(1);
  std::normal_distribution<double> n01;
  for (int s = 0; s < 50; ++s) {
    Eigen::VectorXd z(3);
    for (int k = 0; k < 3; ++k) z[k] = n01(rng);
    const double direct = z[0] * z[0] * z[1] + 3 * std::pow(z[2], 4) - z[0] * z[1] * z[2] + 0.5 * z[1] + 2.0;
    EXPECT_NEAR(g.eval(z), direct, 1e-10 * std::max(1.0, std::abs(direct)));
    EXPECT_NEAR(oracle::eval_tensor_nested(g, z), direct, 1e-10 * std::max(1.0, std::abs(direct)));
  }
}

TEST(LinkPolynomial, BatchEvalMatchesPointwise) {
  const auto g = mixed_link();
  Rng rng(2);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd Z(40, 3);
  for (int i = 0; i < Z.rows(); ++i)
    for (int k = 0; k < 3; ++k) Z(i, k) = n01(rng);
  const Eigen::VectorXd v = eval_link(g, Z);
  for (int i = 0; i < Z.rows(); ++i) EXPECT_NEAR(v[i], g.eval(Z.row(i).transpose()), 1e-10);
}

TEST(LinkPolynomial, DegreeAndTrimming) {
  EXPECT_EQ(mixed_link().degree(), 4);
  LinkPolynomial g(2, {{1.0}, {0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}});
  EXPECT_EQ(g.degree(), 0);
}

TEST(LinkPolynomial, RejectsAsymmetricTensor) {
  EXPECT_THROW(LinkPolynomial(2, {{0.0}, {0.0, 0.0}, {1.0, 2.0, 0.0, 1.0}}), InvariantFailure);
  EXPECT_THROW(LinkPolynomial(2, {{0.0}, {0.0, 0.0, 0.0}}), DimensionMismatch);
}

TEST(LinkPolynomial, HessianAtMatchesFiniteDifferences) {
  const auto g = mixed_link();
  Eigen::VectorXd z(3);
  z << 0.3, -1.2, 0.8;
  const Eigen::MatrixXd H = g.hessian_at(z);
  const double h = 1e-4;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      Eigen::VectorXd pp = z, pm = z, mp = z, mm = z;
      pp[a] += h; pp[b] += h;
      pm[a] += h; pm[b] -= h;
      mp[a] -= h; mp[b] += h;
      mm[a] -= h; mm[b] -= h;
      const double fd = (g.eval(pp) - g.eval(pm) - g.eval(mp) + g.eval(mm)) / (4 * h * h);
      EXPECT_NEAR(H(a, b), fd, 1e-5) << a << "," << b;
    }
}

TEST(LinkPolynomial, AffineTransform) {
  const auto g = mixed_link();
  const auto h = g.affine(2.0, 4.0);
  Eigen::VectorXd z(3);
  z << 0.1, 0.2, -0.7;
  EXPECT_NEAR(h.eval(z), (g.eval(z) - 2.0) / 4.0, 1e-14);
}

TEST(ExpectedHessian, PowerSumClosedForm) {
  for (int p = 2; p <= 6; ++p) {
    const auto H = expected_hessian(LinkPolynomial::power_sum(3, p));
    const double expect = p * (p - 1) * oracle::gaussian_moment(p - 2);
    EXPECT_LT((H.H - expect * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12) << p;
    EXPECT_NEAR(H.lambda_min, expect, 1e-12);
  }
  EXPECT_NEAR(expected_hessian(LinkPolynomial::power_sum(3, 4)).H(0, 0), 12.0, 1e-12);
}

TEST(ExpectedHessian, AnalyticMatchesMonomialOracle) {
  const auto g = mixed_link();
  const Eigen::MatrixXd ref = oracle::expected_hessian_by_monomials(g);
  EXPECT_LT((expected_hessian(g).H - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ExpectedHessian, MonteCarloWithinStandardErrors) {
  const auto g = mixed_link();
  const auto analytic = expected_hessian(g);
  const auto mc = expected_hessian(g, HessianMode::MonteCarlo, 400000, 3);
  EXPECT_EQ(mc.n_mc, 400000u);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      // d^2/dz1^2 vanishes identically, so that entry has no sampling noise
      if (a == 1 && b == 1) EXPECT_EQ(mc.std_error(a, b), 0.0);
      else EXPECT_GT(mc.std_error(a, b), 0.0);
      EXPECT_LT(std::abs(mc.H(a, b) - analytic.H(a, b)), 5 * mc.std_error(a, b) + 1e-12) << a << "," << b;
    }
  EXPECT_LT((mc.H - mc.H.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ExpectedHessian, AnalyticRejectsHighDegree) {
  EXPECT_THROW(expected_hessian(LinkPolynomial::power_sum(2, 8)), ConfigError);
  EXPECT_NO_THROW(expected_hessian(LinkPolynomial::power_sum(2, 8), HessianMode::MonteCarlo, 1000, 0));
}

TEST(Target, StandardizedMoments) {
  const auto F = make_sign_features(16);
  const auto f = make_standard_target(16, 4, F, 1 << 18, 7);
  EXPECT_EQ(f.id, "f_d16_p4");
  EXPECT_FALSE(f.degenerate);
  const Eigen::VectorXd y = f(sample_sphere(16, 200000, 99));
  const double sd = std::sqrt((y.array() - y.mean()).square().mean());
  EXPECT_LT(std::abs(y.mean()), 0.02);
  EXPECT_NEAR(sd, 1.0, 0.02);
}

TEST(Target, StandardizedLinkAgreesWithTarget) {
  const auto F = make_sign_features(8);
  const auto f = make_standard_target(8, 3, F, 1 << 14, 1);
  const Eigen::MatrixXd X = sample_sphere(8, 30, 2);
  const Eigen::VectorXd direct = f(X);
  const Eigen::VectorXd via = eval_link(f.standardized_link(), eval_features(F, X));
  EXPECT_LT((direct - via).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Target, ConstantLinkUnderflows) {
  const auto F = make_sign_features(8);
  const auto g = LinkPolynomial::from_monomials(3, {{5.0, {0, 0, 0}}});
  EXPECT_THROW(standardize_target(g, F, 1000, 0), ScaleUnderflow);
}

TEST(Target, LinearLinkIsDegenerate) {
  const auto F = make_sign_features(16);
  const auto f = make_standard_target(16, 1, F, 1 << 16, 0);
  EXPECT_TRUE(f.degenerate);
  const auto diag = hermite_target_check(f, 50000, 1);
  EXPECT_TRUE(diag.p2_dominant);
  EXPECT_NEAR(diag.p2_fraction, 1.0, 0.1);
  EXPECT_FALSE(diag.warnings.empty());
}

TEST(Target, QuarticDiagnostics) {
  const auto F = make_sign_features(16);
  const auto f = make_standard_target(16, 4, F, 1 << 16, 0);
  const auto diag = hermite_target_check(f, 50000, 1);
  EXPECT_FALSE(diag.p2_dominant);
  EXPECT_GT(diag.lambda_min, 0.0);
  EXPECT_NEAR(diag.sqrt_r_lambda_min, std::sqrt(3.0) * diag.lambda_min, 1e-12);
  EXPECT_NEAR(diag.second_moment.estimate, 1.0, 0.05);
}

TEST(Target, PermutingFeaturesLeavesSymmetricTargetUnchanged) {
  const auto F = make_sign_features(8);
  const auto f = make_standard_target(8, 4, F, 1 << 12, 0);
  const auto g = make_standard_target(8, 4, F.permuted({1, 2, 0}), 1 << 12, 0);
  const Eigen::MatrixXd X = sample_sphere(8, 50, 3);
  EXPECT_LT((f(X) - g(X)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Target, JsonRoundTrip) {
  const auto F = make_sign_features(8);
  const auto f = make_standard_target(8, 4, F, 1 << 12, 5);
  const auto t = target_from_json(nlohmann::json::parse(to_json(f).dump()));
  EXPECT_EQ(t.id, f.id);
  EXPECT_EQ(t.shift, f.shift);
  EXPECT_EQ(t.scale, f.scale);
  const Eigen::MatrixXd X = sample_sphere(8, 20, 1);
  EXPECT_EQ(t(X), f(X));
  const auto g = link_from_json(to_json(mixed_link()));
  EXPECT_EQ(g.tensors(), mixed_link().tensors());
}

TEST(Target, ProjectionNormsSumToSecondMoment) {
  // f built from quadratics in x of degree p=2 only has components of degree 0, 2, 4
  const auto F = make_sign_features(8);
  const auto f = make_standard_target(8, 2, F, 1 << 16, 0);
  const std::size_t n = 400000;
  double total = 0.0, se2 = 0.0;
  for (int k : {0, 2, 4}) {
    const auto est = projection_norm(f, k, n, 10 + k);
    total += est.estimate;
    se2 += est.std_error * est.std_error;
  }
  const auto odd = projection_norm(f, 1, n, 20);
  EXPECT_LT(std::abs(odd.estimate), 5 * odd.std_error);
  EXPECT_LT(std::abs(total - 1.0), 5 * std::sqrt(se2) + 0.01);
}
