#include <gtest/gtest.h>

#include <cmath>

#include "hfl/reconstruction.hpp"
#include "hfl/sphere_math.hpp"

using namespace hfl;

TEST(Kernel, AnalyticQ2) {
  for (int d : {8, 16}) {
    const auto spec = ActivationSpec::q2(d);
    const double B = static_cast<double>(harmonic_dim(d, 2));
    EXPECT_NEAR(analytic_kernel(d, spec), 1.0 / B, 1e-15);
    EXPECT_NEAR(analytic_kernel(1.3, spec), gegenbauer(2, d, 1.3) / B, 1e-15);
  }
}

TEST(Kernel, AnalyticMixedSeries) {
  const ActivationSpec spec{8, {0, 0, 2.0, 0, 0.5}};
  const double t = -0.7;
  const double expect = 4.0 * gegenbauer(2, 8, t) / harmonic_dim(8, 2) + 0.25 * gegenbauer(4, 8, t) / harmonic_dim(8, 4);
  EXPECT_NEAR(analytic_kernel(t, spec), expect, 1e-15);
}

TEST(Kernel, EmpiricalConvergesAndDeviationsArePaired) {
  const int d = 8;
  const auto spec = ActivationSpec::q2(d);
  const Eigen::MatrixXd X = sample_sphere(d, 6, 1), Xp = sample_sphere(d, 6, 2);
  const Eigen::MatrixXd Vs = sample_sphere(d, 100, 3), Vl = sample_sphere(d, 100000, 4);
  const Eigen::VectorXd dev_s = kernel_deviations(Vs, X, Xp, spec);
  const Eigen::VectorXd dev_l = kernel_deviations(Vl, X, Xp, spec);
  for (int i = 0; i < 6; ++i) {
    const auto kp = kernel_pair(Vs, X.row(i).transpose(), Xp.row(i).transpose(), spec);
    EXPECT_NEAR(kp.deviation, dev_s[i], 1e-14);
    EXPECT_NEAR(kp.deviation, std::abs(kp.empirical - kp.analytic), 1e-15);
    const Eigen::VectorXd h = compute_h0(Vs, X.row(i), spec).row(0);
    const Eigen::VectorXd hp = compute_h0(Vs, Xp.row(i), spec).row(0);
    EXPECT_NEAR(kp.empirical, h.dot(hp) / 100.0, 1e-14);
  }
  EXPECT_LT(dev_l.mean(), dev_s.mean());
  EXPECT_LT(dev_l.maxCoeff(), 5e-3);
}

namespace {

struct ReconFixture {
  int d = 8, m1 = 16, m2 = 64, n1 = 200;
  FeatureSet F = make_sign_features(8);
  Target f = make_standard_target(8, 4, F, 1 << 14, 0);
  StageOneState state;
  ReconFixture() {
    state.theta0 = init_network(d, m1, m2, 0.01, 1, ActivationSpec::q2(d));
    state.D1 = make_dataset(f, n1, 2);
  }
};

}  // namespace

TEST(Bstar, Construction) {
  ReconFixture s;
  const Eigen::MatrixXd H = expected_hessian(s.f.standardized_link()).H;
  const auto B = build_Bstar(s.F, H, s.state.theta0.V, s.state.theta0.spec);
  const double Bd2 = static_cast<double>(harmonic_dim(8, 2));
  EXPECT_NEAR(B.scale, Bd2 * Bd2 * 8 * 7, 1e-9);
  ASSERT_EQ(B.r(), 3);
  ASSERT_EQ(B.Bstar.cols(), s.m2);
  for (int j = 0; j < s.m2; ++j)
    for (int k = 0; k < 3; ++k) {
      const Eigen::VectorXd v = s.state.theta0.V.row(j).transpose();
      EXPECT_NEAR(B.P(j, k), v.dot(s.F.matrix(k) * v), 1e-12);
    }
  EXPECT_LT((H * B.Bstar - B.scale / s.m2 * B.P.transpose()).cwiseAbs().maxCoeff(), 1e-8 * B.scale);
  EXPECT_NEAR(B.op_norm, Eigen::JacobiSVD<Eigen::MatrixXd>(B.Bstar).singularValues()[0], 1e-9 * B.op_norm);
}

TEST(Bstar, Errors) {
  ReconFixture s;
  const Eigen::MatrixXd H = Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd Hsing = H;
  Hsing(2, 2) = 0.0;
  EXPECT_THROW(build_Bstar(s.F, Hsing, s.state.theta0.V, s.state.theta0.spec), SingularHessian);
  EXPECT_THROW(build_Bstar(s.F, -H, s.state.theta0.V, s.state.theta0.spec), SingularHessian);
  const ActivationSpec no_c2{8, {0, 0, 0, 0, 1.0}};
  EXPECT_THROW(build_Bstar(s.F, H, s.state.theta0.V, no_c2), ConfigError);
  EXPECT_THROW(build_Bstar(s.F, Eigen::MatrixXd::Identity(2, 2), s.state.theta0.V, s.state.theta0.spec),
               DimensionMismatch);
}

TEST(Reconstruct, FastPathMatchesNaive) {
  ReconFixture s;
  const auto B = build_Bstar(s.F, expected_hessian(s.f.standardized_link()).H, s.state.theta0.V,
                             s.state.theta0.spec);
  const Eigen::MatrixXd X = sample_sphere(s.d, 25, 3);
  const Eigen::MatrixXd fast = reconstruct_features(B, s.state, X);
  const Eigen::MatrixXd naive = reconstruct_features_naive(B, s.state, X);
  ASSERT_EQ(fast.rows(), 25);
  ASSERT_EQ(fast.cols(), 3);
  EXPECT_LT((fast - naive).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, naive.cwiseAbs().maxCoeff()));
  const Eigen::MatrixXd direct = compute_h1(s.state, X) * B.Bstar.transpose();
  EXPECT_LT((direct - naive).cwiseAbs().maxCoeff(), 1e-9 * std::max(1.0, naive.cwiseAbs().maxCoeff()));
}

TEST(Correlation, PearsonAndVarianceMatch) {
  Eigen::VectorXd a(5), b(5);
  a << 1, 2, 3, 4, 5;
  b << 2, 4, 6, 8, 10;
  EXPECT_NEAR(pearson(a, b), 1.0, 1e-15);
  EXPECT_NEAR(pearson(a, -b), -1.0, 1e-15);
  Eigen::MatrixXd truth(5, 2), recon(5, 2);
  truth << 1, 0, 2, 1, 3, 0, 4, 1, 5, 0;
  recon.col(0) = 3.0 * truth.col(0).array() + 7.0;
  recon.col(1) = -truth.col(1);
  const Eigen::MatrixXd m = variance_match(recon, truth);
  EXPECT_LT((m.col(0) - truth.col(0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(m.col(1).mean(), truth.col(1).mean(), 1e-12);
  const Eigen::VectorXd rho = feature_correlations(recon, truth);
  EXPECT_NEAR(rho[0], 1.0, 1e-12);
  EXPECT_NEAR(rho[1], -1.0, 1e-12);
}

TEST(TOperator, ConstantTargetIsScaledIdentity) {
  // For f = 1 and traceless W, E[<W, xx^T - I>(xx^T - I)] = 2d/(d+2) W.
  const int d = 8;
  const auto F = make_sign_features(d);
  const auto one = raw_target(LinkPolynomial::from_monomials(3, {{1.0, {0, 0, 0}}}), F, "one");
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d, d);
  W(0, 1) = W(1, 0) = 1.0;
  W(2, 2) = 1.0;
  W(3, 3) = -1.0;
  const auto est = t_operator_mc(one, W, 400000, 5);
  const Eigen::MatrixXd expect = 2.0 * d / (d + 2.0) * W;
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      if (est.std_error(a, b) == 0.0) {
        EXPECT_NEAR(est.mean(a, b), expect(a, b), 1e-12);
        continue;
      }
      EXPECT_LT(std::abs(est.mean(a, b) - expect(a, b)), 5 * est.std_error(a, b) + 1e-12) << a << "," << b;
    }
}

TEST(TOperator, StandardErrorsMatchRepeatedRuns) {
  const int d = 8;
  const auto F = make_sign_features(d);
  const auto f = make_standard_target(d, 2, F, 1 << 14, 0);
  const Eigen::MatrixXd W = F.matrix(0);
  std::vector<double> vals;
  double se = 0.0;
  for (int rep = 0; rep < 30; ++rep) {
    const auto est = t_operator_mc(f, W, 4000, 100 + rep);
    vals.push_back(est.mean(0, 0));
    se += est.std_error(0, 0) / 30;
  }
  double mean = 0.0;
  for (double v : vals) mean += v / vals.size();
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean) / (vals.size() - 1);
  EXPECT_NEAR(std::sqrt(var) / se, 1.0, 0.4);
}

TEST(TStar, LinearInHessian) {
  const int d = 8;
  const auto F = make_sign_features(d);
  Eigen::MatrixXd H(3, 3);
  H << 2, 0.5, 0, 0.5, 3, 0.1, 0, 0.1, 1;
  for (int k = 0; k < 3; ++k) {
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(d, d);
    for (int j = 0; j < 3; ++j) expect += H(k, j) * F.matrix(j);
    EXPECT_LT((t_star(F, H, F.matrix(k)) - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
  Eigen::MatrixXd off = Eigen::MatrixXd::Zero(d, d);
  off(0, 1) = off(1, 0) = 1.0;
  EXPECT_LT(t_star(F, H, off).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TResidual, NoiseCorrection) {
  MatrixEstimate e;
  e.mean = Eigen::MatrixXd::Zero(2, 2);
  e.std_error = Eigen::MatrixXd::Zero(2, 2);
  const Eigen::MatrixXd T = Eigen::MatrixXd::Zero(2, 2);
  EXPECT_EQ(corrected_t_residual(e, T), 0.0);
  e.mean(0, 0) = 0.5;
  EXPECT_NEAR(corrected_t_residual(e, T), 0.5, 1e-15);
  e.std_error(0, 0) = 0.3;
  EXPECT_NEAR(corrected_t_residual(e, T), 0.4, 1e-15);
  e.std_error(0, 0) = 1.0;
  EXPECT_EQ(corrected_t_residual(e, T), 0.0);
}
