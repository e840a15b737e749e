#include "hfl/reconstruction.hpp"

#include <cmath>

#include "hfl/sphere_math.hpp"

namespace hfl {

double analytic_kernel(double t, const ActivationSpec& spec) {
  const auto q = gegenbauer_all(spec.max_degree(), spec.d, t);
  double out = 0.0;
  for (int i = 2; i <= spec.max_degree(); ++i) {
    out += spec.c(i) * spec.c(i) * q[i] / static_cast<double>(harmonic_dim(spec.d, i));
  }
  return out;
}

KernelEstimate kernel_pair(const Eigen::MatrixXd& V, const Eigen::VectorXd& x, const Eigen::VectorXd& xp,
                           const ActivationSpec& spec) {
  KernelEstimate k;
  k.analytic = analytic_kernel(x.dot(xp), spec);
  const Eigen::MatrixXd h = compute_h0(V, Eigen::MatrixXd(x.transpose()), spec);
  const Eigen::MatrixXd hp = compute_h0(V, Eigen::MatrixXd(xp.transpose()), spec);
  k.empirical = h.row(0).dot(hp.row(0)) / V.rows();
  k.deviation = std::abs(k.empirical - k.analytic);
  return k;
}

Eigen::VectorXd kernel_deviations(const Eigen::MatrixXd& V, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xp,
                                  const ActivationSpec& spec) {
  if (X.rows() != Xp.rows() || X.cols() != Xp.cols()) throw DimensionMismatch("kernel_deviations: shapes differ");
  const Eigen::MatrixXd H = compute_h0(V, X, spec);
  const Eigen::MatrixXd Hp = compute_h0(V, Xp, spec);
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double emp = H.row(i).dot(Hp.row(i)) / V.rows();
    out[i] = std::abs(emp - analytic_kernel(X.row(i).dot(Xp.row(i)), spec));
  }
  return out;
}

ReconMatrix build_Bstar(const FeatureSet& F, const Eigen::MatrixXd& H, const Eigen::MatrixXd& V,
                        const ActivationSpec& spec) {
  const int r = F.r();
  const int d = F.d();
  if (H.rows() != r || H.cols() != r) throw DimensionMismatch("build_Bstar: H must be r x r");
  if (V.cols() != d) throw DimensionMismatch("build_Bstar: V width differs from d");
  const double c2 = spec.c(2);
  if (c2 == 0.0) throw ConfigError("build_Bstar: inner activation has c2 = 0");
  const Eigen::MatrixXd Hs = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hs, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues()[0] > 1e-8)) {
    throw SingularHessian("build_Bstar: lambda_min(H) = " + std::to_string(es.eigenvalues()[0]));
  }
  ReconMatrix B;
  B.d = d;
  B.m2 = static_cast<int>(V.rows());
  B.H = H;
  const double Bd2 = static_cast<double>(harmonic_dim(d, 2));
  B.scale = Bd2 * Bd2 * d * (d - 1.0) / (c2 * c2);
  B.P = eval_features(F, V);
  B.Bstar = (B.scale / B.m2) * Hs.ldlt().solve(B.P.transpose());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(B.Bstar);
  B.op_norm = svd.singularValues()[0];
  return B;
}

Eigen::MatrixXd reconstruct_features(const ReconMatrix& B, const StageOneState& state, const Eigen::MatrixXd& X) {
  const auto& theta = state.theta0;
  if (B.m2 != theta.m2()) throw DimensionMismatch("reconstruct_features: B* width differs from m2");
  if (X.cols() != theta.d()) throw DimensionMismatch("reconstruct_features: X width differs from d");
  Eigen::MatrixXd U = Eigen::MatrixXd::Zero(B.r(), theta.m2());
  for_each_h0_tile(theta.V, state.D1.X, theta.spec, state.tile_rows, [&](Eigen::Index start, const Eigen::MatrixXd& H) {
    Eigen::MatrixXd R = H * B.Bstar.transpose();  // tile x r
    R.array().colwise() *= state.D1.y.segment(start, H.rows()).array();
    U.noalias() += R.transpose() * H;
  });
  U /= static_cast<double>(state.D1.n()) * theta.m2();
  Eigen::MatrixXd out(X.rows(), B.r());
  for_each_h0_tile(theta.V, X, theta.spec, state.tile_rows, [&](Eigen::Index start, const Eigen::MatrixXd& H) {
    out.middleRows(start, H.rows()).noalias() = H * U.transpose();
  });
  return out;
}

Eigen::MatrixXd reconstruct_features_naive(const ReconMatrix& B, const StageOneState& state, const Eigen::MatrixXd& X) {
  return compute_h1(state, X) * B.Bstar.transpose();
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw DimensionMismatch("pearson: lengths differ");
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  return denom > 0.0 ? (da * db).sum() / denom : 0.0;
}

Eigen::MatrixXd variance_match(const Eigen::MatrixXd& recon, const Eigen::MatrixXd& truth) {
  if (recon.rows() != truth.rows() || recon.cols() != truth.cols()) throw DimensionMismatch("variance_match: shapes differ");
  Eigen::MatrixXd out(recon.rows(), recon.cols());
  for (Eigen::Index k = 0; k < recon.cols(); ++k) {
    const Eigen::ArrayXd c = recon.col(k).array() - recon.col(k).mean();
    const Eigen::ArrayXd t = truth.col(k).array() - truth.col(k).mean();
    const double sr = std::sqrt(c.square().mean());
    const double st = std::sqrt(t.square().mean());
    out.col(k) = (sr > 0.0 ? c * (st / sr) : c) + truth.col(k).mean();
  }
  return out;
}

Eigen::VectorXd feature_correlations(const Eigen::MatrixXd& recon, const Eigen::MatrixXd& truth) {
  const Eigen::MatrixXd matched = variance_match(recon, truth);
  Eigen::VectorXd out(recon.cols());
  for (Eigen::Index k = 0; k < recon.cols(); ++k) out[k] = pearson(matched.col(k), truth.col(k));
  return out;
}

MatrixEstimate t_operator_mc(const Target& f, const Eigen::MatrixXd& W, std::size_t n, std::uint64_t seed) {
  const int d = f.d();
  if (W.rows() != d || W.cols() != d) throw DimensionMismatch("t_operator_mc: W must be d x d");
  require(n >= 2, "t_operator_mc: need at least two samples");
  Rng rng(seed);
  Eigen::MatrixXd first = Eigen::MatrixXd::Zero(d, d);   // sum s x x^T
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);  // sum s^2 x_a^2 x_b^2
  Eigen::VectorXd s2x2 = Eigen::VectorXd::Zero(d);       // sum s^2 x_a^2
  double sum_s = 0.0, sum_s2 = 0.0;
  const double trW = W.trace();
  constexpr std::size_t kChunk = 1 << 15;
  for (std::size_t done = 0; done < n;) {
    const std::size_t len = std::min(kChunk, n - done);
    const Eigen::MatrixXd X = sample_sphere(d, static_cast<int>(len), rng);
    const Eigen::VectorXd fx = f(X);
    const Eigen::VectorXd quad = ((X * W).array() * X.array()).rowwise().sum();
    const Eigen::VectorXd s = fx.array() * (quad.array() - trW);
    const Eigen::VectorXd ss = s.array().square();
    const Eigen::MatrixXd X2 = X.array().square();
    first.noalias() += X.transpose() * s.asDiagonal() * X;
    second.noalias() += X2.transpose() * ss.asDiagonal() * X2;
    s2x2.noalias() += X2.transpose() * ss;
    sum_s += s.sum();
    sum_s2 += ss.sum();
    done += len;
  }
  const double nn = static_cast<double>(n);
  MatrixEstimate out;
  out.n = n;
  out.mean = first / nn;
  out.mean.diagonal().array() -= sum_s / nn;
  // E[(s (x_a x_b - delta_ab))^2] = E[s^2 x_a^2 x_b^2] - delta_ab (2 E[s^2 x_a^2] - E[s^2])
  Eigen::MatrixXd m2 = second / nn;
  m2.diagonal() -= (2.0 * s2x2 / nn).array().matrix() - Eigen::VectorXd::Constant(d, sum_s2 / nn);
  const Eigen::MatrixXd var = (m2 - out.mean.cwiseProduct(out.mean)).cwiseMax(0.0) * (nn / (nn - 1.0));
  out.std_error = (var / nn).cwiseSqrt();
  return out;
}

Eigen::MatrixXd t_star(const FeatureSet& F, const Eigen::MatrixXd& H, const Eigen::MatrixXd& W) {
  const int r = F.r();
  if (H.rows() != r || H.cols() != r) throw DimensionMismatch("t_star: H must be r x r");
  if (W.rows() != F.d() || W.cols() != F.d()) throw DimensionMismatch("t_star: W must be d x d");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(F.d(), F.d());
  for (int k = 0; k < r; ++k) {
    const auto& Ak = F.matrix(k);
    const double coef = (W.array() * Ak.array()).sum() / Ak.squaredNorm();
    if (coef == 0.0) continue;
    for (int j = 0; j < r; ++j) out += coef * H(k, j) * F.matrix(j);
  }
  return out;
}

double corrected_t_residual(const MatrixEstimate& That, const Eigen::MatrixXd& Tstar) {
  const double raw = (That.mean - Tstar).squaredNorm();
  return std::sqrt(std::max(0.0, raw - That.std_error.squaredNorm()));
}

}  // namespace hfl
