#include "hfl/universality.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>

#include "hfl/sphere_math.hpp"

namespace hfl {

UniversalityReport moment_diagnostics(const Eigen::MatrixXd& Z) {
  UniversalityReport rep;
  const Eigen::Index n = Z.rows();
  const Eigen::Index r = Z.cols();
  rep.r = static_cast<int>(r);
  rep.n = static_cast<std::size_t>(n);
  rep.mean = n > 0 ? Eigen::VectorXd(Z.colwise().mean().transpose()) : Eigen::VectorXd::Zero(r);
  rep.mean_std_error = Eigen::VectorXd::Zero(r);
  rep.covariance = Eigen::MatrixXd::Constant(r, r, std::nan(""));
  rep.cov_std_error = Eigen::MatrixXd::Constant(r, r, std::nan(""));
  rep.third_moment = Eigen::VectorXd::Zero(r);
  rep.fourth_moment = Eigen::VectorXd::Zero(r);
  if (n == 0) return rep;
  rep.third_moment = Z.array().cube().colwise().mean().transpose();
  rep.fourth_moment = Z.array().square().square().colwise().mean().transpose();
  rep.covariance_defined = n >= 2;
  if (!rep.covariance_defined) return rep;
  const Eigen::MatrixXd C = Z.rowwise() - rep.mean.transpose();
  rep.covariance = C.transpose() * C / (n - 1.0);
  rep.mean_std_error = (rep.covariance.diagonal() / static_cast<double>(n)).cwiseSqrt();
  for (Eigen::Index a = 0; a < r; ++a) {
    for (Eigen::Index b = 0; b < r; ++b) {
      const Eigen::ArrayXd prod = C.col(a).array() * C.col(b).array();
      const double m = prod.mean();
      rep.cov_std_error(a, b) = std::sqrt((prod - m).square().sum() / (n - 1.0) / n);
    }
  }
  return rep;
}

UniversalityReport moment_diagnostics(const FeatureSet& F, std::size_t n, std::uint64_t seed) {
  UniversalityReport rep;
  if (n == 0) {
    rep = moment_diagnostics(Eigen::MatrixXd(0, F.r()));
  } else {
    rep = moment_diagnostics(eval_features(F, sample_sphere(F.d(), static_cast<int>(n), seed)));
  }
  rep.d = F.d();
  return rep;
}

double w1_to_standard_normal(std::vector<double> sample) {
  const std::size_t n = sample.size();
  require(n >= 1, "w1_to_standard_normal: empty sample");
  std::sort(sample.begin(), sample.end());
  const boost::math::normal_distribution<double> normal;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += std::abs(sample[i] - boost::math::quantile(normal, (i + 0.5) / n));
  }
  return acc / n;
}

double w1_between_samples(std::vector<double> a, std::vector<double> b) {
  require(a.size() == b.size() && !a.empty(), "w1_between_samples: samples must be non-empty and equally sized");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / a.size();
}

SlicedW1 sliced_w1(const Eigen::MatrixXd& Z, int L, std::uint64_t direction_seed) {
  require(L >= 1, "sliced_w1: need at least one direction");
  const Eigen::Index r = Z.cols();
  Rng rng(direction_seed);
  std::normal_distribution<double> normal;
  SlicedW1 out;
  // Gaussian quantiles are shared by every direction.
  const std::size_t n = static_cast<std::size_t>(Z.rows());
  require(n >= 1, "sliced_w1: empty sample");
  const boost::math::normal_distribution<double> law;
  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = boost::math::quantile(law, (i + 0.5) / n);
  std::vector<double> proj(n);
  for (int l = 0; l < L; ++l) {
    Eigen::VectorXd u(r);
    do {
      for (Eigen::Index c = 0; c < r; ++c) u[c] = normal(rng);
    } while (u.norm() == 0.0);
    u.normalize();
    const Eigen::VectorXd pz = Z * u;
    std::copy(pz.data(), pz.data() + n, proj.begin());
    std::sort(proj.begin(), proj.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(proj[i] - q[i]);
    out.per_direction.push_back(acc / n);
  }
  const Eigen::Map<const Eigen::VectorXd> v(out.per_direction.data(), L);
  const McEstimate est = mean_estimate(v);
  out.average = est.estimate;
  out.std_error = est.std_error;
  return out;
}

SlicedW1Result sliced_w1(const FeatureSet& F, std::size_t n, int L, std::uint64_t seed) {
  require(n >= 1000, "sliced_w1: need n >= 1000");
  const std::uint64_t dir_seed = derive_seed(seed, "directions");
  SlicedW1Result res;
  const Eigen::MatrixXd P = eval_features(F, sample_sphere(F.d(), static_cast<int>(n), derive_seed(seed, "samples")));
  res.features = sliced_w1(P, L, dir_seed);
  Rng rng(derive_seed(seed, "floor"));
  std::normal_distribution<double> normal;
  Eigen::MatrixXd G(static_cast<Eigen::Index>(n), F.r());
  for (Eigen::Index i = 0; i < G.rows(); ++i)
    for (Eigen::Index c = 0; c < G.cols(); ++c) G(i, c) = normal(rng);
  res.floor = sliced_w1(G, L, dir_seed);
  return res;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "loglog_slope: need at least two points");
  double mx = 0, my = 0;
  const std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(x[i] > 0 && y[i] > 0, "loglog_slope: values must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace hfl
