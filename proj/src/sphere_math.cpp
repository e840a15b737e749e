#include "hfl/sphere_math.hpp"

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <limits>
#include <string>

namespace hfl {

namespace {

using Rational = boost::multiprecision::cpp_rational;

#ifndef NDEBUG
bool debug_logging() {
  static const bool enabled = std::getenv("HFL_DEBUG_SPHERE") != nullptr;
  return enabled;
}
#endif

void check_degree(int k, int d) {
  require(k >= 0, "gegenbauer: degree must be non-negative");
  require(k <= kMaxGegenbauerDegree, "gegenbauer: degree above 16 is not supported");
  require(d >= 1, "gegenbauer: dimension must be positive");
  require(k < 2 || d >= 3, "gegenbauer: degree >= 2 needs d >= 3");
}

Rational pochhammer(const Rational& z, int k) {
  Rational out = 1;
  for (int i = 0; i < k; ++i) out *= z + i;
  return out;
}

Rational binomial(int n, int k) {
  Rational out = 1;
  for (int i = 1; i <= k; ++i) {
    out *= n - k + i;
    out /= i;
  }
  return out;
}

}  // namespace

Eigen::MatrixXd sample_sphere(int d, int n, Rng& rng) {
  require(d >= 1, "sample_sphere: d must be positive");
  require(n >= 0, "sample_sphere: n must be non-negative");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double radius = std::sqrt(static_cast<double>(d));
  Eigen::MatrixXd out(n, d);
  Eigen::VectorXd z(d);
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    do {
      for (int c = 0; c < d; ++c) z[c] = normal(rng);
      norm = z.norm();
    } while (norm == 0.0);
    out.row(i) = (radius / norm) * z.transpose();
  }
  return out;
}

Eigen::MatrixXd sample_sphere(int d, int n, std::uint64_t seed) {
  require(n >= 1, "sample_sphere: n must be positive");
  Rng rng(seed);
  return sample_sphere(d, n, rng);
}

double gegenbauer_q2_by_recursion(int d, double t) {
  const double q0 = 1.0;
  const double q1 = t / d;
  // (t/d) Q_1 = 1/d Q_0 + (d-1)/d Q_2
  return (d * (t / d) * q1 - 1.0 * q0) / (d - 1.0);
}

std::vector<double> gegenbauer_all(int kmax, int d, double t) {
  check_degree(kmax, d);
#ifndef NDEBUG
  if (debug_logging() && std::abs(t) > d) {
    std::cerr << "[hfl] gegenbauer argument " << t << " outside [-" << d << ", " << d << "]\n";
  }
#endif
  std::vector<double> q(kmax + 1);
  q[0] = 1.0;
  if (kmax >= 1) q[1] = t / d;
  if (kmax >= 2) q[2] = (t * t - d) / (static_cast<double>(d) * (d - 1.0));
  for (int k = 2; k < kmax; ++k) {
    q[k + 1] = ((2.0 * k + d - 2.0) * (t / d) * q[k] - k * q[k - 1]) / (k + d - 2.0);
  }
#ifndef NDEBUG
  if (debug_logging() && kmax > 2) {
    std::cerr << "[hfl] gegenbauer recursion depth " << kmax - 2 << "\n";
  }
#endif
  return q;
}

double gegenbauer(int k, int d, double t) { return gegenbauer_all(k, d, t)[k]; }

std::uint64_t harmonic_dim(int d, int k) {
  require(d >= 2, "harmonic_dim: d must be at least 2");
  require(k >= 0, "harmonic_dim: k must be non-negative");
  if (k == 0) return 1;
  // C(k+d-3, k-1), built incrementally; every partial product is an integer.
  using u128 = unsigned __int128;
  constexpr u128 kLimit = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t n = static_cast<std::uint64_t>(k) + d - 3;
  const std::uint64_t r = static_cast<std::uint64_t>(k) - 1;
  u128 binom = 1;
  for (std::uint64_t i = 1; i <= r; ++i) {
    binom = binom * (n - r + i);
    if (binom > kLimit * static_cast<u128>(i)) throw OverflowError("harmonic_dim: binomial overflow");
    binom /= i;
  }
  const u128 numer = binom * static_cast<u128>(2ULL * k + d - 2);
  if (numer / static_cast<u128>(2ULL * k + d - 2) != binom) {
    throw OverflowError("harmonic_dim: overflow");
  }
  const u128 out = numer / static_cast<u128>(k);
  if (out > kLimit) throw OverflowError("harmonic_dim: result exceeds 64 bits");
  return static_cast<std::uint64_t>(out);
}

LinearizationTable linearize_product(int i, int j, int d) {
  require(i >= 0 && j >= 0, "linearize_product: degrees must be non-negative");
  require(d >= 4, "linearize_product: needs d >= 4");
  require(i + j <= kMaxGegenbauerDegree, "linearize_product: i + j above 16");
  LinearizationTable table{i, j, d, {}};
  const Rational half(d - 2, 2);
  const Rational dm2(d - 2);
  const Rational dhalf(d, 2);
  for (int k = 0; k <= std::min(i, j); ++k) {
    const int degree = i + j - 2 * k;
    const Rational c = pochhammer(half, k) * pochhammer(half, i - k) * pochhammer(half, j - k) *
                       pochhammer(dm2, i + j - k) /
                       (pochhammer(dm2, i) * pochhammer(dm2, j) * pochhammer(dhalf, i + j - k));
    const Rational b = Rational(2 * degree + d - 2, d - 2) * c;
    Rational kfact = 1;
    for (int m = 2; m <= k; ++m) kfact *= m;
    const Rational coef = b * binomial(i, k) * binomial(j, k) * kfact;
    LinearizationTerm term;
    term.degree = degree;
    term.k = k;
    term.coefficient = coef.convert_to<double>();
    term.c_part = c.convert_to<double>();
#ifndef NDEBUG
    if (debug_logging() && (!std::isfinite(term.coefficient) || term.coefficient == 0.0)) {
      std::cerr << "[hfl] linearization coefficient lost range (i=" << i << ", j=" << j
                << ", k=" << k << ")\n";
    }
#endif
    table.terms.push_back(term);
  }
  return table;
}

double LinearizationTable::evaluate(double t) const {
  const auto q = gegenbauer_all(i + j, d, t);
  double out = 0.0;
  for (const auto& term : terms) out += term.coefficient * q[term.degree];
  return out;
}

double quadratic_moment(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int d) {
  if (A.rows() != d || A.cols() != d || B.rows() != d || B.cols() != d) {
    throw DimensionMismatch("quadratic_moment: matrices must be d x d");
  }
  const double dd = d;
  return dd / (dd + 2.0) * (A.trace() * B.trace() + 2.0 * (A.array() * B.array()).sum());
}

McEstimate mean_estimate(const Eigen::Ref<const Eigen::VectorXd>& values) {
  McEstimate out;
  out.n = static_cast<std::size_t>(values.size());
  if (out.n == 0) return out;
  const Eigen::Index n = values.size();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) sum += values[i];
  out.estimate = sum / n;
  if (out.n > 1) {
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ss += (values[i] - out.estimate) * (values[i] - out.estimate);
    out.std_error = std::sqrt(ss / (out.n - 1.0) / out.n);
  }
  return out;
}

McEstimate mc_gegenbauer_orthogonality(int j, int k, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& y_prime, int n,
                                       std::uint64_t seed) {
  const int d = static_cast<int>(y.size());
  if (y_prime.size() != d) throw DimensionMismatch("mc_gegenbauer_orthogonality: y, y' sizes");
  if (j == 0 && k == 0) return {1.0, 0.0, static_cast<std::size_t>(n)};
  Rng rng(seed);
  Eigen::VectorXd values(n);
  constexpr int kChunk = 1 << 14;
  int done = 0;
  while (done < n) {
    const int len = std::min(kChunk, n - done);
    const Eigen::MatrixXd x = sample_sphere(d, len, rng);
    const Eigen::VectorXd ty = x * y;
    const Eigen::VectorXd typ = x * y_prime;
    for (int i = 0; i < len; ++i) {
      values[done + i] = gegenbauer(j, d, ty[i]) * gegenbauer(k, d, typ[i]);
    }
    done += len;
  }
  return mean_estimate(values);
}

}  // namespace hfl
