#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "hfl/common.hpp"

namespace hfl {

inline constexpr int kMaxGegenbauerDegree = 16;

/// n points drawn i.i.d. uniformly on the sphere of radius sqrt(d), one per row.
/// Each row is a normalized standard Gaussian draw; zero draws are resampled.
Eigen::MatrixXd sample_sphere(int d, int n, std::uint64_t seed);

/// Draws rows from an existing generator (used when several draws share a stream).
Eigen::MatrixXd sample_sphere(int d, int n, Rng& rng);

/// Gegenbauer polynomial Q_k(t) on [-d, d], normalized so that Q_k(d) = 1.
/// Degrees 0..2 use the explicit forms; higher degrees use the three-term
/// recursion seeded with Q_1 and Q_2.
double gegenbauer(int k, int d, double t);

/// Q_0(t) .. Q_kmax(t) in one pass.
std::vector<double> gegenbauer_all(int kmax, int d, double t);

/// Q_2 obtained from Q_0 and Q_1 through the recursion alone. Exposed so the
/// explicit formula can be cross-checked.
double gegenbauer_q2_by_recursion(int d, double t);

/// Dimension B(d, k) of the degree-k spherical harmonics in d variables.
/// Throws OverflowError when the value does not fit in 64 bits.
std::uint64_t harmonic_dim(int d, int k);

struct LinearizationTerm {
  int degree = 0;          // i + j - 2k
  int k = 0;
  double coefficient = 0;  // b * C(i,k) * C(j,k) * k!
  double c_part = 0;       // Pochhammer ratio without the degree prefactor
};

/// Q_i(t) Q_j(t) = sum_k coefficient_k Q_{i+j-2k}(t), with coefficients
/// computed in exact rational arithmetic.
struct LinearizationTable {
  int i = 0;
  int j = 0;
  int d = 0;
  std::vector<LinearizationTerm> terms;  // indexed by k

  double evaluate(double t) const;
};

LinearizationTable linearize_product(int i, int j, int d);

/// E[(x^T A x)(x^T B x)] for x uniform on S^{d-1}(sqrt d).
double quadratic_moment(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, int d);

/// Monte-Carlo estimate of E_x[Q_j(<x,y>) Q_k(<x,y'>)].
McEstimate mc_gegenbauer_orthogonality(int j, int k, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& y_prime, int n,
                                       std::uint64_t seed);

/// Sample mean and standard error of a sequence.
McEstimate mean_estimate(const Eigen::Ref<const Eigen::VectorXd>& values);

}  // namespace hfl
