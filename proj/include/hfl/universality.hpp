#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hfl/common.hpp"
#include "hfl/features.hpp"

namespace hfl {

struct UniversalityReport {
  int r = 0;
  int d = 0;
  std::size_t n = 0;
  Eigen::VectorXd mean;
  Eigen::VectorXd mean_std_error;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd cov_std_error;
  bool covariance_defined = false;
  Eigen::VectorXd third_moment;   // per feature, raw E[p_k^3]
  Eigen::VectorXd fourth_moment;  // per feature, raw E[p_k^4]
  std::vector<double> sliced_values;
  double sliced_w1 = 0.0;
  double gaussian_floor = 0.0;
};

UniversalityReport moment_diagnostics(const FeatureSet& F, std::size_t n, std::uint64_t seed);
/// Same statistics for an arbitrary sample matrix (rows are draws).
UniversalityReport moment_diagnostics(const Eigen::MatrixXd& Z);

/// W1 between the empirical law of the sample and N(0,1), matching sorted
/// values to Gaussian quantiles at the midpoints (i - 1/2)/n.
double w1_to_standard_normal(std::vector<double> sample);

/// W1 between two equally sized empirical distributions.
double w1_between_samples(std::vector<double> a, std::vector<double> b);

struct SlicedW1 {
  double average = 0.0;
  double std_error = 0.0;
  std::vector<double> per_direction;
};

/// Average over L uniform random unit directions u of W1(u^T z, N(0,1)).
SlicedW1 sliced_w1(const Eigen::MatrixXd& Z, int L, std::uint64_t direction_seed);

struct SlicedW1Result {
  SlicedW1 features;
  SlicedW1 floor;  // same estimator on N(0, I_r) draws of the same size
  double floor_subtracted() const { return features.average - floor.average; }
};

/// Sliced W1 of p(x) over n sphere samples plus the Gaussian noise floor.
SlicedW1Result sliced_w1(const FeatureSet& F, std::size_t n, int L, std::uint64_t seed);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace hfl
