#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <string>
#include <vector>

#include "hfl/common.hpp"

namespace hfl {

/// Inner activation sigma_2 = sum_i c_i Q_i(., d), i = 2..6. The outer
/// activation is always the smoothed absolute value sigma1.
struct ActivationSpec {
  int d = 0;
  std::vector<double> coeffs;  // coeffs[i] multiplies Q_i; entries 0 and 1 must be zero

  static ActivationSpec q2(int d);
  double c(int i) const { return i < static_cast<int>(coeffs.size()) ? coeffs[i] : 0.0; }
  int max_degree() const { return static_cast<int>(coeffs.size()) - 1; }
  void validate() const;
};

inline constexpr int kMaxInnerDegree = 6;

double sigma1(double t);
double sigma1_prime(double t);
double sigma2(double t, const ActivationSpec& spec);

/// max_{|t| <= d} |sigma2(t)|
double c_sigma(const ActivationSpec& spec);

/// Empirical moments E[sigma2(v^T x)^k] for k = 2, 4 (reported, not enforced).
struct InnerMoments {
  McEstimate second;
  McEstimate fourth;
};
InnerMoments inner_activation_moments(const ActivationSpec& spec, int n, std::uint64_t seed);

struct NetworkParams {
  Eigen::VectorXd a;  // m1
  Eigen::MatrixXd W;  // m1 x m2
  Eigen::VectorXd b;  // m1
  Eigen::MatrixXd V;  // m2 x d, rows on the sphere of radius sqrt(d)
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  ActivationSpec spec;

  int d() const { return static_cast<int>(V.cols()); }
  int m1() const { return static_cast<int>(a.size()); }
  int m2() const { return static_cast<int>(V.rows()); }
};

/// Paired initialization: neuron j and m1-1-j share w, have opposite a and
/// zero bias, so the network output is identically zero.
NetworkParams init_network(int d, int m1, int m2, double epsilon, std::uint64_t seed,
                           const ActivationSpec& spec);

/// Default row tile for batched passes.
inline constexpr int kDefaultTileRows = 2048;

/// h0(X) = sigma2(X V^T), n x m2.
Eigen::MatrixXd compute_h0(const Eigen::MatrixXd& V, const Eigen::MatrixXd& X,
                           const ActivationSpec& spec);

/// Calls fn(row_offset, h0_tile) over row tiles of X, in order.
template <typename Fn>
void for_each_h0_tile(const Eigen::MatrixXd& V, const Eigen::MatrixXd& X, const ActivationSpec& spec,
                      int tile_rows, Fn&& fn) {
  const Eigen::Index n = X.rows();
  for (Eigen::Index start = 0; start < n; start += tile_rows) {
    const Eigen::Index len = std::min<Eigen::Index>(tile_rows, n - start);
    const Eigen::MatrixXd H = compute_h0(V, X.middleRows(start, len), spec);
    fn(start, H);
  }
}

/// f(x) = (1/m1) sum_j a_j sigma1(<w_j, h0(x)> + b_j), computed in row tiles.
Eigen::VectorXd forward(const NetworkParams& theta, const Eigen::MatrixXd& X,
                        int tile_rows = kDefaultTileRows);

/// 1 / (C_sigma sqrt(2 ln(n1 m1) m2))
double default_epsilon(const ActivationSpec& spec, long n1, int m1, int m2);

nlohmann::json to_json(const ActivationSpec& spec);
ActivationSpec activation_from_json(const nlohmann::json& j);

/// Binary container: magic "HFLNET01", u64 header length, JSON header,
/// then a, W, b, V as row-major float64.
void save_network(const NetworkParams& theta, const std::string& path,
                  const nlohmann::json& extra = nlohmann::json::object());
NetworkParams load_network(const std::string& path, nlohmann::json* header = nullptr);

}  // namespace hfl
