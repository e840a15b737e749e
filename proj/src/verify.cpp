#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "hfl/experiments.hpp"
#include "hfl/features.hpp"
#include "hfl/network.hpp"
#include "hfl/reconstruction.hpp"
#include "hfl/sphere_math.hpp"
#include "hfl/targets.hpp"
#include "hfl/training.hpp"
#include "hfl/universality.hpp"

namespace hfl {

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

struct Check {
  std::string name;
  std::function<std::string()> body;  // empty string on success, else the reason
};

std::vector<Check> checks(const ExperimentConfig& cfg) {
  const bool wrong_q2 = cfg.inject_fault == "q2_constant";
  std::vector<Check> out;

  out.push_back({"gegenbauer_normalization", [] {
    for (int d : {4, 8, 16, 32, 64})
      for (int k = 0; k <= 8; ++k)
        if (std::abs(gegenbauer(k, d, d) - 1.0) > 1e-9) return "Q_" + std::to_string(k) + "(d) != 1 at d=" + std::to_string(d);
    return std::string();
  }});

  out.push_back({"gegenbauer_q2_identity", [wrong_q2] {
    Rng rng(11);
    for (int d : {4, 8, 16, 32}) {
      std::uniform_real_distribution<double> u(-d, d);
      // The explicit form (t^2 - d) / (d (d - 1)); the fault swaps the denominator.
      const double denom = wrong_q2 ? d * (d + 1.0) : d * (d - 1.0);
      for (int i = 0; i < 100; ++i) {
        const double t = u(rng);
        const double explicit_q2 = (t * t - d) / denom;
        const double rec = gegenbauer_q2_by_recursion(d, t);
        const double lib = gegenbauer(2, d, t);
        const double tol = 1e-12 * std::max(1.0, std::abs(explicit_q2));
        if (std::abs(rec - explicit_q2) > tol || std::abs(lib - explicit_q2) > tol) {
          return "explicit and recursive Q_2 disagree at d=" + std::to_string(d) + ", t=" + num(t);
        }
      }
    }
    return std::string();
  }});

  out.push_back({"gegenbauer_product_linearization", [] {
    Rng rng(12);
    for (int d : {8, 16})
      for (int i = 0; i <= 4; ++i)
        for (int j = 0; j <= 4; ++j) {
          const auto table = linearize_product(i, j, d);
          std::uniform_real_distribution<double> u(-d, d);
          for (int s = 0; s < 100; ++s) {
            const double t = u(rng);
            const double lhs = gegenbauer(i, d, t) * gegenbauer(j, d, t);
            if (std::abs(table.evaluate(t) - lhs) > 1e-8 * std::max(1.0, std::abs(lhs)))
              return "product identity fails for i=" + std::to_string(i) + ", j=" + std::to_string(j);
          }
        }
    return std::string();
  }});

  out.push_back({"linearization_coefficient_bound", [] {
    for (int d : {8, 16, 32})
      for (int i = 0; i <= 6; ++i)
        for (int j = 0; j <= 6; ++j)
          for (const auto& term : linearize_product(i, j, d).terms) {
            double poch = 1.0;
            for (int m = 0; m < term.k; ++m) poch *= d - 2.0 + m;
            if (term.c_part > 1.0 / poch * (1.0 + 1e-12)) return "bound violated at i=" + std::to_string(i) + ", j=" + std::to_string(j);
          }
    return std::string();
  }});

  out.push_back({"quadratic_moment_monte_carlo", [] {
    const int d = 8;
    Rng rng(13);
    std::normal_distribution<double> g;
    const Eigen::MatrixXd X = sample_sphere(d, 200000, 14);
    for (int rep = 0; rep < 3; ++rep) {
      Eigen::MatrixXd A(d, d), B(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          A(i, j) = g(rng);
          B(i, j) = g(rng);
        }
      A = 0.5 * (A + A.transpose()).eval();
      B = 0.5 * (B + B.transpose()).eval();
      const Eigen::VectorXd v = ((X * A).array() * X.array()).rowwise().sum() * ((X * B).array() * X.array()).rowwise().sum();
      const McEstimate est = mean_estimate(v);
      if (std::abs(est.estimate - quadratic_moment(A, B, d)) > 5 * est.std_error) return std::string("Monte-Carlo disagrees");
    }
    return std::string();
  }});

  out.push_back({"sign_features_orthonormal", [] {
    for (int d : {8, 16, 32}) {
      try {
        make_sign_features(d).check_invariants(1e-12);
      } catch (const Error& e) {
        return std::string(e.what());
      }
    }
    return std::string();
  }});

  out.push_back({"orthonormalize_output", [] {
    const int d = 16;
    Rng rng(3);
    std::normal_distribution<double> g;
    std::vector<Eigen::MatrixXd> raw;
    for (int k = 0; k < 3; ++k) {
      Eigen::MatrixXd A(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) A(i, j) = g(rng);
      raw.push_back(0.5 * (A + A.transpose()));
    }
    try {
      orthonormalize(raw).check_invariants(1e-9);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string();
  }});

  out.push_back({"expected_hessian_analytic_vs_mc", [] {
    const auto g = LinkPolynomial::from_monomials(2, {{1.0, {4, 0}}, {0.5, {1, 2}}, {-0.7, {2, 2}}, {0.3, {1, 1}}});
    const auto a = expected_hessian(g);
    const auto m = expected_hessian(g, HessianMode::MonteCarlo, 200000, 5);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        if (std::abs(a.H(i, j) - m.H(i, j)) > 5 * m.std_error(i, j) + 1e-12) return std::string("analytic and MC Hessians disagree");
    return std::string();
  }});

  out.push_back({"target_standardization", [] {
    const auto F = make_sign_features(16);
    const auto t = make_standard_target(16, 4, F, 1 << 16, 1);
    const Eigen::MatrixXd X = sample_sphere(16, 1 << 16, 1);
    const Eigen::VectorXd f = t(X);
    const double mean = f.mean();
    const double var = (f.array() - mean).square().mean();
    if (std::abs(mean) > 1e-6 || std::abs(var - 1.0) > 1e-3) return "calibration mean " + num(mean) + ", variance " + num(var);
    return std::string();
  }});

  out.push_back({"sigma1_continuity", [] {
    for (double s : {-1.0, 1.0}) {
      const double h = 1e-9;
      if (std::abs(sigma1(s - h) - sigma1(s + h)) > 1e-8 || std::abs(sigma1_prime(s - h) - sigma1_prime(s + h)) > 1e-8)
        return std::string("sigma1 is not C1 at the seam");
    }
    return std::string();
  }});

  out.push_back({"symmetric_init_zero_output", [] {
    const auto spec = ActivationSpec::q2(16);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto theta = init_network(16, 64, 256, 0.05, seed, spec);
      const Eigen::VectorXd f = forward(theta, sample_sphere(16, 100, seed + 100));
      if (f.cwiseAbs().maxCoeff() > 1e-12) return std::string("nonzero output at initialization");
    }
    return std::string();
  }});

  out.push_back({"stage1_closed_form", [] {
    const int d = 8, m1 = 16, m2 = 64, n1 = 128;
    const auto F = make_sign_features(d);
    const auto target = make_standard_target(d, 2, F, 1 << 14, 2);
    const auto spec = ActivationSpec::q2(d);
    const auto theta = init_network(d, m1, m2, default_epsilon(spec, n1, m1, m2), 3, spec);
    const auto D1 = make_dataset(target, n1, 4);
    TrainConfig cfg;
    cfg.warn_out_of_zone = false;
    const auto state = stage1_step(theta, D1, cfg);
    if (state.out_of_zone_fraction > 0) return std::string("preactivations left the quadratic zone");
    const Eigen::MatrixXd H = compute_h0(theta.V, D1.X, spec);
    const Eigen::MatrixXd M = H.transpose() * D1.y.asDiagonal() * H / n1;
    const Eigen::MatrixXd expect = (theta.a / m2).asDiagonal() * (theta.W / theta.epsilon) * M;
    const double rel = (state.W1_unit - expect).norm() / expect.norm();
    if (rel > 1e-8) return "relative deviation " + num(rel);
    return std::string();
  }});

  out.push_back({"stage2_ridge_fixed_point", [] {
    Rng rng(6);
    std::normal_distribution<double> g;
    Eigen::MatrixXd Psi(200, 20);
    Eigen::VectorXd y(200);
    for (int i = 0; i < 200; ++i) {
      y[i] = g(rng);
      for (int j = 0; j < 20; ++j) Psi(i, j) = g(rng);
    }
    TrainConfig cfg;
    cfg.backend = Stage2Backend::Iterative;
    cfg.T = 100000;
    cfg.early_stop_rel = 1e-12;
    const auto res = ridge_gd(Psi, y, 0.1, cfg);
    const Eigen::MatrixXd G = Psi.transpose() * Psi / 200.0;
    const Eigen::VectorXd c = Psi.transpose() * y / 200.0;
    const double resid = ((G + 0.1 * Eigen::MatrixXd::Identity(20, 20)) * res.a - c).norm() / c.norm();
    if (resid > 1e-8) return "normal-equation residual " + num(resid);
    return std::string();
  }});

  out.push_back({"reconstruction_fast_path", [] {
    const int d = 8, m2 = 64;
    const auto F = make_sign_features(d);
    const auto target = make_standard_target(d, 2, F, 1 << 14, 2);
    StageOneState state;
    state.theta0 = init_network(d, 4, m2, 0.01, 7, ActivationSpec::q2(d));
    state.D1 = make_dataset(target, 300, 8);
    const auto B = build_Bstar(F, Eigen::MatrixXd::Identity(3, 3), state.theta0.V, state.theta0.spec);
    const Eigen::MatrixXd X = sample_sphere(d, 20, 9);
    const Eigen::MatrixXd fast = reconstruct_features(B, state, X);
    const Eigen::MatrixXd naive = reconstruct_features_naive(B, state, X);
    if ((fast - naive).norm() > 1e-10 * naive.norm()) return std::string("fast and direct reconstruction differ");
    return std::string();
  }});

  out.push_back({"analytic_kernel_diagonal", [] {
    const auto spec = ActivationSpec::q2(16);
    if (std::abs(analytic_kernel(16.0, spec) - 1.0 / 135.0) > 1e-15) return std::string("K0(x,x) != 1/135 at d=16");
    return std::string();
  }});

  out.push_back({"t_star_projection", [] {
    const auto F = make_sign_features(16);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
    for (int k = 0; k < 3; ++k)
      if ((t_star(F, I, F.matrix(k)) - F.matrix(k)).norm() > 1e-12) return std::string("T*(A_k) != A_k for H = I");
    return std::string();
  }});

  out.push_back({"w1_sorting_is_optimal", [] {
    Rng rng(10);
    std::normal_distribution<double> g;
    std::vector<double> a(7), b(7);
    for (int i = 0; i < 7; ++i) {
      a[i] = g(rng);
      b[i] = g(rng);
    }
    std::vector<int> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double cost = 0;
      for (int i = 0; i < 7; ++i) cost += std::abs(a[i] - b[perm[i]]);
      best = std::min(best, cost / 7);
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (std::abs(w1_between_samples(a, b) - best) > 1e-12) return std::string("sorted matching is not optimal");
    if (w1_between_samples(a, a) != 0.0) return std::string("W1 of identical samples is not zero");
    return std::string();
  }});

  return out;
}

}  // namespace

std::vector<VerifyResult> run_verify(const ExperimentConfig& cfg) {
  std::vector<VerifyResult> results;
  for (const auto& c : checks(cfg)) {
    VerifyResult r{c.name, false, ""};
    try {
      r.detail = c.body();
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = e.what();
    }
    results.push_back(r);
  }
  return results;
}

}  // namespace hfl
