// Acceptance suite. Run one criterion with --criterion N, or all of them.
#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hfl/experiments.hpp"
#include "hfl/features.hpp"
#include "hfl/network.hpp"
#include "hfl/reconstruction.hpp"
#include "hfl/sphere_math.hpp"
#include "hfl/targets.hpp"
#include "hfl/training.hpp"
#include "hfl/universality.hpp"
#include "oracles.hpp"

using namespace hfl;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f = "%.4g") {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(f, v[i]);
  return out + "]";
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}

Outcome criterion1() {
  double worst_norm = 0.0, worst_q2 = 0.0, worst_lin = 0.0;
  bool bound_ok = true;
  for (int d : {8, 16, 32, 64})
    for (int k = 0; k <= 8; ++k) worst_norm = std::max(worst_norm, std::abs(gegenbauer(k, d, d) - 1.0));
  Rng rng(1);
  for (int d : {4, 8, 16, 32, 64}) {
    std::uniform_real_distribution<double> u(-d, d);
    for (int s = 0; s < 1000; ++s) {
      const double t = u(rng);
      const double ex = (t * t - d) / (d * (d - 1.0));
      worst_q2 = std::max(worst_q2, std::abs(gegenbauer_q2_by_recursion(d, t) - ex));
    }
  }
  for (int d : {8, 16}) {
    std::uniform_real_distribution<double> u(-d, d);
    for (int i = 0; i <= 4; ++i)
      for (int j = 0; j <= 4; ++j) {
        const auto table = linearize_product(i, j, d);
        for (int s = 0; s < 200; ++s) {
          const double t = u(rng);
          const double lhs = gegenbauer(i, d, t) * gegenbauer(j, d, t);
          // error relative to the summed term magnitudes
          double scale = std::abs(lhs);
          for (const auto& term : table.terms) scale += std::abs(term.coefficient * gegenbauer(term.degree, d, t));
          worst_lin = std::max(worst_lin, std::abs(table.evaluate(t) - lhs) / std::max(1e-300, scale));
        }
      }
  }
  for (int d : {8, 16, 32})
    for (int i = 0; i <= 6; ++i)
      for (int j = 0; j <= 6; ++j)
        for (const auto& term : linearize_product(i, j, d).terms)
          if (term.c_part > (1.0 + 1e-12) / oracle::pochhammer(d - 2.0, term.k)) bound_ok = false;
  const bool pass = worst_norm <= 1e-9 && worst_q2 <= 1e-12 && worst_lin <= 1e-8 && bound_ok;
  return {pass, "max |Q_k(d)-1| " + fmt("%.2e", worst_norm) + ", Q2 recursion gap " + fmt("%.2e", worst_q2) +
                    ", linearization rel err " + fmt("%.2e", worst_lin) + ", coefficient bound " +
                    (bound_ok ? "holds" : "violated")};
}

Outcome criterion2() {
  const int d = 8, n = 1000000;
  const Eigen::MatrixXd X = sample_sphere(d, n, 2);
  Rng rng(3);
  std::normal_distribution<double> g;
  double worst_z = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::MatrixXd A(d, d), B(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        A(i, j) = g(rng);
        B(i, j) = g(rng);
      }
    A = (0.5 * (A + A.transpose())).eval();
    B = (0.5 * (B + B.transpose())).eval();
    const Eigen::VectorXd v =
        ((X * A).array() * X.array()).rowwise().sum() * ((X * B).array() * X.array()).rowwise().sum();
    const McEstimate est = mean_estimate(v);
    worst_z = std::max(worst_z, std::abs(est.estimate - quadratic_moment(A, B, d)) / est.std_error);
  }
  double worst_unit = 0.0;
  for (int dd : {8, 16, 32, 64}) {
    const auto F = make_sign_features(dd);
    for (int k = 0; k < F.r(); ++k)
      worst_unit = std::max(worst_unit, std::abs(quadratic_moment(F.matrix(k), F.matrix(k), dd) - 1.0));
  }
  return {worst_z < 5.0 && worst_unit <= 1e-12,
          "max |MC - exact| / se " + fmt("%.2f", worst_z) + " over 10 pairs, max |E p_k^2 - 1| " +
              fmt("%.1e", worst_unit)};
}

Outcome criterion3() {
  double worst = 0.0;
  const int d = 16;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto theta = init_network(d, 2048, 4096, default_epsilon(ActivationSpec::q2(d), 8192, 2048, 4096), seed,
                                    ActivationSpec::q2(d));
    worst = std::max(worst, forward(theta, sample_sphere(d, 100, derive_seed(seed, "test"))).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "max |f(x; theta0)| " + fmt("%.2e", worst) + " over 5 seeds x 100 inputs"};
}

Outcome criterion4() {
  const int d = 8, m1 = 64, m2 = 512, n1 = 1024;
  const auto spec = ActivationSpec::q2(d);
  const auto F = make_sign_features(d);
  const auto f = make_standard_target(d, 4, F, 1 << 18, 0);
  const auto theta = init_network(d, m1, m2, default_epsilon(spec, n1, m1, m2), 0, spec);
  const Dataset D1 = make_dataset(f, n1, 1);
  TrainConfig cfg;
  cfg.warn_out_of_zone = false;
  const auto state = stage1_step(theta, D1, cfg);
  const Eigen::MatrixXd H = compute_h0(theta.V, D1.X, spec);
  const Eigen::MatrixXd M = H.transpose() * D1.y.asDiagonal() * H / n1;
  const Eigen::MatrixXd expect = theta.a.asDiagonal() * (theta.W * M) / (m2 * theta.epsilon);
  const double rel = (state.W1_unit - expect).norm() / expect.norm();
  return {state.out_of_zone_fraction == 0.0 && rel <= 1e-8,
          "out-of-zone fraction " + fmt("%g", state.out_of_zone_fraction) + ", relative gap " + fmt("%.2e", rel)};
}

Outcome criterion5() {
  const int d = 16, m1 = 256, m2 = 1024, n2 = 2048;
  const auto spec = ActivationSpec::q2(d);
  const auto F = make_sign_features(d);
  double worst = 0.0;
  long max_steps = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto f = make_standard_target(d, 4, F, 1 << 16, seed);
    const auto theta = init_network(d, m1, m2, default_epsilon(spec, n2, m1, m2), seed, spec);
    TrainConfig cfg;
    cfg.warn_out_of_zone = false;
    cfg.backend = Stage2Backend::Iterative;
    cfg.trace_every = 0;
    const auto state = stage1_step(theta, make_dataset(f, n2, derive_seed(seed, "D1")), cfg);
    const Dataset D2 = make_dataset(f, n2, derive_seed(seed, "D2"));
    auto map = alg1_feature_map(state, reinit_bias(m1, derive_seed(seed, "bias")));
    map.eta = calibrate_eta(map, D2.X);
    const Eigen::MatrixXd Psi = map.psi(D2.X);
    const Eigen::MatrixXd G = Psi.transpose() * Psi / n2;
    const Eigen::VectorXd c = Psi.transpose() * D2.y / n2;
    const double lmax = power_method_lambda_max(G);
    for (double rel : {1e-3, 1e-2, 1e-1}) {
      const double lambda = rel * lmax;
      const auto res = ridge_gd(Psi, D2.y, lambda, cfg);
      const double resid = ((G * res.a + lambda * res.a) - c).norm() / c.norm();
      worst = std::max(worst, resid);
      max_steps = std::max(max_steps, res.steps);
    }
  }
  return {worst <= 1e-8, "max normal-equation residual " + fmt("%.2e", worst) + " (3 seeds x 3 lambdas, up to " +
                             std::to_string(max_steps) + " GD steps)"};
}

Outcome criterion6() {
  const int d = 16, pairs = 100, draws = 8;
  const auto spec = ActivationSpec::q2(d);
  const Eigen::MatrixXd X = sample_sphere(d, pairs, 1), Xp = sample_sphere(d, pairs, 2);
  const std::vector<double> m2s = {1024, 4096, 16384};
  std::vector<double> dev;
  for (double m2 : m2s) {
    double acc = 0.0;
    for (int v = 0; v < draws; ++v) {
      const Eigen::MatrixXd V = sample_sphere(d, static_cast<int>(m2), derive_seed(v, "V-" + std::to_string(m2)));
      acc += kernel_deviations(V, X, Xp, spec).maxCoeff();
    }
    dev.push_back(acc / draws);
  }
  const double slope = loglog_slope(m2s, dev);
  return {strictly_decreasing(dev) && slope >= -0.65 && slope <= -0.35,
          "max deviation (mean of 8 V draws) " + join(dev) + " at m2 = 2^10, 2^12, 2^14; slope " + fmt("%.3f", slope)};
}

Outcome criterion7() {
  auto cfg = ExperimentConfig::defaults_for("reconstruct");
  cfg.d_grid = {16};
  cfg.m2 = 8192;
  cfg.seeds = {0};
  cfg.p_pretrain = 2;
  const RunOutput out = run_reconstruct(cfg);
  std::map<long, Eigen::VectorXd> by_n1;
  for (const auto& s : out.recon_summary) by_n1[s.n1] = s.correlations;
  bool monotone = true;
  std::string detail;
  const Eigen::VectorXd* prev = nullptr;
  for (const auto& [n1, c] : by_n1) {
    detail += "n1=" + std::to_string(n1) + " " + join(std::vector<double>(c.data(), c.data() + c.size()), "%.3f") + "; ";
    if (prev)
      for (Eigen::Index k = 0; k < c.size(); ++k)
        if (c[k] < (*prev)[k]) monotone = false;
    prev = &c;
  }
  const double last_min = by_n1.rbegin()->second.minCoeff();
  return {by_n1.size() == 3 && monotone && last_min >= 0.75,
          detail + (monotone ? "non-decreasing" : "not monotone") + ", min at d^4 " + fmt("%.3f", last_min)};
}

struct MeanSe {
  double mean = 0.0, se = 0.0;
};

MeanSe over_seeds(const std::vector<double>& v) {
  MeanSe out;
  for (double x : v) out.mean += x / v.size();
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / (v.size() - 1.0) / v.size());
  }
  return out;
}

Outcome criterion8() {
  auto cfg = ExperimentConfig::defaults_for("compare");
  cfg.d_grid = {16};
  cfg.p = 4;
  cfg.m1 = 2048;
  cfg.m2 = 4096;
  cfg.n_grid = {1024, 4096, 16384};
  cfg.seeds = {0, 1, 2};
  const auto rows = run_compare(cfg);
  std::map<std::pair<std::string, long>, std::vector<double>> mae;
  for (const auto& r : rows) mae[{r.method, r.n1 + r.n2}].push_back(r.test_mae);
  std::string detail;
  for (long n : cfg.n_grid) {
    const auto a = over_seeds(mae[{"alg1", n}]), b = over_seeds(mae[{"rf", n}]);
    detail += "n=" + std::to_string(n) + " alg1 " + fmt("%.4f", a.mean) + " rf " + fmt("%.4f", b.mean) + "; ";
  }
  const auto a = over_seeds(mae[{"alg1", 16384}]), b = over_seeds(mae[{"rf", 16384}]);
  const double combined = std::sqrt(a.se * a.se + b.se * b.se);
  const double gap = b.mean - a.mean;
  return {mae[{"alg1", 16384}].size() == 3 && gap > combined,
          detail + "gap at 2^14 " + fmt("%.4f", gap) + " vs combined se " + fmt("%.4f", combined)};
}

Outcome criterion9() {
  auto cfg = ExperimentConfig::defaults_for("transfer");
  cfg.d_grid = {16};
  cfg.p_pretrain = 2;
  cfg.n1 = 16384;
  cfg.p_transfer = {4, 6};
  cfg.n2_grid = {1024, 4096, 16384};
  cfg.seeds = {0, 1, 2};
  const auto rows = run_transfer(cfg);
  bool pass = true;
  std::string detail;
  for (int p : cfg.p_transfer) {
    std::vector<double> means;
    for (long n2 : cfg.n2_grid) {
      std::vector<double> v;
      for (const auto& r : rows)
        if (r.p == p && r.n2 == n2) v.push_back(r.test_mae);
      if (v.size() != cfg.seeds.size()) pass = false;
      means.push_back(over_seeds(v).mean);
    }
    pass = pass && strictly_decreasing(means);
    detail += "p=" + std::to_string(p) + " mean MAE " + join(means) + "; ";
  }
  return {pass, detail + "n2 = 2^10, 2^12, 2^14"};
}

Outcome criterion10() {
  auto cfg = ExperimentConfig::defaults_for("universality");
  cfg.d_grid = {8, 16, 32, 64};
  cfg.n_univ = 200000;
  cfg.L = 64;
  cfg.seeds = {0};
  const auto rows = run_universality(cfg);
  std::vector<double> ds, w;
  for (const auto& r : rows) {
    ds.push_back(r.d);
    w.push_back(r.sliced_w1 - r.gaussian_floor);
  }
  bool positive = true;
  for (double x : w) positive = positive && x > 0.0;
  const double slope = positive ? loglog_slope(ds, w) : std::nan("");
  return {rows.size() == 4 && positive && strictly_decreasing(w) && slope >= -0.9 && slope <= -0.2,
          "floor-subtracted sliced W1 " + join(w) + " at d = 8..64; slope " + fmt("%.3f", slope)};
}

Outcome criterion11() {
  std::vector<double> resid, stein_gap;
  const std::size_t n = 2000000;
  for (int d : {8, 16, 32}) {
    const auto F = make_sign_features(d);
    const auto f = make_standard_target(d, 2, F, kDefaultCalibrationSamples, derive_seed(0, "calibration-p2"));
    const Eigen::MatrixXd H = expected_hessian(f.standardized_link()).H;
    const Eigen::MatrixXd& A1 = F.matrix(0);
    const MatrixEstimate That = t_operator_mc(f, A1, n, derive_seed(static_cast<std::uint64_t>(d), "moments"));
    resid.push_back(corrected_t_residual(That, t_star(F, H, A1)));
    // <T(A1), A1> = E[f p1^2], which a Gaussian feature law would equate with H11.
    stein_gap.push_back(std::abs((That.mean.array() * A1.array()).sum() - H(0, 0)));
  }
  return {strictly_decreasing(resid), "corrected residual " + join(resid) + " at d = 8, 16, 32; |E[f p1^2] - H11| " +
                                           join(stein_gap)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-11)")->check(CLI::Range(1, 11));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> criteria = {criterion1, criterion2, criterion3, criterion4,
                                                          criterion5, criterion6, criterion7, criterion8,
                                                          criterion9, criterion10, criterion11};
  int failures = 0;
  for (int i = 1; i <= static_cast<int>(criteria.size()); ++i) {
    if (only && i != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i - 1]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d: %s (%.1f s) %s\n", i, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
