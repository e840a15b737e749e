#include "hfl/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>

#include "hfl/sphere_math.hpp"

namespace hfl {

Dataset make_dataset(const Target& f, int n, std::uint64_t seed) {
  Dataset D;
  D.X = sample_sphere(f.d(), n, seed);
  D.y = f(D.X);
  D.target_id = f.id;
  D.seed = seed;
  return D;
}

Dataset relabel(const Dataset& D, const Target& f) {
  Dataset out = D;
  out.y = f(D.X);
  out.target_id = f.id;
  return out;
}

StageOneState stage1_step(const NetworkParams& theta0, const Dataset& D1, const TrainConfig& cfg) {
  if (D1.X.cols() != theta0.d()) throw DimensionMismatch("stage1_step: D1 dimension differs from network");
  require(D1.n() >= 1, "stage1_step: D1 is empty");
  const int m1 = theta0.m1();
  const int m2 = theta0.m2();
  StageOneState state;
  state.theta0 = theta0;
  state.D1 = D1;
  state.tile_rows = cfg.tile_rows;
  state.W1_unit = Eigen::MatrixXd::Zero(m1, m2);
  if (theta0.epsilon == 0.0) return state;

  const double eta1 = m1 / (2.0 * theta0.epsilon * m2);
  const double lambda1 = 1.0 / eta1;
  state.eta1_unit = eta1;

  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(m1, m2);
  long out_of_zone = 0;
  for_each_h0_tile(theta0.V, D1.X, theta0.spec, cfg.tile_rows, [&](Eigen::Index start, const Eigen::MatrixXd& H) {
    Eigen::MatrixXd pre = H * theta0.W.transpose();
    pre.rowwise() += theta0.b.transpose();
    out_of_zone += (pre.array().abs() >= 1.0).count();
    const Eigen::VectorXd f = pre.unaryExpr([](double t) { return sigma1(t); }) * theta0.a / m1;
    const Eigen::VectorXd resid = f - D1.y.segment(start, H.rows());
    Eigen::MatrixXd S = pre.unaryExpr([](double t) { return sigma1_prime(t); });
    S.array().colwise() *= resid.array();
    grad.noalias() += S.transpose() * H;
  });
  grad.array().colwise() *= (theta0.a.array() / (static_cast<double>(m1) * D1.n()));
  state.W1_unit = (1.0 - eta1 * lambda1) * theta0.W - eta1 * grad;
  state.out_of_zone_fraction = static_cast<double>(out_of_zone) / (static_cast<double>(D1.n()) * m1);
  if (cfg.warn_out_of_zone && state.out_of_zone_fraction > 0.0) {
    std::cerr << "warning: " << state.out_of_zone_fraction
              << " of Stage-1 preactivations left (-1, 1); the closed form does not bind\n";
  }
  return state;
}

Eigen::MatrixXd compute_h1(const StageOneState& state, const Eigen::MatrixXd& Xp) {
  const auto& theta = state.theta0;
  if (Xp.cols() != theta.d()) throw DimensionMismatch("compute_h1: x' dimension differs from network");
  const Eigen::MatrixXd Hp = compute_h0(theta.V, Xp, theta.spec);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(Xp.rows(), theta.m2());
  for_each_h0_tile(theta.V, state.D1.X, theta.spec, state.tile_rows, [&](Eigen::Index start, const Eigen::MatrixXd& H) {
    Eigen::MatrixXd K = Hp * H.transpose();  // n' x tile
    K.array().rowwise() *= state.D1.y.segment(start, H.rows()).transpose().array();
    out.noalias() += K * H;
  });
  out /= static_cast<double>(state.D1.n()) * theta.m2();
  return out;
}

Eigen::VectorXd compute_h1(const StageOneState& state, const Eigen::VectorXd& xp) {
  return compute_h1(state, Eigen::MatrixXd(xp.transpose())).row(0).transpose();
}

Eigen::VectorXd reinit_bias(int m1, std::uint64_t seed, double range) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(-range, range);
  Eigen::VectorXd b(m1);
  for (int i = 0; i < m1; ++i) b[i] = unif(rng);
  return b;
}

Eigen::MatrixXd FeatureMap::unit_preactivations(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd out(X.rows(), m1());
  for_each_h0_tile(V, X, spec, tile_rows, [&](Eigen::Index start, const Eigen::MatrixXd& H) {
    out.middleRows(start, H.rows()).noalias() = H * U.transpose();
  });
  return out;
}

Eigen::MatrixXd FeatureMap::psi(const Eigen::MatrixXd& X) const {
  Eigen::MatrixXd out(X.rows(), m1());
  const double inv_m1 = 1.0 / m1();
  for_each_h0_tile(V, X, spec, tile_rows, [&](Eigen::Index start, const Eigen::MatrixXd& H) {
    Eigen::MatrixXd pre = eta * (H * U.transpose());
    pre.rowwise() += b.transpose();
    out.middleRows(start, H.rows()) = pre.unaryExpr([inv_m1](double t) { return inv_m1 * sigma1(t); });
  });
  return out;
}

FeatureMap alg1_feature_map(const StageOneState& state, const Eigen::VectorXd& b) {
  if (b.size() != state.theta0.m1()) throw DimensionMismatch("alg1_feature_map: bias length");
  FeatureMap map;
  map.V = state.theta0.V;
  map.spec = state.theta0.spec;
  map.U = state.W1_unit;
  map.b = b;
  map.tile_rows = state.tile_rows;
  return map;
}

FeatureMap rf_feature_map(const NetworkParams& theta0, const Eigen::VectorXd& b) {
  if (b.size() != theta0.m1()) throw DimensionMismatch("rf_feature_map: bias length");
  FeatureMap map;
  map.V = theta0.V;
  map.spec = theta0.spec;
  const double inv_eps = theta0.epsilon > 0.0 ? 1.0 / theta0.epsilon : 0.0;
  map.U = (theta0.a.array() * inv_eps).matrix().asDiagonal() * theta0.W;
  map.b = b;
  return map;
}

double calibrate_eta(const FeatureMap& map, const Eigen::MatrixXd& X, double q, double ceiling) {
  require(X.rows() > 0, "calibrate_eta: calibration set is empty");
  require(q > 0.0 && q <= 1.0, "calibrate_eta: quantile must lie in (0, 1]");
  require(ceiling > 0.0, "calibrate_eta: ceiling must be positive");
  const Eigen::MatrixXd t = map.unit_preactivations(X);
  double level;
  if (q == 1.0) {
    level = t.cwiseAbs().maxCoeff();
  } else {
    std::vector<double> v(t.data(), t.data() + t.size());
    for (double& x : v) x = std::abs(x);
    const auto rank = static_cast<std::size_t>(std::ceil(q * v.size())) - 1;
    std::nth_element(v.begin(), v.begin() + rank, v.end());
    level = v[rank];
  }
  if (!(level >= 1e-30)) throw DegenerateScale("calibrate_eta: preactivation scale below 1e-30");
  return ceiling / level;
}

double power_method_lambda_max(const Eigen::MatrixXd& G, int max_iter, double tol) {
  const Eigen::Index m = G.rows();
  if (m == 0) return 0.0;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(m) / std::sqrt(static_cast<double>(m));
  double lam = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w = G * v;
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lam) <= tol * std::abs(next)) {
      lam = next;
      break;
    }
    lam = next;
  }
  // Rayleigh quotients approach from below; a final norm step bounds from above.
  return std::max(lam, (G * v).norm());
}

namespace {

struct Objective {
  Eigen::MatrixXd G;
  Eigen::VectorXd c;
  double yy = 0.0;  // ||y||^2 / n
};

Objective make_objective(const Eigen::MatrixXd& Psi, const Eigen::VectorXd& y) {
  if (Psi.rows() != y.size()) throw DimensionMismatch("ridge: Psi and y lengths differ");
  require(Psi.rows() > 0, "ridge: no samples");
  const double n = static_cast<double>(Psi.rows());
  Objective o;
  o.G = Eigen::MatrixXd::Zero(Psi.cols(), Psi.cols());
  o.G.selfadjointView<Eigen::Lower>().rankUpdate(Psi.transpose(), 1.0 / n);
  o.G = o.G.selfadjointView<Eigen::Lower>();
  o.c = Psi.transpose() * y / n;
  o.yy = y.squaredNorm() / n;
  return o;
}

bool keep_trace_row(long step, long total, long every) {
  return every > 0 && (step % every == 0 || step == total);
}

RidgeResult iterative_gd(const Objective& o, double lambda, const TrainConfig& cfg) {
  RidgeResult res;
  res.lambda = lambda;
  res.lambda_max = power_method_lambda_max(o.G);
  res.step_size = cfg.eta2 > 0.0 ? cfg.eta2 : 1.0 / (lambda + res.lambda_max);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(o.c.size());
  Eigen::VectorXd Ga = Eigen::VectorXd::Zero(o.c.size());
  double prev_loss = 0.5 * o.yy;
  double g0 = 0.0;
  int increases = 0;
  long step = 0;
  for (;; ++step) {
    const Eigen::VectorXd grad = Ga + lambda * a - o.c;
    const double gnorm = grad.norm();
    const double loss = 0.5 * a.dot(Ga) - o.c.dot(a) + 0.5 * o.yy + 0.5 * lambda * a.squaredNorm();
    if (step == 0) g0 = gnorm;
    if (!std::isfinite(loss)) throw NumericalDivergence("stage 2: loss is not finite");
    if (step > 0) {
      increases = loss > prev_loss ? increases + 1 : 0;
      if (increases >= cfg.divergence_window) {
        throw NumericalDivergence("stage 2: loss increased for " + std::to_string(increases) +
                                  " consecutive steps");
      }
    }
    prev_loss = loss;
    const bool done = step >= cfg.T || gnorm <= cfg.early_stop_rel * g0 || gnorm == 0.0;
    if (keep_trace_row(step, cfg.T, cfg.trace_every) || done) res.trace.push_back({step, loss, gnorm, a.norm()});
    if (done) break;
    a -= res.step_size * grad;
    Ga.noalias() = o.G * a;
  }
  res.steps = step;
  res.a = a;
  return res;
}

RidgeResult spectral_gd(const Objective& o, double lambda, const TrainConfig& cfg,
                        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>& es) {
  RidgeResult res;
  res.lambda = lambda;
  const Eigen::VectorXd k = es.eigenvalues().cwiseMax(0.0).array() + lambda;
  res.lambda_max = std::max(0.0, es.eigenvalues().maxCoeff());
  res.step_size = cfg.eta2 > 0.0 ? cfg.eta2 : 1.0 / (lambda + res.lambda_max);
  const double s = res.step_size;
  const Eigen::VectorXd ct = es.eigenvectors().transpose() * o.c;
  for (Eigen::Index i = 0; i < k.size(); ++i) {
    if (std::abs(1.0 - s * k[i]) > 1.0) throw NumericalDivergence("stage 2: step size exceeds 2 / L");
  }
  // In the eigenbasis the iterate after t steps is ct (1 - (1 - s k)^t) / k.
  auto coeffs = [&](double t) {
    Eigen::VectorXd alpha(k.size());
    for (Eigen::Index i = 0; i < k.size(); ++i) {
      alpha[i] = k[i] > 0.0 ? ct[i] * (1.0 - std::pow(1.0 - s * k[i], t)) / k[i] : ct[i] * s * t;
    }
    return alpha;
  };
  auto grad_norm = [&](double t) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < k.size(); ++i) {
      const double g = k[i] > 0.0 ? ct[i] * std::pow(1.0 - s * k[i], t) : ct[i];
      acc += g * g;
    }
    return std::sqrt(acc);
  };
  auto row = [&](long t) {
    const Eigen::VectorXd alpha = coeffs(static_cast<double>(t));
    const double loss = (0.5 * k.array() * alpha.array().square() - ct.array() * alpha.array()).sum() + 0.5 * o.yy;
    return TraceRow{t, loss, grad_norm(static_cast<double>(t)), alpha.norm()};
  };
  // The gradient norm is non-increasing in t, so the early-stop step is found by bisection.
  const double target = cfg.early_stop_rel * grad_norm(0.0);
  long steps = cfg.T;
  if (grad_norm(static_cast<double>(cfg.T)) <= target) {
    long lo = 0, hi = cfg.T;
    while (hi - lo > 1) {
      const long mid = lo + (hi - lo) / 2;
      (grad_norm(static_cast<double>(mid)) <= target ? hi : lo) = mid;
    }
    steps = grad_norm(0.0) <= target ? 0 : hi;
  }
  res.steps = steps;
  res.a = es.eigenvectors() * coeffs(static_cast<double>(steps));
  // Trace at every multiple of trace_every while short, then at powers of two.
  if (cfg.trace_every > 0) {
    for (long t = 0; t <= steps;) {
      res.trace.push_back(row(t));
      if (t < 1000) t += cfg.trace_every;
      else t *= 2;
    }
    if (res.trace.back().step != steps) res.trace.push_back(row(steps));
  }
  return res;
}

RidgeResult solve(const Objective& o, double lambda, const TrainConfig& cfg,
                  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>* es) {
  require(lambda >= 0.0, "ridge: lambda must be non-negative");
  if (cfg.backend == Stage2Backend::Iterative) return iterative_gd(o, lambda, cfg);
  return spectral_gd(o, lambda, cfg, *es);
}

}  // namespace

RidgeResult ridge_gd(const Eigen::MatrixXd& Psi, const Eigen::VectorXd& y, double lambda, const TrainConfig& cfg) {
  const Objective o = make_objective(Psi, y);
  if (cfg.backend == Stage2Backend::Iterative) return solve(o, lambda, cfg, nullptr);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(o.G);
  return solve(o, lambda, cfg, &es);
}

RidgeResult fit_stage2(const Eigen::MatrixXd& Psi, const Eigen::VectorXd& y, const TrainConfig& cfg) {
  if (cfg.lambda2 >= 0.0) return ridge_gd(Psi, y, cfg.lambda2, cfg);
  require(!cfg.lambda2_grid.empty(), "fit_stage2: lambda2 grid is empty");
  const Eigen::Index n = Psi.rows();
  const auto nv = static_cast<Eigen::Index>(std::floor(cfg.validation_fraction * n));
  require(nv >= 1 && nv < n, "fit_stage2: validation split is empty");
  const Eigen::MatrixXd Pt = Psi.bottomRows(n - nv);
  const Eigen::VectorXd yt = y.tail(n - nv);
  const Objective ot = make_objective(Pt, yt);
  const double trace_t = ot.G.trace();
  std::unique_ptr<Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>> es;
  if (cfg.backend == Stage2Backend::Spectral) es = std::make_unique<Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>>(ot.G);
  TrainConfig quiet = cfg;
  quiet.trace_every = 0;
  double best_err = std::numeric_limits<double>::infinity();
  double best_rel = cfg.lambda2_grid.front();
  for (double rel : cfg.lambda2_grid) {
    const RidgeResult r = solve(ot, rel * trace_t, quiet, es.get());
    const double err = (Psi.topRows(nv) * r.a - y.head(nv)).squaredNorm() / nv;
    if (err < best_err) {
      best_err = err;
      best_rel = rel;
    }
  }
  const Objective full = make_objective(Psi, y);
  if (es) es->compute(full.G);
  RidgeResult res = solve(full, best_rel * full.G.trace(), cfg, es.get());
  res.lambda_rel = best_rel;
  return res;
}

Eigen::VectorXd TrainedModel::predict(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd out(X.rows());
  constexpr Eigen::Index kChunk = 4096;
  for (Eigen::Index s = 0; s < X.rows(); s += kChunk) {
    const Eigen::Index len = std::min(kChunk, X.rows() - s);
    out.segment(s, len) = features.psi(X.middleRows(s, len)) * a;
  }
  return out;
}

NetworkParams TrainedModel::as_network(const NetworkParams& theta0) const {
  NetworkParams net = theta0;
  net.a = a;
  net.W = features.eta * features.U;
  net.b = features.b;
  return net;
}

namespace {

TrainedModel train_on_map(FeatureMap map, const Dataset& D, const TrainConfig& cfg, std::string method) {
  map.eta = cfg.eta > 0.0 ? cfg.eta : calibrate_eta(map, D.X, cfg.eta_quantile, cfg.eta_ceiling);
  const Eigen::MatrixXd Psi = map.psi(D.X);
  RidgeResult fit = fit_stage2(Psi, D.y, cfg);
  TrainedModel model;
  model.method = std::move(method);
  model.features = std::move(map);
  model.a = std::move(fit.a);
  model.lambda2 = fit.lambda;
  model.lambda2_rel = fit.lambda_rel;
  model.steps = fit.steps;
  model.trace = std::move(fit.trace);
  return model;
}

}  // namespace

TrainedModel stage2_train(const StageOneState& state, const Eigen::VectorXd& b, const Dataset& D2,
                          const TrainConfig& cfg, const Target& target2) {
  require(D2.n() > 0, "stage2_train: D2 is empty");
  const Dataset labelled = relabel(D2, target2);
  return train_on_map(alg1_feature_map(state, b), labelled, cfg, "alg1");
}

TrainedModel rf_baseline_train(const NetworkParams& theta0, const Eigen::VectorXd& b, const Dataset& D,
                               const TrainConfig& cfg) {
  require(D.n() > 0, "rf_baseline_train: dataset is empty");
  FeatureMap map = rf_feature_map(theta0, b);
  map.tile_rows = cfg.tile_rows;
  return train_on_map(std::move(map), D, cfg, "rf");
}

TestError test_error(const TrainedModel& model, const Target& target, int n_test, std::uint64_t seed) {
  require(n_test >= 2, "test_error: need at least two test points");
  const Eigen::MatrixXd X = sample_sphere(target.d(), n_test, seed);
  const Eigen::VectorXd diff = model.predict(X) - target(X);
  const Eigen::VectorXd abs = diff.cwiseAbs();
  const Eigen::VectorXd sq = diff.array().square();
  const McEstimate mae = mean_estimate(abs);
  const McEstimate mse = mean_estimate(sq);
  return {mae.estimate, mse.estimate, mae.std_error, mse.std_error, static_cast<std::size_t>(n_test)};
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream os(path);
  if (!os) throw Error("write_trace_csv: cannot open " + path);
  os << "step,loss,grad_norm,a_norm\n" << std::setprecision(17);
  for (const auto& r : trace) os << r.step << ',' << r.loss << ',' << r.grad_norm << ',' << r.a_norm << '\n';
}

void save_model(const TrainedModel& model, const NetworkParams& theta0, const std::string& path) {
  save_network(model.as_network(theta0), path,
               {{"method", model.method}, {"eta", model.features.eta}, {"lambda2", model.lambda2},
                {"lambda2_rel", model.lambda2_rel}, {"steps", model.steps}});
}

}  // namespace hfl
