#include "hfl/targets.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hfl/sphere_math.hpp"

namespace hfl {

namespace {

std::size_t ipow(int base, int exp) {
  std::size_t out = 1;
  for (int i = 0; i < exp; ++i) out *= static_cast<std::size_t>(base);
  return out;
}

// Multi-index (i_1..i_k) of a flat row-major offset into an r^k tensor.
std::vector<int> unflatten(std::size_t flat, int r, int k) {
  std::vector<int> idx(k);
  for (int pos = k - 1; pos >= 0; --pos) {
    idx[pos] = static_cast<int>(flat % r);
    flat /= r;
  }
  return idx;
}

std::size_t flatten(const std::vector<int>& idx, int r) {
  std::size_t flat = 0;
  for (int i : idx) flat = flat * r + i;
  return flat;
}

std::vector<int> powers_of(const std::vector<int>& idx, int r) {
  std::vector<int> pw(r, 0);
  for (int i : idx) ++pw[i];
  return pw;
}

double multinomial(const std::vector<int>& powers) {
  int total = 0;
  double out = 1.0;
  for (int p : powers) {
    for (int i = 1; i <= p; ++i) {
      ++total;
      out *= static_cast<double>(total) / i;
    }
  }
  return out;
}

double double_factorial(int n) {
  double out = 1.0;
  for (int i = n; i > 1; i -= 2) out *= i;
  return out;
}

}  // namespace

LinkPolynomial::LinkPolynomial(int r, std::vector<std::vector<double>> tensors)
    : r_(r), tensors_(std::move(tensors)) {
  require(r >= 1, "LinkPolynomial: r must be positive");
  if (tensors_.empty()) tensors_.push_back({0.0});
  for (std::size_t k = 0; k < tensors_.size(); ++k) {
    const auto& T = tensors_[k];
    if (T.size() != ipow(r, static_cast<int>(k))) {
      throw DimensionMismatch("LinkPolynomial: tensor " + std::to_string(k) + " has wrong size");
    }
    for (std::size_t f = 0; f < T.size(); ++f) {
      auto idx = unflatten(f, r, static_cast<int>(k));
      std::sort(idx.begin(), idx.end());
      const double ref = T[flatten(idx, r)];
      if (std::abs(T[f] - ref) > 1e-12 * std::max(1.0, std::abs(ref))) {
        throw InvariantFailure("LinkPolynomial: tensor " + std::to_string(k) + " is not symmetric");
      }
    }
  }
  while (tensors_.size() > 1 &&
         std::all_of(tensors_.back().begin(), tensors_.back().end(), [](double v) { return v == 0.0; })) {
    tensors_.pop_back();
  }
  build_monomials();
}

void LinkPolynomial::build_monomials() {
  monomials_.clear();
  for (std::size_t k = 0; k < tensors_.size(); ++k) {
    const auto& T = tensors_[k];
    for (std::size_t f = 0; f < T.size(); ++f) {
      const auto idx = unflatten(f, r_, static_cast<int>(k));
      if (!std::is_sorted(idx.begin(), idx.end()) || T[f] == 0.0) continue;
      const auto pw = powers_of(idx, r_);
      monomials_.push_back({T[f] * multinomial(pw), pw});
    }
  }
}

LinkPolynomial LinkPolynomial::from_monomials(int r, const std::vector<Monomial>& monomials) {
  require(r >= 1, "from_monomials: r must be positive");
  std::map<std::vector<int>, double> acc;
  int degree = 0;
  for (const auto& m : monomials) {
    if (static_cast<int>(m.powers.size()) != r) throw DimensionMismatch("from_monomials: power vector length");
    int deg = 0;
    for (int p : m.powers) {
      require(p >= 0, "from_monomials: negative power");
      deg += p;
    }
    degree = std::max(degree, deg);
    acc[m.powers] += m.coef;
  }
  std::vector<std::vector<double>> tensors(degree + 1);
  for (int k = 0; k <= degree; ++k) {
    tensors[k].assign(ipow(r, k), 0.0);
    for (std::size_t f = 0; f < tensors[k].size(); ++f) {
      const auto pw = powers_of(unflatten(f, r, k), r);
      auto it = acc.find(pw);
      if (it != acc.end()) tensors[k][f] = it->second / multinomial(pw);
    }
  }
  return LinkPolynomial(r, std::move(tensors));
}

LinkPolynomial LinkPolynomial::power_sum(int r, int power, double coef, double constant) {
  std::vector<Monomial> ms;
  if (constant != 0.0) ms.push_back({constant, std::vector<int>(r, 0)});
  for (int k = 0; k < r; ++k) {
    std::vector<int> pw(r, 0);
    pw[k] = power;
    ms.push_back({coef, pw});
  }
  return from_monomials(r, ms);
}

double LinkPolynomial::eval(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  if (z.size() != r_) throw DimensionMismatch("LinkPolynomial::eval: wrong input length");
  double out = 0.0;
  for (const auto& m : monomials_) {
    double term = m.coef;
    for (int i = 0; i < r_; ++i)
      for (int e = 0; e < m.powers[i]; ++e) term *= z[i];
    out += term;
  }
  return out;
}

Eigen::MatrixXd LinkPolynomial::hessian_at(const Eigen::Ref<const Eigen::VectorXd>& z) const {
  if (z.size() != r_) throw DimensionMismatch("LinkPolynomial::hessian_at: wrong input length");
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(r_, r_);
  std::vector<int> pw;
  for (const auto& m : monomials_) {
    for (int a = 0; a < r_; ++a) {
      for (int b = a; b < r_; ++b) {
        pw = m.powers;
        double term = m.coef * pw[a];
        if (pw[a] == 0) continue;
        --pw[a];
        term *= pw[b];
        if (pw[b] == 0) continue;
        --pw[b];
        for (int i = 0; i < r_; ++i)
          for (int e = 0; e < pw[i]; ++e) term *= z[i];
        H(a, b) += term;
      }
    }
  }
  return H.selfadjointView<Eigen::Upper>();
}

LinkPolynomial LinkPolynomial::affine(double shift, double scale) const {
  require(scale != 0.0, "LinkPolynomial::affine: zero scale");
  auto tensors = tensors_;
  tensors[0][0] -= shift;
  for (auto& T : tensors)
    for (double& v : T) v /= scale;
  return LinkPolynomial(r_, std::move(tensors));
}

Eigen::VectorXd eval_link(const LinkPolynomial& g, const Eigen::MatrixXd& Z) {
  if (Z.rows() > 0 && Z.cols() != g.r()) throw DimensionMismatch("eval_link: column count differs from r");
  const int p = g.degree();
  const Eigen::Index n = Z.rows();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  // powers[e] holds Z^e elementwise
  std::vector<Eigen::ArrayXXd> powers(p + 1);
  powers[0] = Eigen::ArrayXXd::Ones(n, g.r());
  for (int e = 1; e <= p; ++e) powers[e] = powers[e - 1] * Z.array();
  for (const auto& m : g.monomials()) {
    Eigen::ArrayXd term = Eigen::ArrayXd::Constant(n, m.coef);
    for (int i = 0; i < g.r(); ++i) {
      if (m.powers[i] > 0) term *= powers[m.powers[i]].col(i);
    }
    out.array() += term;
  }
  return out;
}

HessianMatrix expected_hessian(const LinkPolynomial& g, HessianMode mode, std::size_t n_mc,
                               std::uint64_t seed) {
  const int r = g.r();
  HessianMatrix out;
  if (mode == HessianMode::Analytic) {
    if (g.degree() > 6) throw ConfigError("expected_hessian: analytic mode supports degree <= 6");
    out.H = Eigen::MatrixXd::Zero(r, r);
    out.std_error = Eigen::MatrixXd::Zero(r, r);
    for (int k = 2; k <= g.degree(); k += 2) {
      const auto& T = g.tensor(k);
      const int m = (k - 2) / 2;
      const double weight = k * (k - 1.0) * double_factorial(k - 3);
      const std::size_t inner = ipow(r, m);
      for (int a = 0; a < r; ++a) {
        for (int b = 0; b < r; ++b) {
          double sum = 0.0;
          for (std::size_t f = 0; f < inner; ++f) {
            const auto js = unflatten(f, r, m);
            std::vector<int> idx{a, b};
            for (int j : js) {
              idx.push_back(j);
              idx.push_back(j);
            }
            sum += T[flatten(idx, r)];
          }
          out.H(a, b) += weight * sum;
        }
      }
    }
  } else {
    require(n_mc >= 2, "expected_hessian: n_mc must be at least 2");
    Rng rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(r, r);
    Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(r, r);
    Eigen::VectorXd z(r);
    for (std::size_t i = 0; i < n_mc; ++i) {
      for (int c = 0; c < r; ++c) z[c] = normal(rng);
      Eigen::MatrixXd h = g.hessian_at(z);
      h = 0.5 * (h + h.transpose());
      sum += h;
      sumsq += h.cwiseProduct(h);
    }
    const double n = static_cast<double>(n_mc);
    out.H = sum / n;
    const Eigen::MatrixXd var = ((sumsq / n) - out.H.cwiseProduct(out.H)) * (n / (n - 1.0));
    out.std_error = (var.cwiseMax(0.0) / n).cwiseSqrt();
    out.n_mc = n_mc;
  }
  out.H = 0.5 * (out.H + out.H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.H, Eigen::EigenvaluesOnly);
  out.lambda_min = es.eigenvalues()[0];
  return out;
}

Eigen::VectorXd Target::operator()(const Eigen::MatrixXd& X) const {
  Eigen::VectorXd raw = eval_link(link, eval_features(features, X));
  return (raw.array() - shift) / scale;
}

Target standardize_target(const LinkPolynomial& g, const FeatureSet& F, std::size_t n_cal,
                          std::uint64_t seed, std::string id) {
  require(n_cal >= 2, "standardize_target: n_cal must be at least 2");
  require(g.r() == F.r(), "standardize_target: link and feature set disagree on r");
  Rng rng(seed);
  Eigen::VectorXd values(static_cast<Eigen::Index>(n_cal));
  constexpr std::size_t kChunk = 1 << 16;
  for (std::size_t done = 0; done < n_cal;) {
    const std::size_t len = std::min(kChunk, n_cal - done);
    const Eigen::MatrixXd X = sample_sphere(F.d(), static_cast<int>(len), rng);
    values.segment(done, len) = eval_link(g, eval_features(F, X));
    done += len;
  }
  const double mean = values.mean();
  const double var = (values.array() - mean).square().mean();
  if (!(var >= 1e-12)) throw ScaleUnderflow("standardize_target: calibration variance below 1e-12");
  Target t;
  t.link = g;
  t.features = F;
  t.shift = mean;
  t.scale = std::sqrt(var);
  t.id = std::move(id);
  t.degenerate = g.degree() == 1;
  t.n_cal = n_cal;
  t.cal_seed = seed;
  return t;
}

Target make_standard_target(int d, int p, const FeatureSet& F, std::size_t n_cal, std::uint64_t seed) {
  require(p >= 1, "make_standard_target: p must be at least 1");
  require(F.d() == d, "make_standard_target: feature set dimension differs from d");
  return standardize_target(LinkPolynomial::power_sum(F.r(), p), F, n_cal, seed,
                            "f_d" + std::to_string(d) + "_p" + std::to_string(p));
}

Target raw_target(const LinkPolynomial& g, const FeatureSet& F, std::string id) {
  require(g.r() == F.r(), "raw_target: link and feature set disagree on r");
  Target t;
  t.link = g;
  t.features = F;
  t.id = std::move(id);
  t.degenerate = g.degree() == 1;
  return t;
}

McEstimate projection_norm(const Target& f, int k, std::size_t n_pairs, std::uint64_t seed) {
  require(k >= 0, "projection_norm: k must be non-negative");
  require(n_pairs >= 2, "projection_norm: need at least two pairs");
  const int d = f.d();
  const double B = static_cast<double>(harmonic_dim(d, k));
  Rng rng(seed);
  Eigen::VectorXd values(static_cast<Eigen::Index>(n_pairs));
  constexpr std::size_t kChunk = 1 << 15;
  for (std::size_t done = 0; done < n_pairs;) {
    const std::size_t len = std::min(kChunk, n_pairs - done);
    const Eigen::MatrixXd X = sample_sphere(d, static_cast<int>(len), rng);
    const Eigen::MatrixXd Xp = sample_sphere(d, static_cast<int>(len), rng);
    const Eigen::VectorXd fx = f(X);
    const Eigen::VectorXd fxp = f(Xp);
    const Eigen::VectorXd dots = (X.array() * Xp.array()).rowwise().sum();
    for (std::size_t i = 0; i < len; ++i) {
      values[done + i] = B * fx[i] * fxp[i] * gegenbauer(k, d, dots[i]);
    }
    done += len;
  }
  return mean_estimate(values);
}

TargetDiagnostics hermite_target_check(const Target& f, std::size_t n, std::uint64_t seed) {
  TargetDiagnostics out;
  const Eigen::MatrixXd X = sample_sphere(f.d(), static_cast<int>(n), derive_seed(seed, "check-mean"));
  const Eigen::VectorXd fx = f(X);
  out.mean = mean_estimate(fx);
  const Eigen::VectorXd sq = fx.array().square();
  out.second_moment = mean_estimate(sq);
  out.p2_norm_sq = projection_norm(f, 2, n, derive_seed(seed, "check-p2"));
  out.p2_fraction = out.second_moment.estimate > 0 ? out.p2_norm_sq.estimate / out.second_moment.estimate : 0.0;
  out.p2_dominant = f.degenerate || out.p2_fraction > 0.9;
  const LinkPolynomial g = f.standardized_link();
  const HessianMatrix H = g.degree() <= 6 ? expected_hessian(g)
                                          : expected_hessian(g, HessianMode::MonteCarlo, 100000, seed);
  out.lambda_min = H.lambda_min;
  out.sqrt_r_lambda_min = std::sqrt(static_cast<double>(g.r())) * H.lambda_min;
  if (std::abs(out.mean.estimate) > 5.0 * out.mean.std_error + 1e-3) {
    out.warnings.push_back("target mean is not zero");
  }
  if (out.p2_dominant) out.warnings.push_back("degenerate: P2 dominant");
  if (!(H.lambda_min > 0.0)) out.warnings.push_back("expected Hessian is not positive definite");
  return out;
}

nlohmann::json to_json(const LinkPolynomial& g) {
  return {{"r", g.r()}, {"degree", g.degree()}, {"tensors", g.tensors()}};
}

LinkPolynomial link_from_json(const nlohmann::json& j) {
  return LinkPolynomial(j.at("r").get<int>(), j.at("tensors").get<std::vector<std::vector<double>>>());
}

nlohmann::json to_json(const Target& t) {
  return {{"id", t.id},
          {"link", to_json(t.link)},
          {"features", to_json(t.features)},
          {"shift", t.shift},
          {"scale", t.scale},
          {"degenerate", t.degenerate},
          {"provenance", {{"n_cal", t.n_cal}, {"seed", t.cal_seed}}}};
}

Target target_from_json(const nlohmann::json& j) {
  Target t;
  t.id = j.value("id", std::string("custom"));
  t.link = link_from_json(j.at("link"));
  t.features = feature_set_from_json(j.at("features"));
  t.shift = j.at("shift").get<double>();
  t.scale = j.at("scale").get<double>();
  t.degenerate = j.value("degenerate", false);
  if (j.contains("provenance")) {
    t.n_cal = j["provenance"].value("n_cal", std::size_t{0});
    t.cal_seed = j["provenance"].value("seed", std::uint64_t{0});
  }
  return t;
}

}  // namespace hfl
