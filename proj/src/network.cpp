#include "hfl/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "hfl/sphere_math.hpp"

namespace hfl {

ActivationSpec ActivationSpec::q2(int d) {
  ActivationSpec s;
  s.d = d;
  s.coeffs = {0.0, 0.0, 1.0};
  return s;
}

void ActivationSpec::validate() const {
  require(d >= 3, "ActivationSpec: d must be at least 3");
  require(coeffs.size() >= 3, "ActivationSpec: series must reach degree 2");
  require(max_degree() <= kMaxInnerDegree, "ActivationSpec: degree above 6 is not supported");
  require(coeffs[0] == 0.0 && coeffs[1] == 0.0, "ActivationSpec: degree 0 and 1 coefficients must vanish");
}

double sigma1(double t) {
  const double at = std::abs(t);
  return at < 1.0 ? t * t : 2.0 * at - 1.0;
}

double sigma1_prime(double t) {
  if (std::abs(t) < 1.0) return 2.0 * t;
  return t > 0 ? 2.0 : -2.0;
}

double sigma2(double t, const ActivationSpec& spec) {
  const int d = spec.d;
  if (spec.max_degree() == 2) return (t * t - d) * (spec.c(2) / (static_cast<double>(d) * (d - 1.0)));
  const auto q = gegenbauer_all(spec.max_degree(), d, t);
  double out = 0.0;
  for (int i = 2; i <= spec.max_degree(); ++i) out += spec.c(i) * q[i];
  return out;
}

double c_sigma(const ActivationSpec& spec) {
  constexpr int kGrid = 20000;
  double out = 0.0;
  for (int i = 0; i <= kGrid; ++i) {
    const double t = -spec.d + 2.0 * spec.d * i / kGrid;
    out = std::max(out, std::abs(sigma2(t, spec)));
  }
  return out;
}

InnerMoments inner_activation_moments(const ActivationSpec& spec, int n, std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::MatrixXd X = sample_sphere(spec.d, n, rng);
  const Eigen::MatrixXd Vv = sample_sphere(spec.d, n, rng);
  const Eigen::VectorXd t = (X.array() * Vv.array()).rowwise().sum();
  Eigen::VectorXd s2(n), s4(n);
  for (int i = 0; i < n; ++i) {
    const double s = sigma2(t[i], spec);
    s2[i] = s * s;
    s4[i] = s2[i] * s2[i];
  }
  return {mean_estimate(s2), mean_estimate(s4)};
}

NetworkParams init_network(int d, int m1, int m2, double epsilon, std::uint64_t seed,
                           const ActivationSpec& spec) {
  require(m1 >= 2 && m1 % 2 == 0, "init_network: m1 must be even");
  require(m2 >= 1, "init_network: m2 must be positive");
  require(epsilon >= 0.0, "init_network: epsilon must be non-negative");
  require(spec.d == d, "init_network: activation dimension differs from d");
  spec.validate();
  NetworkParams theta;
  theta.epsilon = epsilon;
  theta.seed = seed;
  theta.spec = spec;
  theta.V = sample_sphere(d, m2, derive_seed(seed, "V"));
  Rng rng(derive_seed(seed, "init"));
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int half = m1 / 2;
  theta.a.resize(m1);
  theta.W.resize(m1, m2);
  theta.b = Eigen::VectorXd::Zero(m1);
  for (int j = 0; j < half; ++j) {
    const double s = coin(rng) ? 1.0 : -1.0;
    theta.a[j] = s;
    theta.a[m1 - 1 - j] = -s;
    for (int k = 0; k < m2; ++k) theta.W(j, k) = epsilon * normal(rng);
    theta.W.row(m1 - 1 - j) = theta.W.row(j);
  }
  return theta;
}

Eigen::MatrixXd compute_h0(const Eigen::MatrixXd& V, const Eigen::MatrixXd& X, const ActivationSpec& spec) {
  if (X.rows() > 0 && X.cols() != V.cols()) throw DimensionMismatch("compute_h0: X width differs from d");
  Eigen::MatrixXd T = X * V.transpose();
  if (spec.max_degree() == 2) {
    const double d = spec.d;
    const double scale = spec.c(2) / (static_cast<double>(spec.d) * (d - 1.0));
    T.array() = (T.array().square() - d) * scale;
  } else {
    T = T.unaryExpr([&spec](double t) { return sigma2(t, spec); });
  }
  return T;
}

Eigen::VectorXd forward(const NetworkParams& theta, const Eigen::MatrixXd& X, int tile_rows) {
  if (X.rows() > 0 && X.cols() != theta.d()) throw DimensionMismatch("forward: X width differs from d");
  if (theta.W.rows() != theta.m1() || theta.W.cols() != theta.m2() || theta.b.size() != theta.m1()) {
    throw DimensionMismatch("forward: inconsistent parameter shapes");
  }
  Eigen::VectorXd out(X.rows());
  const double inv_m1 = 1.0 / theta.m1();
  for_each_h0_tile(theta.V, X, theta.spec, tile_rows, [&](Eigen::Index start, const Eigen::MatrixXd& H) {
    Eigen::MatrixXd pre = H * theta.W.transpose();
    pre.rowwise() += theta.b.transpose();
    pre = pre.unaryExpr([](double t) { return sigma1(t); });
    out.segment(start, H.rows()) = inv_m1 * (pre * theta.a);
  });
  return out;
}

double default_epsilon(const ActivationSpec& spec, long n1, int m1, int m2) {
  require(n1 >= 1 && m1 >= 1 && m2 >= 1, "default_epsilon: sizes must be positive");
  const double iota = std::max(1.0, std::log(static_cast<double>(n1) * m1));
  return 1.0 / (c_sigma(spec) * std::sqrt(2.0 * iota * m2));
}

nlohmann::json to_json(const ActivationSpec& spec) { return {{"d", spec.d}, {"coeffs", spec.coeffs}}; }

ActivationSpec activation_from_json(const nlohmann::json& j) {
  ActivationSpec s;
  s.d = j.at("d").get<int>();
  s.coeffs = j.at("coeffs").get<std::vector<double>>();
  s.validate();
  return s;
}

namespace {

constexpr char kMagic[8] = {'H', 'F', 'L', 'N', 'E', 'T', '0', '1'};

void write_rowmajor(std::ofstream& os, const Eigen::MatrixXd& M) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> R = M;
  os.write(reinterpret_cast<const char*>(R.data()), static_cast<std::streamsize>(sizeof(double) * R.size()));
}

Eigen::MatrixXd read_rowmajor(std::ifstream& is, Eigen::Index rows, Eigen::Index cols) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> R(rows, cols);
  is.read(reinterpret_cast<char*>(R.data()), static_cast<std::streamsize>(sizeof(double) * R.size()));
  if (!is) throw Error("load_network: truncated file");
  return R;
}

}  // namespace

void save_network(const NetworkParams& theta, const std::string& path, const nlohmann::json& extra) {
  nlohmann::json header = {{"d", theta.d()},           {"m1", theta.m1()}, {"m2", theta.m2()},
                           {"epsilon", theta.epsilon}, {"seed", theta.seed}, {"spec", to_json(theta.spec)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save_network: cannot open " + path);
  os.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_rowmajor(os, theta.a);
  write_rowmajor(os, theta.W);
  write_rowmajor(os, theta.b);
  write_rowmajor(os, theta.V);
  if (!os) throw Error("save_network: write failed for " + path);
}

NetworkParams load_network(const std::string& path, nlohmann::json* header_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load_network: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw Error("load_network: bad magic");
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!is || len > (std::uint64_t{1} << 24)) throw Error("load_network: bad header length");
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  NetworkParams theta;
  const int d = header.at("d"), m1 = header.at("m1"), m2 = header.at("m2");
  theta.epsilon = header.at("epsilon");
  theta.seed = header.at("seed");
  theta.spec = activation_from_json(header.at("spec"));
  theta.a = read_rowmajor(is, m1, 1);
  theta.W = read_rowmajor(is, m1, m2);
  theta.b = read_rowmajor(is, m1, 1);
  theta.V = read_rowmajor(is, m2, d);
  if (header_out) *header_out = header;
  return theta;
}

}  // namespace hfl
