#include "hfl/experiments.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "hfl/features.hpp"
#include "hfl/network.hpp"
#include "hfl/reconstruction.hpp"
#include "hfl/sphere_math.hpp"
#include "hfl/targets.hpp"
#include "hfl/universality.hpp"

namespace fs = std::filesystem;

namespace hfl {

// ---------------------------------------------------------------- config

ExperimentConfig ExperimentConfig::defaults_for(const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = experiment;
  if (experiment == "reconstruct") {
    c.m2 = 8192;
    c.seeds = {0};
  } else if (experiment == "universality") {
    c.d_grid = {8, 16, 32, 64};
    c.seeds = {0};
  } else if (experiment == "verify") {
    c.seeds = {0};
  } else if (experiment != "compare" && experiment != "transfer") {
    throw ConfigError("unknown experiment '" + experiment + "'");
  }
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
  static const std::set<std::string> kinds = {"compare", "transfer", "reconstruct", "universality", "verify"};
  if (!kinds.count(experiment)) fail("unknown experiment '" + experiment + "'");
  if (d_grid.empty()) fail("d_grid must be non-empty");
  for (int d : d_grid)
    if (d < 4 || d % 4 != 0) fail("every d must be a positive multiple of 4 (sign features)");
  if (r != 3) fail("r must be 3 for the sign-pattern feature family");
  if (p < 1 || p_pretrain < 1) fail("link degrees must be at least 1");
  for (int q : p_transfer)
    if (q < 1) fail("transfer degrees must be at least 1");
  if (experiment == "transfer" && p_transfer.empty()) fail("p_transfer must be non-empty");
  if (experiment == "compare" && n_grid.empty()) fail("n_grid must be non-empty");
  for (long n : n_grid)
    if (n < 10) fail("every n in n_grid must be at least 10");
  if (experiment == "transfer" && n2_grid.empty()) fail("n2_grid must be non-empty");
  for (long n : n2_grid)
    if (n < 5) fail("every n2 must be at least 5");
  for (long n : n1_grid)
    if (n < 1) fail("every n1 must be positive");
  if (n1 < 1) fail("n1 must be positive");
  if (m1 < 2 || m1 % 2 != 0) fail("m1 must be even and positive");
  if (m2 < 1) fail("m2 must be positive");
  if (seeds.empty()) fail("seeds must be non-empty");
  if (n_test < 2) fail("n_test must be at least 2");
  if (n_cal < 2) fail("n_cal must be at least 2");
  if (T < 0) fail("T must be non-negative");
  if (backend != "spectral" && backend != "iterative") fail("backend must be spectral or iterative");
  if (!(eta_quantile > 0.0 && eta_quantile <= 1.0)) fail("eta_quantile must lie in (0, 1]");
  if (tile_rows < 1) fail("tile_rows must be positive");
  if (n_univ < 1000) fail("n_univ must be at least 1000");
  if (L < 1) fail("L must be positive");
  if (hessian != "analytic" && hessian != "monte_carlo") fail("hessian must be analytic or monte_carlo");
  if (!feature_order.empty()) {
    std::vector<int> sorted = feature_order;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < static_cast<int>(sorted.size()); ++i)
      if (sorted[i] != i || static_cast<int>(sorted.size()) != r) fail("feature_order must be a permutation of 0..r-1");
  }
  if (!inject_fault.empty() && inject_fault != "q2_constant") fail("unknown fault '" + inject_fault + "'");
  if (jobs < 1) fail("jobs must be positive");
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.T = T;
  t.backend = backend == "iterative" ? Stage2Backend::Iterative : Stage2Backend::Spectral;
  t.lambda2 = lambda2;
  t.eta_quantile = eta_quantile;
  t.tile_rows = tile_rows;
  return t;
}

nlohmann::json ExperimentConfig::to_json() const {
  return {{"experiment", experiment}, {"d_grid", d_grid},     {"r", r},
          {"p", p},                   {"p_pretrain", p_pretrain}, {"p_transfer", p_transfer},
          {"n_grid", n_grid},         {"n1", n1},             {"n2_grid", n2_grid},
          {"n1_grid", n1_grid},       {"m1", m1},             {"m2", m2},
          {"seeds", seeds},           {"n_test", n_test},     {"n_cal", n_cal},
          {"T", T},                   {"backend", backend},   {"lambda2", lambda2},
          {"eta_quantile", eta_quantile}, {"tile_rows", tile_rows}, {"n_univ", n_univ},
          {"L", L},                   {"hessian", hessian},   {"feature_order", feature_order},
          {"timing", timing},         {"inject_fault", inject_fault}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, const std::string& experiment) {
  ExperimentConfig c = defaults_for(j.value("experiment", experiment));
  nlohmann::json base = c.to_json();
  base["out_dir"] = c.out_dir;
  base["jobs"] = c.jobs;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + it.key() + "'");
    base[it.key()] = it.value();
  }
  try {
    c.experiment = base.at("experiment").get<std::string>();
    c.d_grid = base.at("d_grid").get<std::vector<int>>();
    c.r = base.at("r");
    c.p = base.at("p");
    c.p_pretrain = base.at("p_pretrain");
    c.p_transfer = base.at("p_transfer").get<std::vector<int>>();
    c.n_grid = base.at("n_grid").get<std::vector<long>>();
    c.n1 = base.at("n1");
    c.n2_grid = base.at("n2_grid").get<std::vector<long>>();
    c.n1_grid = base.at("n1_grid").get<std::vector<long>>();
    c.m1 = base.at("m1");
    c.m2 = base.at("m2");
    c.seeds = base.at("seeds").get<std::vector<std::uint64_t>>();
    c.n_test = base.at("n_test");
    c.n_cal = base.at("n_cal");
    c.T = static_cast<long>(base.at("T").get<double>());
    c.backend = base.at("backend").get<std::string>();
    c.lambda2 = base.at("lambda2");
    c.eta_quantile = base.at("eta_quantile");
    c.tile_rows = base.at("tile_rows");
    c.n_univ = base.at("n_univ");
    c.L = base.at("L");
    c.hessian = base.at("hessian").get<std::string>();
    c.feature_order = base.at("feature_order").get<std::vector<int>>();
    c.timing = base.at("timing");
    c.inject_fault = base.at("inject_fault").get<std::string>();
    c.out_dir = base.at("out_dir").get<std::string>();
    c.jobs = base.at("jobs");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

std::string ExperimentConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

nlohmann::json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
      return nullptr;
    case YAML::NodeType::Scalar: {
      const std::string s = node.Scalar();
      if (node.Tag() == "!") return s;  // quoted
      if (s == "true" || s == "false") return s == "true";
      try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos == s.size()) return v;
      } catch (...) {
      }
      try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos == s.size()) return v;
      } catch (...) {
      }
      return s;
    }
    case YAML::NodeType::Sequence: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& child : node) arr.push_back(yaml_to_json(child));
      return arr;
    }
    case YAML::NodeType::Map: {
      nlohmann::json obj = nlohmann::json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    default:
      return nullptr;
  }
}

nlohmann::json full_json(const ExperimentConfig& c) {
  nlohmann::json j = c.to_json();
  j["out_dir"] = c.out_dir;
  j["jobs"] = c.jobs;
  return j;
}

}  // namespace

ExperimentConfig apply_yaml(const ExperimentConfig& base, const std::string& yaml_text) {
  YAML::Node node;
  try {
    node = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML parse error: ") + e.what());
  }
  if (node.IsNull()) return base;
  if (!node.IsMap()) throw ConfigError("config: top level must be a mapping");
  nlohmann::json j = full_json(base);
  const nlohmann::json overlay = yaml_to_json(node);
  if (overlay.contains("experiment") && overlay["experiment"] != base.experiment) {
    throw ConfigError("config: file is for experiment '" + overlay["experiment"].get<std::string>() + "'");
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) j[it.key()] = it.value();
  return ExperimentConfig::from_json(j, base.experiment);
}

ExperimentConfig load_config(const std::string& path, const std::string& experiment) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return apply_yaml(ExperimentConfig::defaults_for(experiment), ss.str());
}

std::string config_to_yaml(const ExperimentConfig& cfg) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  const nlohmann::json j = full_json(cfg);
  for (auto it = j.begin(); it != j.end(); ++it) {
    out << YAML::Key << it.key() << YAML::Value;
    const auto& v = it.value();
    if (v.is_array()) {
      out << YAML::Flow << YAML::BeginSeq;
      for (const auto& e : v) out << e.dump();
      out << YAML::EndSeq;
    } else if (v.is_string()) {
      out << YAML::DoubleQuoted << v.get<std::string>();
    } else {
      out << v.dump();
    }
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------- runs

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

FeatureSet features_for(const ExperimentConfig& cfg, int d) {
  FeatureSet F = make_sign_features(d);
  return cfg.feature_order.empty() ? F : F.permuted(cfg.feature_order);
}

Target target_for(const ExperimentConfig& cfg, int d, int p, const FeatureSet& F, std::uint64_t seed) {
  return make_standard_target(d, p, F, static_cast<std::size_t>(cfg.n_cal),
                              derive_seed(seed, "calibration-p" + std::to_string(p)));
}

NetworkParams network_for(const ExperimentConfig& cfg, int d, long n1, std::uint64_t seed) {
  const ActivationSpec spec = ActivationSpec::q2(d);
  return init_network(d, cfg.m1, cfg.m2, default_epsilon(spec, n1, cfg.m1, cfg.m2), seed, spec);
}

std::string tag(const std::string& key, long v) { return "-" + key + std::to_string(v); }

ResultRow make_row(const ExperimentConfig& cfg, const std::string& run_id, const std::string& method, int d, int p,
                   long n1, long n2, std::uint64_t seed, const TestError& err, double wall) {
  ResultRow row;
  row.run_id = run_id;
  row.experiment = cfg.experiment;
  row.method = method;
  row.d = d;
  row.r = cfg.r;
  row.p = p;
  row.n1 = n1;
  row.n2 = n2;
  row.m1 = cfg.m1;
  row.m2 = cfg.m2;
  row.seed = seed;
  row.test_mae = err.mae;
  row.test_mse = err.mse;
  row.mae_stderr = err.mae_se;
  row.wall_seconds = cfg.timing ? wall : 0.0;
  return row;
}

RunOutput compare_unit(const ExperimentConfig& cfg, const std::string& id, int d, long n, std::uint64_t seed) {
  RunOutput out;
  const TrainConfig tcfg = cfg.train_config();
  const FeatureSet F = features_for(cfg, d);
  const Target target = target_for(cfg, d, cfg.p, F, seed);
  const long n1 = n / 2;
  const long n2 = n - n1;
  const NetworkParams theta0 = network_for(cfg, d, n1, seed);
  const Eigen::VectorXd b = reinit_bias(cfg.m1, derive_seed(seed, "bias"));
  const Dataset D1 = make_dataset(target, static_cast<int>(n1), derive_seed(seed, "D1"));
  const Dataset D2 = make_dataset(target, static_cast<int>(n2), derive_seed(seed, "D2"));
  const std::uint64_t test_seed = derive_seed(seed, "test");

  auto t0 = Clock::now();
  const StageOneState state = stage1_step(theta0, D1, tcfg);
  const TrainedModel alg1 = stage2_train(state, b, D2, tcfg, target);
  const TestError e1 = test_error(alg1, target, cfg.n_test, test_seed);
  out.results.push_back(make_row(cfg, id + "-alg1", "alg1", d, cfg.p, n1, n2, seed, e1, seconds_since(t0)));
  out.traces.emplace_back(id + "-alg1", alg1.trace);

  t0 = Clock::now();
  Dataset D;
  D.X.resize(n, d);
  D.X << D1.X, D2.X;
  D.y.resize(n);
  D.y << D1.y, D2.y;
  const TrainedModel rf = rf_baseline_train(theta0, b, D, tcfg);
  const TestError e2 = test_error(rf, target, cfg.n_test, test_seed);
  out.results.push_back(make_row(cfg, id + "-rf", "rf", d, cfg.p, n, 0, seed, e2, seconds_since(t0)));
  out.traces.emplace_back(id + "-rf", rf.trace);
  return out;
}

RunOutput transfer_unit(const ExperimentConfig& cfg, const std::string& id, int d, std::uint64_t seed) {
  RunOutput out;
  const TrainConfig tcfg = cfg.train_config();
  const FeatureSet F = features_for(cfg, d);
  const Target pre = target_for(cfg, d, cfg.p_pretrain, F, seed);
  const NetworkParams theta0 = network_for(cfg, d, cfg.n1, seed);
  const Eigen::VectorXd b = reinit_bias(cfg.m1, derive_seed(seed, "bias"));
  const Dataset D1 = make_dataset(pre, static_cast<int>(cfg.n1), derive_seed(seed, "D1"));
  auto t0 = Clock::now();
  const StageOneState state = stage1_step(theta0, D1, tcfg);
  const double stage1_seconds = seconds_since(t0);
  std::vector<Target> targets;
  for (int p : cfg.p_transfer) targets.push_back(target_for(cfg, d, p, F, seed));
  for (long n2 : cfg.n2_grid) {
    const Dataset D2 = make_dataset(pre, static_cast<int>(n2), derive_seed(seed, "D2"));
    for (std::size_t k = 0; k < targets.size(); ++k) {
      t0 = Clock::now();
      const TrainedModel model = stage2_train(state, b, D2, tcfg, targets[k]);
      const TestError err = test_error(model, targets[k], cfg.n_test, derive_seed(seed, "test"));
      const std::string rid = id + tag("n2_", n2) + tag("p", cfg.p_transfer[k]);
      out.results.push_back(make_row(cfg, rid, "transfer", d, cfg.p_transfer[k], cfg.n1, n2, seed, err,
                                     seconds_since(t0) + stage1_seconds));
      out.traces.emplace_back(rid, model.trace);
    }
  }
  return out;
}

RunOutput reconstruct_unit(const ExperimentConfig& cfg, int d, long n1, std::uint64_t seed) {
  RunOutput out;
  const FeatureSet F = features_for(cfg, d);
  const Target f2 = target_for(cfg, d, cfg.p_pretrain, F, seed);
  StageOneState state;
  state.theta0 = network_for(cfg, d, n1, seed);
  state.D1 = make_dataset(f2, static_cast<int>(n1), derive_seed(seed, "D1"));
  state.tile_rows = cfg.tile_rows;
  const HessianMatrix H = cfg.hessian == "analytic"
                              ? expected_hessian(f2.standardized_link())
                              : expected_hessian(f2.standardized_link(), HessianMode::MonteCarlo, 1000000,
                                                 derive_seed(seed, "hessian"));
  const ReconMatrix B = build_Bstar(F, H.H, state.theta0.V, state.theta0.spec);
  const Eigen::MatrixXd Xt = sample_sphere(d, cfg.n_test, derive_seed(seed, "test"));
  const Eigen::MatrixXd truth = eval_features(F, Xt);
  const Eigen::MatrixXd recon = reconstruct_features(B, state, Xt);
  const Eigen::MatrixXd matched = variance_match(recon, truth);
  ReconSummary summary{n1, seed, Eigen::VectorXd(F.r())};
  for (int k = 0; k < F.r(); ++k) summary.correlations[k] = pearson(matched.col(k), truth.col(k));
  out.recon_summary.push_back(summary);
  for (Eigen::Index i = 0; i < Xt.rows(); ++i)
    for (int k = 0; k < F.r(); ++k) out.recon.push_back({k, truth(i, k), matched(i, k), n1, cfg.m2, seed});
  return out;
}

RunOutput universality_unit(const ExperimentConfig& cfg, int d, std::uint64_t seed) {
  RunOutput out;
  const FeatureSet F = features_for(cfg, d);
  const auto rep = moment_diagnostics(F, static_cast<std::size_t>(cfg.n_univ), derive_seed(seed, "moments"));
  const auto sw = sliced_w1(F, static_cast<std::size_t>(cfg.n_univ), cfg.L, seed);
  UniversalityRow row;
  row.d = d;
  row.r = F.r();
  row.n = cfg.n_univ;
  row.L = cfg.L;
  row.seed = seed;
  row.mean_abs_mean = rep.mean.cwiseAbs().mean();
  row.max_cov_dev = (rep.covariance - Eigen::MatrixXd::Identity(F.r(), F.r())).cwiseAbs().maxCoeff();
  row.sliced_w1 = sw.features.average;
  row.gaussian_floor = sw.floor.average;
  out.universality.push_back(row);
  return out;
}

std::vector<long> n1_grid_for(const ExperimentConfig& cfg, int d) {
  if (!cfg.n1_grid.empty()) return cfg.n1_grid;
  const long dd = d;
  return {dd * dd, dd * dd * dd, dd * dd * dd * dd};
}

}  // namespace

std::vector<RunUnit> plan_runs(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<RunUnit> units;
  const std::string e = cfg.experiment;
  for (int d : cfg.d_grid) {
    if (e == "compare") {
      for (long n : cfg.n_grid)
        for (auto seed : cfg.seeds) {
          const std::string id = "compare" + tag("d", d) + tag("p", cfg.p) + tag("n", n) + tag("s", static_cast<long>(seed));
          units.push_back({id, [cfg, id, d, n, seed] { return compare_unit(cfg, id, d, n, seed); }});
        }
    } else if (e == "transfer") {
      for (auto seed : cfg.seeds) {
        const std::string id = "transfer" + tag("d", d) + tag("n1_", cfg.n1) + tag("s", static_cast<long>(seed));
        units.push_back({id, [cfg, id, d, seed] { return transfer_unit(cfg, id, d, seed); }});
      }
    } else if (e == "reconstruct") {
      for (auto seed : cfg.seeds)
        for (long n1 : n1_grid_for(cfg, d)) {
          const std::string id = "reconstruct" + tag("d", d) + tag("n1_", n1) + tag("s", static_cast<long>(seed));
          units.push_back({id, [cfg, d, n1, seed] { return reconstruct_unit(cfg, d, n1, seed); }});
        }
    } else if (e == "universality") {
      for (auto seed : cfg.seeds) {
        const std::string id = "universality" + tag("d", d) + tag("s", static_cast<long>(seed));
        units.push_back({id, [cfg, d, seed] { return universality_unit(cfg, d, seed); }});
      }
    }
  }
  return units;
}

namespace {

RunOutput run_all(const ExperimentConfig& cfg) {
  RunOutput all;
  for (const auto& unit : plan_runs(cfg)) {
    RunOutput o = unit.run();
    all.results.insert(all.results.end(), o.results.begin(), o.results.end());
    all.recon.insert(all.recon.end(), o.recon.begin(), o.recon.end());
    all.recon_summary.insert(all.recon_summary.end(), o.recon_summary.begin(), o.recon_summary.end());
    all.universality.insert(all.universality.end(), o.universality.begin(), o.universality.end());
  }
  return all;
}

ExperimentConfig as_kind(ExperimentConfig cfg, const std::string& kind) {
  cfg.experiment = kind;
  return cfg;
}

}  // namespace

std::vector<ResultRow> run_compare(const ExperimentConfig& cfg) { return run_all(as_kind(cfg, "compare")).results; }
std::vector<ResultRow> run_transfer(const ExperimentConfig& cfg) { return run_all(as_kind(cfg, "transfer")).results; }
RunOutput run_reconstruct(const ExperimentConfig& cfg) { return run_all(as_kind(cfg, "reconstruct")); }
std::vector<UniversalityRow> run_universality(const ExperimentConfig& cfg) {
  return run_all(as_kind(cfg, "universality")).universality;
}

// ---------------------------------------------------------------- output

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

nlohmann::json to_json(const RunOutput& o) {
  nlohmann::json j;
  j["results"] = nlohmann::json::array();
  for (const auto& r : o.results) {
    j["results"].push_back({r.run_id, r.experiment, r.method, r.d, r.r, r.p, r.n1, r.n2, r.m1, r.m2, r.seed,
                            r.test_mae, r.test_mse, r.mae_stderr, r.wall_seconds});
  }
  j["recon"] = nlohmann::json::array();
  for (const auto& r : o.recon) j["recon"].push_back({r.feature_idx, r.true_value, r.recon_value, r.n1, r.m2, r.seed});
  j["recon_summary"] = nlohmann::json::array();
  for (const auto& s : o.recon_summary) {
    j["recon_summary"].push_back({s.n1, s.seed, std::vector<double>(s.correlations.data(), s.correlations.data() + s.correlations.size())});
  }
  j["universality"] = nlohmann::json::array();
  for (const auto& u : o.universality) {
    j["universality"].push_back({u.d, u.r, u.n, u.L, u.seed, u.mean_abs_mean, u.max_cov_dev, u.sliced_w1, u.gaussian_floor});
  }
  j["traces"] = nlohmann::json::array();
  for (const auto& [rid, trace] : o.traces) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& t : trace) rows.push_back({t.step, t.loss, t.grad_norm, t.a_norm});
    j["traces"].push_back({rid, rows});
  }
  return j;
}

RunOutput run_output_from_json(const nlohmann::json& j) {
  RunOutput o;
  for (const auto& r : j.at("results")) {
    ResultRow row;
    row.run_id = r[0];
    row.experiment = r[1];
    row.method = r[2];
    row.d = r[3];
    row.r = r[4];
    row.p = r[5];
    row.n1 = r[6];
    row.n2 = r[7];
    row.m1 = r[8];
    row.m2 = r[9];
    row.seed = r[10];
    row.test_mae = r[11];
    row.test_mse = r[12];
    row.mae_stderr = r[13];
    row.wall_seconds = r[14];
    o.results.push_back(row);
  }
  for (const auto& r : j.at("recon")) o.recon.push_back({r[0], r[1], r[2], r[3], r[4], r[5]});
  for (const auto& s : j.at("recon_summary")) {
    const auto c = s[2].get<std::vector<double>>();
    o.recon_summary.push_back({s[0], s[1], Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()))});
  }
  for (const auto& u : j.at("universality")) {
    o.universality.push_back({u[0], u[1], u[2], u[3], u[4], u[5], u[6], u[7], u[8]});
  }
  for (const auto& t : j.at("traces")) {
    std::vector<TraceRow> rows;
    for (const auto& r : t[1]) rows.push_back({r[0], r[1], r[2], r[3]});
    o.traces.emplace_back(t[0].get<std::string>(), std::move(rows));
  }
  return o;
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + tmp.string());
    os << text;
  }
  fs::rename(tmp, path);
}

}  // namespace

std::string results_csv_header() {
  return "run_id,experiment,method,d,r,p,n1,n2,m1,m2,seed,test_mae,test_mse,mae_stderr,wall_seconds,config_hash";
}

std::string format_result_row(const ResultRow& r, const std::string& h) {
  std::ostringstream os;
  os << r.run_id << ',' << r.experiment << ',' << r.method << ',' << r.d << ',' << r.r << ',' << r.p << ',' << r.n1
     << ',' << r.n2 << ',' << r.m1 << ',' << r.m2 << ',' << r.seed << ',' << fmt(r.test_mae) << ','
     << fmt(r.test_mse) << ',' << fmt(r.mae_stderr) << ',' << fmt(r.wall_seconds) << ',' << h;
  return os.str();
}

void execute_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  fs::create_directories(out / "runs");
  const std::string h = cfg.hash();
  const fs::path manifest_path = out / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream is(manifest_path);
    nlohmann::json old;
    try {
      old = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("output directory has an unreadable manifest.json");
    }
    if (old.value("config_hash", std::string()) != h) {
      throw ConfigError("output directory " + out.string() + " holds results of a different configuration (hash " +
                        old.value("config_hash", std::string("?")) + ", this run " + h + ")");
    }
  }
  nlohmann::json manifest = {{"experiment", cfg.experiment},
                             {"config", cfg.to_json()},
                             {"config_hash", h},
                             {"library_version", HFL_VERSION},
                             {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                   std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                   std::to_string(EIGEN_MINOR_VERSION)}};
  write_atomic(manifest_path, manifest.dump(2) + "\n");

  if (cfg.experiment == "verify") {
    const auto results = run_verify(cfg);
    nlohmann::json checks = nlohmann::json::array();
    bool ok = true;
    for (const auto& r : results) {
      checks.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
      if (!opts.quiet) std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << (r.detail.empty() ? "" : ": ") << r.detail << "\n";
      ok = ok && r.passed;
    }
    write_atomic(out / "verify.json", nlohmann::json({{"config_hash", h}, {"checks", checks}}).dump(2) + "\n");
    if (!ok) {
      std::string failed;
      for (const auto& r : results)
        if (!r.passed) failed += (failed.empty() ? "" : ", ") + r.name;
      throw InvariantFailure("verify failed: " + failed);
    }
    return;
  }

  const auto units = plan_runs(cfg);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (opts.resume && fs::exists(out / "runs" / (units[i].run_id + ".json"))) {
      if (!opts.quiet) std::cout << "skip " << units[i].run_id << " (complete)\n";
      continue;
    }
    todo.push_back(i);
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next++;
      if (k >= todo.size()) return;
      const auto& unit = units[todo[k]];
      try {
        const auto t0 = Clock::now();
        const RunOutput o = unit.run();
        nlohmann::json j = to_json(o);
        j["config_hash"] = h;
        write_atomic(out / "runs" / (unit.run_id + ".json"), j.dump() + "\n");
        if (!opts.quiet) {
          std::lock_guard<std::mutex> lock(mu);
          std::cout << "done " << unit.run_id << " (" << fmt(seconds_since(t0)) << " s)\n" << std::flush;
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!failure) failure = std::current_exception();
        next = todo.size();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(todo.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Merge per-run files in plan order.
  std::ostringstream results, recon, summary, univ, trace;
  results << results_csv_header() << '\n';
  recon << "feature_idx,true_value,recon_value,n1,m2,seed,config_hash\n";
  summary << "n1,seed,feature_idx,correlation,config_hash\n";
  univ << "d,r,n,L,seed,mean_abs_mean,max_cov_dev,sliced_w1,gaussian_floor,config_hash\n";
  trace << "run_id,step,loss,grad_norm,a_norm,config_hash\n";
  std::vector<std::string> run_ids;
  for (const auto& unit : units) {
    std::ifstream is(out / "runs" / (unit.run_id + ".json"));
    const auto j = nlohmann::json::parse(is);
    if (j.value("config_hash", std::string()) != h) throw ConfigError("run file " + unit.run_id + " has a different config hash");
    const RunOutput o = run_output_from_json(j);
    run_ids.push_back(unit.run_id);
    for (const auto& r : o.results) results << format_result_row(r, h) << '\n';
    for (const auto& r : o.recon) {
      recon << r.feature_idx << ',' << fmt(r.true_value) << ',' << fmt(r.recon_value) << ',' << r.n1 << ',' << r.m2
            << ',' << r.seed << ',' << h << '\n';
    }
    for (const auto& s : o.recon_summary)
      for (Eigen::Index k = 0; k < s.correlations.size(); ++k)
        summary << s.n1 << ',' << s.seed << ',' << k << ',' << fmt(s.correlations[k]) << ',' << h << '\n';
    for (const auto& u : o.universality) {
      univ << u.d << ',' << u.r << ',' << u.n << ',' << u.L << ',' << u.seed << ',' << fmt(u.mean_abs_mean) << ','
           << fmt(u.max_cov_dev) << ',' << fmt(u.sliced_w1) << ',' << fmt(u.gaussian_floor) << ',' << h << '\n';
    }
    for (const auto& [rid, rows] : o.traces)
      for (const auto& t : rows)
        trace << rid << ',' << t.step << ',' << fmt(t.loss) << ',' << fmt(t.grad_norm) << ',' << fmt(t.a_norm) << ','
              << h << '\n';
  }
  std::vector<std::string> files;
  if (cfg.experiment == "compare" || cfg.experiment == "transfer") {
    write_atomic(out / "results.csv", results.str());
    write_atomic(out / "trace.csv", trace.str());
    files = {"results.csv", "trace.csv"};
  } else if (cfg.experiment == "reconstruct") {
    write_atomic(out / "reconstruction.csv", recon.str());
    write_atomic(out / "reconstruction_summary.csv", summary.str());
    files = {"reconstruction.csv", "reconstruction_summary.csv"};
  } else if (cfg.experiment == "universality") {
    write_atomic(out / "universality.csv", univ.str());
    files = {"universality.csv"};
  }
  manifest["outputs"] = files;
  manifest["runs"] = run_ids;
  write_atomic(manifest_path, manifest.dump(2) + "\n");
}

}  // namespace hfl
