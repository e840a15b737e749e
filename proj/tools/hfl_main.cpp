// Command-line runner for the experiment suite.

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <iostream>

#include "hfl/experiments.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kInvariant = 3, kDivergence = 4 };

struct Options {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  int jobs = 0;
  bool print_config = false;
  bool resume = false;
  std::vector<std::string> overrides;
  std::string fault;
};

int run(const std::string& kind, const Options& o) {
  hfl::ExperimentConfig cfg =
      o.config.empty() ? hfl::ExperimentConfig::defaults_for(kind) : hfl::load_config(o.config, kind);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw hfl::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg = hfl::apply_yaml(cfg, kv.substr(0, eq) + ": " + kv.substr(eq + 1));
  }
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (o.jobs > 0) cfg.jobs = o.jobs;
  if (!o.fault.empty()) cfg.inject_fault = o.fault;
  cfg.validate();
  if (o.print_config) {
    std::cout << "# config_hash: " << cfg.hash() << "\n" << hfl::config_to_yaml(cfg);
    return kOk;
  }
  hfl::execute_experiment(cfg, {o.resume, false});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise feature-learning experiments"};
  app.require_subcommand(1);
  Options opts;
  std::string chosen;
  for (const std::string kind : {"compare", "transfer", "reconstruct", "universality", "verify"}) {
    auto* sub = app.add_subcommand(kind, "run the " + kind + " experiment");
    sub->add_option("--config", opts.config, "YAML configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out, "output directory");
    sub->add_option("--seed", opts.seeds, "master seed(s); overrides the config");
    sub->add_option("--jobs", opts.jobs, "independent runs executed in parallel");
    sub->add_flag("--print-config", opts.print_config, "print the resolved configuration and exit");
    sub->add_flag("--resume", opts.resume, "skip runs whose output already exists");
    sub->add_option("--set", opts.overrides, "override a config key, e.g. --set m2=1024");
    if (kind == "verify") sub->add_option("--inject-fault", opts.fault, "deliberately break a check (q2_constant)");
    sub->callback([&chosen, kind] { chosen = kind; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  try {
    return run(chosen, opts);
  } catch (const hfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const YAML::Exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const hfl::InvariantFailure& e) {
    std::cerr << "invariant failure: " << e.what() << "\n";
    return kInvariant;
  } catch (const hfl::NumericalDivergence& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
