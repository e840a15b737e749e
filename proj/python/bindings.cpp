#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hfl/experiments.hpp"
#include "hfl/features.hpp"
#include "hfl/network.hpp"
#include "hfl/reconstruction.hpp"
#include "hfl/sphere_math.hpp"
#include "hfl/targets.hpp"
#include "hfl/training.hpp"
#include "hfl/universality.hpp"

namespace py = pybind11;
using namespace hfl;

namespace {

using release = py::call_guard<py::gil_scoped_release>;

template <typename T>
py::tuple mc_tuple(const T& e) {
  return py::make_tuple(e.estimate, e.std_error, e.n);
}

}  // namespace

PYBIND11_MODULE(_hfl, m) {
  m.doc() = "Three-layer network feature learning: sphere harmonics, training and reconstruction";
  m.attr("__version__") = HFL_VERSION;

  auto base = py::register_exception<Error>(m, "HflError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DimensionMismatch>(m, "DimensionMismatch", base.ptr());
  py::register_exception<InvariantFailure>(m, "InvariantFailure", base.ptr());
  py::register_exception<NumericalDivergence>(m, "NumericalDivergence", base.ptr());
  py::register_exception<OverflowError>(m, "OverflowError", base.ptr());
  py::register_exception<RankDeficiency>(m, "RankDeficiency", base.ptr());
  py::register_exception<ScaleUnderflow>(m, "ScaleUnderflow", base.ptr());
  py::register_exception<SingularHessian>(m, "SingularHessian", base.ptr());
  py::register_exception<DegenerateScale>(m, "DegenerateScale", base.ptr());

  m.def("derive_seed", &derive_seed, py::arg("master"), py::arg("label"));

  // sphere math
  m.def("sample_sphere", py::overload_cast<int, int, std::uint64_t>(&sample_sphere), py::arg("d"), py::arg("n"),
        py::arg("seed"), release());
  m.def("gegenbauer", py::vectorize(&gegenbauer), py::arg("k"), py::arg("d"), py::arg("t"));
  m.def("harmonic_dim", &harmonic_dim, py::arg("d"), py::arg("k"));
  m.def("quadratic_moment", &quadratic_moment, py::arg("A"), py::arg("B"), py::arg("d"));
  m.def(
      "linearize_product",
      [](int i, int j, int d) {
        py::list out;
        for (const auto& t : linearize_product(i, j, d).terms) out.append(py::make_tuple(t.degree, t.coefficient));
        return out;
      },
      py::arg("i"), py::arg("j"), py::arg("d"), "List of (degree, coefficient) pairs expanding Q_i Q_j.");

  // features
  py::class_<FeatureSet>(m, "FeatureSet")
      .def(py::init<int, std::vector<Eigen::MatrixXd>>(), py::arg("d"), py::arg("matrices"))
      .def_property_readonly("d", &FeatureSet::d)
      .def_property_readonly("r", &FeatureSet::r)
      .def_property_readonly("matrices", &FeatureSet::matrices)
      .def_property_readonly("kappa1", &FeatureSet::kappa1)
      .def_property_readonly("is_diagonal", &FeatureSet::is_diagonal)
      .def("gram", &FeatureSet::gram)
      .def("check_invariants", &FeatureSet::check_invariants, py::arg("tol") = 1e-9)
      .def("permuted", &FeatureSet::permuted, py::arg("order"))
      .def("__call__", [](const FeatureSet& F, const Eigen::MatrixXd& X) { return eval_features(F, X); });
  m.def("make_sign_features", &make_sign_features, py::arg("d"));
  m.def("orthonormalize", &orthonormalize, py::arg("raw"));
  m.def("eval_features", &eval_features, py::arg("features"), py::arg("X"), release());

  // targets
  py::class_<LinkPolynomial>(m, "LinkPolynomial")
      .def_static("power_sum", &LinkPolynomial::power_sum, py::arg("r"), py::arg("power"), py::arg("coef") = 1.0,
                  py::arg("constant") = 0.0)
      .def_static(
          "from_monomials",
          [](int r, const std::vector<std::pair<double, std::vector<int>>>& terms) {
            std::vector<Monomial> ms;
            for (const auto& [c, p] : terms) ms.push_back({c, p});
            return LinkPolynomial::from_monomials(r, ms);
          },
          py::arg("r"), py::arg("terms"))
      .def_property_readonly("r", &LinkPolynomial::r)
      .def_property_readonly("degree", &LinkPolynomial::degree)
      .def("__call__", [](const LinkPolynomial& g, const Eigen::MatrixXd& Z) { return eval_link(g, Z); })
      .def("hessian_at", &LinkPolynomial::hessian_at, py::arg("z"));
  m.def(
      "expected_hessian",
      [](const LinkPolynomial& g, const std::string& mode, std::size_t n_mc, std::uint64_t seed) {
        const auto H = expected_hessian(g, mode == "analytic" ? HessianMode::Analytic : HessianMode::MonteCarlo,
                                        n_mc, seed);
        return py::make_tuple(H.H, H.std_error);
      },
      py::arg("link"), py::arg("mode") = "analytic", py::arg("n_mc") = 1000000, py::arg("seed") = 0);

  py::class_<Target>(m, "Target")
      .def_readonly("id", &Target::id)
      .def_readonly("shift", &Target::shift)
      .def_readonly("scale", &Target::scale)
      .def_readonly("degenerate", &Target::degenerate)
      .def_readonly("link", &Target::link)
      .def_readonly("features", &Target::features)
      .def_property_readonly("d", &Target::d)
      .def("standardized_link", &Target::standardized_link)
      .def("__call__", &Target::operator(), py::arg("X"), release());
  m.def("make_standard_target", &make_standard_target, py::arg("d"), py::arg("p"), py::arg("features"),
        py::arg("n_cal") = kDefaultCalibrationSamples, py::arg("seed") = 0, release());
  m.def("standardize_target", &standardize_target, py::arg("link"), py::arg("features"), py::arg("n_cal"),
        py::arg("seed"), py::arg("id") = "custom", release());
  m.def(
      "projection_norm",
      [](const Target& f, int k, std::size_t n, std::uint64_t seed) { return mc_tuple(projection_norm(f, k, n, seed)); },
      py::arg("target"), py::arg("k"), py::arg("n_pairs"), py::arg("seed") = 0);

  // network
  py::class_<ActivationSpec>(m, "ActivationSpec")
      .def(py::init([](int d, std::vector<double> coeffs) {
             ActivationSpec s{d, std::move(coeffs)};
             s.validate();
             return s;
           }),
           py::arg("d"), py::arg("coeffs"))
      .def_static("q2", &ActivationSpec::q2, py::arg("d"))
      .def_readonly("d", &ActivationSpec::d)
      .def_readonly("coeffs", &ActivationSpec::coeffs);
  m.def("sigma1", py::vectorize(&sigma1), py::arg("t"));
  m.def("c_sigma", &c_sigma, py::arg("spec"));

  py::class_<NetworkParams>(m, "NetworkParams")
      .def_readwrite("a", &NetworkParams::a)
      .def_readwrite("W", &NetworkParams::W)
      .def_readwrite("b", &NetworkParams::b)
      .def_readwrite("V", &NetworkParams::V)
      .def_readonly("epsilon", &NetworkParams::epsilon)
      .def_readonly("seed", &NetworkParams::seed)
      .def_readonly("spec", &NetworkParams::spec)
      .def_property_readonly("d", &NetworkParams::d)
      .def_property_readonly("m1", &NetworkParams::m1)
      .def_property_readonly("m2", &NetworkParams::m2);
  m.def("init_network", &init_network, py::arg("d"), py::arg("m1"), py::arg("m2"), py::arg("epsilon"),
        py::arg("seed"), py::arg("spec"), release());
  m.def("default_epsilon", &default_epsilon, py::arg("spec"), py::arg("n1"), py::arg("m1"), py::arg("m2"));
  m.def("compute_h0", &compute_h0, py::arg("V"), py::arg("X"), py::arg("spec"), release());
  m.def("forward", &forward, py::arg("theta"), py::arg("X"), py::arg("tile_rows") = kDefaultTileRows, release());
  m.def("save_network", [](const NetworkParams& theta, const std::string& path) { save_network(theta, path); },
        py::arg("theta"), py::arg("path"));
  m.def("load_network", [](const std::string& path) { return load_network(path); }, py::arg("path"));

  // training
  py::class_<Dataset>(m, "Dataset")
      .def_readonly("X", &Dataset::X)
      .def_readonly("y", &Dataset::y)
      .def_readonly("target_id", &Dataset::target_id)
      .def_property_readonly("n", &Dataset::n);
  m.def("make_dataset", &make_dataset, py::arg("target"), py::arg("n"), py::arg("seed"), release());

  py::enum_<Stage2Backend>(m, "Stage2Backend")
      .value("iterative", Stage2Backend::Iterative)
      .value("spectral", Stage2Backend::Spectral);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("eta", &TrainConfig::eta)
      .def_readwrite("eta_quantile", &TrainConfig::eta_quantile)
      .def_readwrite("eta_ceiling", &TrainConfig::eta_ceiling)
      .def_readwrite("validation_fraction", &TrainConfig::validation_fraction)
      .def_readwrite("eta2", &TrainConfig::eta2)
      .def_readwrite("lambda2", &TrainConfig::lambda2)
      .def_readwrite("lambda2_grid", &TrainConfig::lambda2_grid)
      .def_readwrite("T", &TrainConfig::T)
      .def_readwrite("backend", &TrainConfig::backend)
      .def_readwrite("early_stop_rel", &TrainConfig::early_stop_rel)
      .def_readwrite("trace_every", &TrainConfig::trace_every)
      .def_readwrite("tile_rows", &TrainConfig::tile_rows)
      .def_readwrite("warn_out_of_zone", &TrainConfig::warn_out_of_zone);

  py::class_<StageOneState>(m, "StageOneState")
      .def_readonly("theta0", &StageOneState::theta0)
      .def_readonly("W1_unit", &StageOneState::W1_unit)
      .def_readonly("eta1_unit", &StageOneState::eta1_unit)
      .def_readonly("out_of_zone_fraction", &StageOneState::out_of_zone_fraction)
      .def("W1", &StageOneState::W1, py::arg("eta"));
  m.def("stage1_step", &stage1_step, py::arg("theta0"), py::arg("D1"), py::arg("config") = TrainConfig{},
        release());
  m.def("compute_h1", py::overload_cast<const StageOneState&, const Eigen::MatrixXd&>(&compute_h1), py::arg("state"),
        py::arg("X"), release());
  m.def("reinit_bias", &reinit_bias, py::arg("m1"), py::arg("seed"), py::arg("range") = 3.0);

  py::class_<TraceRow>(m, "TraceRow")
      .def_readonly("step", &TraceRow::step)
      .def_readonly("loss", &TraceRow::loss)
      .def_readonly("grad_norm", &TraceRow::grad_norm)
      .def_readonly("a_norm", &TraceRow::a_norm);
  py::class_<RidgeResult>(m, "RidgeResult")
      .def_readonly("a", &RidgeResult::a)
      .def_readonly("lambda_", &RidgeResult::lambda)
      .def_readonly("steps", &RidgeResult::steps)
      .def_readonly("trace", &RidgeResult::trace);
  m.def("ridge_gd", &ridge_gd, py::arg("Psi"), py::arg("y"), py::arg("lambda_"), py::arg("config") = TrainConfig{},
        release());

  py::class_<TrainedModel>(m, "TrainedModel")
      .def_readonly("method", &TrainedModel::method)
      .def_readonly("a", &TrainedModel::a)
      .def_readonly("lambda2", &TrainedModel::lambda2)
      .def_readonly("steps", &TrainedModel::steps)
      .def_readonly("trace", &TrainedModel::trace)
      .def_property_readonly("eta", [](const TrainedModel& t) { return t.features.eta; })
      .def("predict", &TrainedModel::predict, py::arg("X"), release())
      .def("as_network", &TrainedModel::as_network, py::arg("theta0"));
  m.def("stage2_train", &stage2_train, py::arg("state"), py::arg("b"), py::arg("D2"), py::arg("config"),
        py::arg("target"), release());
  m.def("rf_baseline_train", &rf_baseline_train, py::arg("theta0"), py::arg("b"), py::arg("D"), py::arg("config"),
        release());
  m.def(
      "test_error",
      [](const TrainedModel& model, const Target& f, int n_test, std::uint64_t seed) {
        const auto e = test_error(model, f, n_test, seed);
        return py::dict(py::arg("mae") = e.mae, py::arg("mse") = e.mse, py::arg("mae_se") = e.mae_se,
                        py::arg("mse_se") = e.mse_se, py::arg("n") = e.n);
      },
      py::arg("model"), py::arg("target"), py::arg("n_test"), py::arg("seed"));

  // reconstruction
  m.def("analytic_kernel", &analytic_kernel, py::arg("t"), py::arg("spec"));
  m.def("kernel_deviations", &kernel_deviations, py::arg("V"), py::arg("X"), py::arg("Xp"), py::arg("spec"),
        release());
  py::class_<ReconMatrix>(m, "ReconMatrix")
      .def_readonly("Bstar", &ReconMatrix::Bstar)
      .def_readonly("P", &ReconMatrix::P)
      .def_readonly("scale", &ReconMatrix::scale)
      .def_readonly("op_norm", &ReconMatrix::op_norm);
  m.def("build_Bstar", &build_Bstar, py::arg("features"), py::arg("H"), py::arg("V"), py::arg("spec"));
  m.def("reconstruct_features", &reconstruct_features, py::arg("B"), py::arg("state"), py::arg("X"), release());
  m.def("feature_correlations", &feature_correlations, py::arg("recon"), py::arg("truth"));
  m.def(
      "t_operator_mc",
      [](const Target& f, const Eigen::MatrixXd& W, std::size_t n, std::uint64_t seed) {
        const auto e = t_operator_mc(f, W, n, seed);
        return py::make_tuple(e.mean, e.std_error);
      },
      py::arg("target"), py::arg("W"), py::arg("n"), py::arg("seed") = 0);
  m.def("t_star", &t_star, py::arg("features"), py::arg("H"), py::arg("W"));

  // universality
  m.def("w1_to_standard_normal", &w1_to_standard_normal, py::arg("sample"));
  m.def(
      "sliced_w1",
      [](const FeatureSet& F, std::size_t n, int L, std::uint64_t seed) {
        const auto r = sliced_w1(F, n, L, seed);
        return py::dict(py::arg("features") = r.features.average, py::arg("floor") = r.floor.average,
                        py::arg("floor_subtracted") = r.floor_subtracted());
      },
      py::arg("features"), py::arg("n"), py::arg("L") = 64, py::arg("seed") = 0);
  m.def("loglog_slope", &loglog_slope, py::arg("x"), py::arg("y"));

  // experiments
  m.def(
      "config_defaults",
      [](const std::string& experiment) { return ExperimentConfig::defaults_for(experiment).to_json().dump(); },
      py::arg("experiment"), "Default configuration as a JSON string.");
  m.def(
      "config_hash",
      [](const std::string& experiment, const std::string& yaml_overlay) {
        return apply_yaml(ExperimentConfig::defaults_for(experiment), yaml_overlay).hash();
      },
      py::arg("experiment"), py::arg("overlay") = "{}");
  m.def(
      "run_experiment",
      [](const std::string& experiment, const std::string& out_dir, const std::string& yaml_overlay, bool resume) {
        ExperimentConfig cfg = apply_yaml(ExperimentConfig::defaults_for(experiment), yaml_overlay);
        cfg.out_dir = out_dir;
        py::gil_scoped_release nogil;
        execute_experiment(cfg, {resume, true});
      },
      py::arg("experiment"), py::arg("out_dir"), py::arg("overlay") = "{}", py::arg("resume") = false,
      "Runs an experiment into out_dir, writing the CSVs and manifest.json.");
  m.def(
      "run_verify",
      [](const std::string& inject_fault) {
        auto cfg = ExperimentConfig::defaults_for("verify");
        cfg.inject_fault = inject_fault;
        py::list out;
        for (const auto& r : run_verify(cfg)) out.append(py::make_tuple(r.name, r.passed, r.detail));
        return out;
      },
      py::arg("inject_fault") = "");
}
