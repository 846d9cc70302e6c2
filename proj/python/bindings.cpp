#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "synthgp/causal.hpp"
#include "synthgp/config.hpp"
#include "synthgp/errors.hpp"
#include "synthgp/evaluation.hpp"
#include "synthgp/gp_engine.hpp"
#include "synthgp/kernels.hpp"
#include "synthgp/mogp_cov.hpp"
#include "synthgp/pipeline.hpp"

namespace py = pybind11;
using namespace synthgp;

namespace {

MaternNu nu_arg(double nu) { return nu_from_value(nu); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-output Gaussian process synthetic control";
  m.attr("__version__") = SYNTHGP_VERSION;

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", base.ptr());

  m.def("rbf", &rbf_ard_eval, py::arg("xs"), py::arg("xt"), py::arg("variance"), py::arg("lengthscales"));
  m.def(
      "matern",
      [](double r, double nu, double variance, double lengthscale) {
        return matern_eval(r, nu_arg(nu), variance, lengthscale);
      },
      py::arg("distance"), py::arg("nu"), py::arg("variance"), py::arg("lengthscale"));
  m.def("ou", &ou_time_eval, py::arg("lag"), py::arg("variance"), py::arg("drift"));

  m.def(
      "log_marginal_likelihood", [](const VectorXd& y, const MatrixXd& sigma) { return log_marginal_likelihood(y, sigma); },
      py::arg("y"), py::arg("sigma"));

  m.def(
      "count_parameters",
      [](const std::string& tag, int outputs, int covariate_dims) {
        return count_parameters(build_variant(variant_from_string(tag), outputs, covariate_dims));
      },
      py::arg("tag"), py::arg("outputs"), py::arg("covariate_dims"));

  m.def("mse", &mse, py::arg("y"), py::arg("mean"));
  m.def("log_score", &log_score, py::arg("y"), py::arg("mean"), py::arg("sd"));
  m.def("energy_score", &energy_score, py::arg("y"), py::arg("samples"));
  m.def(
      "dtw", [](const std::vector<double>& a, const std::vector<double>& b) { return dtw_distance(a, b); },
      py::arg("a"), py::arg("b"));
  m.def("quantile", &quantile, py::arg("values"), py::arg("p"));
  m.def("lognormal_mean", &lognormal_mean, py::arg("tau"), py::arg("variance"));
  m.def(
      "train_test_split",
      [](int t0, double ratio) {
        const SplitIndices s = train_test_split(t0, ratio);
        return py::make_tuple(s.t_star, s.train, s.test);
      },
      py::arg("t0"), py::arg("ratio") = 2.0 / 3.0);

  m.def(
      "config_hash", [](const std::filesystem::path& path) { return load_config(path).hash(); }, py::arg("config"));
  m.def(
      "run_stage",
      [](const std::string& stage, const std::filesystem::path& config, std::optional<std::uint64_t> seed,
         std::optional<std::filesystem::path> out, std::optional<int> jobs) {
        RunConfig c = load_config(config);
        if (seed) c.seed = *seed;
        if (out) c.output_dir = *out;
        if (jobs) c.jobs = *jobs;
        py::gil_scoped_release release;
        return run_stage(stage, c).artifacts;
      },
      py::arg("stage"), py::arg("config"), py::arg("seed") = py::none(), py::arg("out") = py::none(),
      py::arg("jobs") = py::none());
}
