// Python module _hhvg over the core library.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hhvg/checks.hpp"
#include "hhvg/config.hpp"
#include "hhvg/env.hpp"
#include "hhvg/errors.hpp"
#include "hhvg/harness.hpp"
#include "hhvg/mathcore.hpp"
#include "hhvg/pipeline.hpp"

namespace py = pybind11;
using namespace hhvg;

namespace {

py::dict row_dict(const RunRow& r) {
  py::dict d;
  d["step"] = r.step;
  d["loss"] = r.loss;
  d["reward"] = r.reward;
  d["CR"] = r.cr;
  d["CE"] = r.ce;
  d["error_pct"] = r.error_pct;
  d["val_mse"] = r.val_mse;
  d["lr"] = r.lr;
  return d;
}

py::dict outcome_dict(const RunOutcome& o) {
  py::dict d;
  d["dir"] = o.dir;
  d["variant"] = o.variant;
  d["seed"] = o.seed;
  d["completed"] = o.completed;
  d["reused"] = o.reused;
  d["failure"] = o.failure;
  d["failure_kind"] = o.failure_kind;
  d["dap_terminal"] = o.dap_terminal ? py::object(row_dict(*o.dap_terminal)) : py::none();
  d["postdap_terminal"] = o.postdap_terminal ? py::object(row_dict(*o.postdap_terminal)) : py::none();
  return d;
}

py::dict comparison_dict(const Comparison& cmp) {
  py::list summary, tests;
  for (const auto& r : cmp.summary) {
    py::dict d;
    d["variant"] = r.variant;
    d["runs"] = r.runs;
    d["dap_mse"] = r.dap_mse_mean;
    d["dap_mse_sd"] = r.dap_mse_sd;
    d["dap_mean_percent_error"] = r.dap_err_mean;
    d["dap_mean_percent_error_sd"] = r.dap_err_sd;
    d["postdap_mse"] = r.postdap_mse_mean;
    d["postdap_mse_sd"] = r.postdap_mse_sd;
    d["postdap_mean_percent_error"] = r.postdap_err_mean;
    d["postdap_mean_percent_error_sd"] = r.postdap_err_sd;
    summary.append(d);
  }
  for (const auto& t : cmp.tests) {
    py::dict d;
    d["hypothesis"] = t.hypothesis;
    d["phase"] = t.phase;
    d["n_x"] = t.n_x;
    d["n_y"] = t.n_y;
    d["U"] = t.result.u;
    d["p"] = t.result.p;
    d["exact"] = t.result.exact;
    d["ties"] = t.result.ties;
    d["alpha"] = t.alpha;
    d["reject"] = t.reject;
    tests.append(d);
  }
  py::dict out;
  out["summary"] = summary;
  out["tests"] = tests;
  out["warnings"] = cmp.warnings;
  return out;
}

State as_state(const Eigen::Vector4d& v) { return State::from(v); }

UMethod parse_method(const std::string& m) {
  if (m == "auto") return UMethod::automatic;
  if (m == "exact") return UMethod::exact;
  if (m == "normal") return UMethod::normal;
  throw ContractViolation("method must be auto, exact or normal");
}

}  // namespace

PYBIND11_MODULE(_hhvg, m) {
  m.doc() = "Curiosity-driven forward-model learning: numerics, environment and experiment pipeline.";

  auto base = py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<NumericalDomainError>(m, "NumericalDomainError", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DependencyError>(m, "DependencyError", PyExc_RuntimeError);
  (void)base;

  m.def(
      "gaussian_kl",
      [](const Eigen::VectorXd& mean_p, const Eigen::MatrixXd& cov_p, const Eigen::VectorXd& mean_q,
         const Eigen::MatrixXd& cov_q) {
        return gaussian_kl(Gaussian{mean_p, cov_p}, Gaussian{mean_q, cov_q});
      },
      py::arg("mean_p"), py::arg("cov_p"), py::arg("mean_q"), py::arg("cov_q"),
      "KL(p || q) between multivariate normals, natural log.");

  m.def(
      "householder_cov",
      [](const Eigen::VectorXd& d, const Eigen::VectorXd& v) {
        return householder_cov(HouseholderCovParams{d, v});
      },
      py::arg("d"), py::arg("v"), "H diag(d) H^T with H the reflector along v.");

  py::class_<UTestResult>(m, "UTestResult")
      .def_readonly("u", &UTestResult::u)
      .def_readonly("p", &UTestResult::p)
      .def_readonly("exact", &UTestResult::exact)
      .def_readonly("ties", &UTestResult::ties)
      .def("__repr__", [](const UTestResult& r) {
        return "UTestResult(u=" + std::to_string(r.u) + ", p=" + std::to_string(r.p) +
               ", exact=" + (r.exact ? "True" : "False") + ")";
      });

  m.def(
      "mann_whitney_u",
      [](const std::vector<double>& x, const std::vector<double>& y, const std::string& method) {
        return mann_whitney_u(x, y, parse_method(method));
      },
      py::arg("x"), py::arg("y"), py::arg("method") = "auto",
      "One-sided rank-sum test that x is stochastically less than y.");

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def_static("for_profile", &ExperimentConfig::for_profile, py::arg("profile"))
      .def_static(
          "load",
          [](const std::filesystem::path& file, const std::string& profile,
             const std::vector<std::string>& overrides) {
            return ExperimentConfig::load(file, profile, overrides);
          },
          py::arg("file") = std::filesystem::path(), py::arg("profile") = "",
          py::arg("overrides") = std::vector<std::string>{})
      .def_static(
          "from_yaml",
          [](const std::string& text, const std::string& profile,
             const std::vector<std::string>& overrides) {
            return ExperimentConfig::from_yaml(text, profile, overrides);
          },
          py::arg("text"), py::arg("profile") = "",
          py::arg("overrides") = std::vector<std::string>{})
      .def_readonly("profile", &ExperimentConfig::profile)
      .def_readonly("runs_per_variant", &ExperimentConfig::runs_per_variant)
      .def_readonly("split_seed", &ExperimentConfig::split_seed)
      .def("to_yaml", &ExperimentConfig::to_yaml)
      .def("hash_hex", &ExperimentConfig::hash_hex)
      .def("oracle_row_count", [](const ExperimentConfig& c) { return c.oracle_grid.row_count(); });

  m.def(
      "external_accel",
      [](const ExperimentConfig& c, const Eigen::Vector2d& pos) { return external_accel(pos, c.env); },
      py::arg("config"), py::arg("pos"), "Force-field acceleration at a position.");

  m.def(
      "step",
      [](const ExperimentConfig& c, const Eigen::Vector4d& s, int action) {
        return step(as_state(s), action, c.env).vec();
      },
      py::arg("config"), py::arg("state"), py::arg("action_index"),
      "One environment step from (x, y, vx, vy) under one of the 121 grid actions.");

  m.def(
      "oracle_rows",
      [](const ExperimentConfig& c, std::uint64_t begin, std::uint64_t end) {
        const std::uint64_t total = c.oracle_grid.row_count();
        if (end > total) end = total;
        if (begin > end) throw ContractViolation("oracle_rows: begin past end");
        py::array_t<double> out({static_cast<py::ssize_t>(end - begin), py::ssize_t{10}});
        auto view = out.mutable_unchecked<2>();
        py::ssize_t i = 0;
        oracle_grid_enumerate(
            c.env, c.oracle_grid,
            [&](const TransitionRow& row) {
              for (py::ssize_t k = 0; k < 10; ++k) view(i, k) = row[static_cast<std::size_t>(k)];
              ++i;
            },
            begin, end);
        return out;
      },
      py::arg("config"), py::arg("begin") = 0, py::arg("end") = UINT64_MAX,
      "Oracle grid rows [begin, end) as an (n, 10) array of s, a, s'.");

  m.def("run_variant_keys", &run_variant_keys);

  m.def(
      "execute_run",
      [](const ExperimentConfig& c, const std::string& key, std::uint64_t seed,
         const std::filesystem::path& root, bool force) {
        RunOutcome o;
        {
          py::gil_scoped_release release;
          o = execute_run(c, key, seed, root, {force, nullptr});
        }
        return outcome_dict(o);
      },
      py::arg("config"), py::arg("variant"), py::arg("seed"), py::arg("root"), py::arg("force") = false,
      "Runs one variant and seed under root, reusing a completed run unless force.");

  m.def(
      "read_run", [](const std::filesystem::path& dir) { return outcome_dict(read_run(dir)); },
      py::arg("dir"));

  m.def(
      "compare_runs",
      [](const std::vector<std::filesystem::path>& dirs, const std::optional<std::filesystem::path>& out) {
        const Comparison cmp = compare_runs(dirs);
        if (out) write_comparison(*out, cmp);
        return comparison_dict(cmp);
      },
      py::arg("dirs"), py::arg("out") = py::none(),
      "Summary and rank-sum tables over completed runs; writes CSVs when out is given.");

  m.def(
      "selftest",
      [](bool mutate_kl_sign) {
        std::vector<CheckResult> results;
        {
          py::gil_scoped_release release;
          results = run_selftest({mutate_kl_sign});
        }
        py::list out;
        for (const auto& r : results) {
          py::dict d;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["detail"] = r.detail;
          d["seconds"] = r.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("mutate_kl_sign") = false, "Runs the invariant suite.");
}
