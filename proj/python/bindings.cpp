#include "nioc/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace nioc;

namespace {

// IOC program on a preset system, built from monomial moments.
struct Program {
  SystemModel model;
  ApproxMatrices approx;
  IocProgram program;

  Program(const std::string& system, int d_psi, int d_V, const Vec& m_mono, double alpha, const IocSettings& s)
      : model(make_system(system)),
        approx(build_approx_matrices(model, joint_lagrange_basis(model, d_psi), d_V)),
        program(assemble_program(approx, MomentVector(MultiIndexSet(model.n_eta(), d_psi), m_mono), alpha, s)) {}

  Mat eval(const Mat& points) const {
    if (points.cols() != static_cast<Eigen::Index>(model.n_eta()))
      throw std::invalid_argument("points must have one column per joint coordinate");
    Mat out(points.rows(), static_cast<Eigen::Index>(program.basis_psi.size()));
    for (Eigen::Index i = 0; i < points.rows(); ++i)
      out.row(i) = eval_basis(program.basis_psi, Vec(points.row(i).transpose())).transpose();
    return out;
  }

  py::dict solve() const {
    const IocSolution s = solve_ioc(program);
    py::dict d;
    d["status"] = to_string(s.status);
    d["objective"] = s.objective;
    d["theta_ell"] = s.theta_ell;
    d["theta_ell_normalized"] = s.theta_ell_normalized;
    d["theta_V"] = s.theta_V;
    d["theta_psi"] = s.theta_psi;
    d["iterations"] = s.iterations;
    d["infeasible_constraints"] = s.infeasible_families;
    return d;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Noisy inverse optimal control: moment deconvolution and convex cost recovery";

  m.def(
      "enumerate_indices",
      [](std::size_t dim, int degree) {
        std::vector<std::vector<int>> out;
        for (const auto& a : enumerate_indices(dim, degree)) out.push_back(a.exponents());
        return out;
      },
      py::arg("dim"), py::arg("degree"), "Multi-indices of total degree <= degree in graded lex order.");

  m.def(
      "monomials",
      [](int degree, const Vec& point) {
        return MultiIndexSet(static_cast<std::size_t>(point.size()), degree)
            .eval_monomials(std::span<const double>(point.data(), static_cast<std::size_t>(point.size())));
      },
      py::arg("degree"), py::arg("point"));

  m.def(
      "deconv_matrix",
      [](std::size_t dim, int degree, double std) {
        return build_deconv_matrix(MultiIndexSet(dim, degree), NoiseModel::isotropic_gaussian(dim, std, degree))
            .matrix;
      },
      py::arg("dim"), py::arg("degree"), py::arg("std"),
      "Lower-triangular map from clean to noisy moments for isotropic gaussian noise.");

  m.def(
      "linear_riccati",
      [](const Vec& theta, double alpha) {
        SystemModel lin = make_linear_system();
        lin.discount = alpha;
        const LqrPolicy p = solve_discounted_riccati(lin, CostParams(theta));
        return py::make_tuple(p.P, p.K);
      },
      py::arg("theta"), py::arg("alpha") = 0.9, "Discounted Riccati solution (P, K) for the linear preset.");

  m.def(
      "oracle_moments",
      [](const std::string& system, const Vec& theta, int d_psi, int d_V, int N, int M, std::uint64_t seed) {
        const SystemModel model = make_system(system);
        const OracleMoments o = oracle_moments(model, make_expert(model, theta), N, M, seed,
                                               MultiIndexSet(model.n_eta(), d_psi), MultiIndexSet(model.n_x, d_V));
        return py::make_tuple(o.m.values, o.m_xplus);
      },
      py::arg("system"), py::arg("theta"), py::arg("d_psi"), py::arg("d_V"), py::arg("N"), py::arg("M"),
      py::arg("seed") = 1, "Noise-free expert moments (monomial basis) and averaged E[r(x')].");

  py::class_<Program>(m, "Program")
      .def(py::init([](const std::string& system, int d_psi, int d_V, const Vec& m_mono, double alpha,
                       const std::string& mode, double beta_ell, double beta_V, int grid_points) {
             IocSettings s;
             s.mode = nonneg_mode_from_string(mode);
             s.beta_ell = beta_ell;
             s.beta_V = beta_V;
             s.grid_points = grid_points;
             return Program(system, d_psi, d_V, m_mono, alpha, s);
           }),
           py::arg("system"), py::arg("d_psi"), py::arg("d_V"), py::arg("moments"), py::arg("alpha") = 0.9,
           py::arg("mode") = "sos", py::arg("beta_ell") = 10.0, py::arg("beta_V") = 100.0,
           py::arg("grid_points") = 11)
      .def_property_readonly("Xi", [](const Program& p) { return p.program.Xi; })
      .def_property_readonly("d", [](const Program& p) { return p.program.d; })
      .def_property_readonly("m_hat", [](const Program& p) { return p.program.m_hat; })
      .def_property_readonly("n_ell", [](const Program& p) { return p.program.n_ell; })
      .def_property_readonly("lower", [](const Program& p) { return p.program.basis_psi.domain().lo; })
      .def_property_readonly("upper", [](const Program& p) { return p.program.basis_psi.domain().hi; })
      .def("eval_basis", &Program::eval, py::arg("points"), "Lagrange basis values, one row per point.")
      .def("solve", &Program::solve);

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_readwrite("system", &ExperimentConfig::system)
      .def_readwrite("trials", &ExperimentConfig::trials)
      .def_readwrite("M", &ExperimentConfig::M)
      .def_readwrite("N", &ExperimentConfig::N)
      .def_readwrite("alpha", &ExperimentConfig::alpha)
      .def_readwrite("obs_noise_std", &ExperimentConfig::obs_noise_std)
      .def_readwrite("d_psi", &ExperimentConfig::d_psi)
      .def_readwrite("d_V", &ExperimentConfig::d_V)
      .def_readwrite("lambda_", &ExperimentConfig::lambda)
      .def_readwrite("seed", &ExperimentConfig::seed)
      .def_property(
          "mode", [](const ExperimentConfig& c) { return to_string(c.mode); },
          [](ExperimentConfig& c, const std::string& s) { c.mode = nonneg_mode_from_string(s); })
      .def_readwrite("grid_points", &ExperimentConfig::grid_points)
      .def_readwrite("beta_ell", &ExperimentConfig::beta_ell)
      .def_readwrite("beta_V", &ExperimentConfig::beta_V)
      .def_readwrite("output_dir", &ExperimentConfig::output_dir)
      .def_readwrite("threads", &ExperimentConfig::threads)
      .def_readwrite("theta", &ExperimentConfig::theta)
      .def_readwrite("sweep_M", &ExperimentConfig::sweep_M)
      .def_readwrite("sweep_degrees", &ExperimentConfig::sweep_degrees)
      .def_readwrite("oracle", &ExperimentConfig::oracle)
      .def_readwrite("oracle_M", &ExperimentConfig::oracle_M);

  m.def("simulate", &cmd_simulate, py::arg("config"), "Writes dataset.csv; returns its path.");
  m.def("estimate", &cmd_estimate, py::arg("dataset"), py::arg("config"), "Writes moments.json.");
  m.def("solve", &cmd_solve, py::arg("moments"), py::arg("config"), "Writes solution.json.");
  m.def("experiment", &cmd_experiment, py::arg("config"), "Writes summary.json, sweep.csv and errors.csv.");
  m.def("oracle", &cmd_oracle, py::arg("config"), "Writes oracle.json from value-iteration expert moments.");
}
