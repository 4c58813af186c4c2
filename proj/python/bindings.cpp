#include "psmp/apps.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace psmp;

namespace {

py::dict summary_dict(const RunSummary& s) {
    py::dict d;
    d["out_dir"] = s.out_dir;
    d["J0"] = s.J0;
    d["J"] = s.J;
    d["se"] = s.se;
    d["initial_residual"] = s.initial_residual;
    d["final_residual"] = s.final_residual;
    d["converged"] = s.converged;
    d["iterations"] = s.iterations;
    d["qp_gap"] = s.qp_gap ? py::cast(*s.qp_gap) : py::none();
    d["files"] = s.files;
    return d;
}

StatePath to_path(const Matrix& values, int first) {
    StatePath p;
    p.first = first;
    p.values = values;
    return p;
}

}  // namespace

PYBIND11_MODULE(_psmp, m) {
    m.doc() = "Delayed stochastic control: forward/adjoint solvers, gradient checks and scenario runs";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    py::class_<TimeGrid>(m, "TimeGrid")
        .def_readonly("T", &TimeGrid::T)
        .def_readonly("K", &TimeGrid::K)
        .def_readonly("dt", &TimeGrid::dt)
        .def_readonly("n_steps", &TimeGrid::n_steps)
        .def_readonly("n_delay", &TimeGrid::n_delay)
        .def("nodes", &TimeGrid::nodes)
        .def("node_of", &TimeGrid::node_of)
        .def("__repr__", [](const TimeGrid& g) {
            return "TimeGrid(T=" + std::to_string(g.T) + ", K=" + std::to_string(g.K) + ", n_steps=" +
                   std::to_string(g.n_steps) + ")";
        });
    m.def("build_grid", &build_grid, py::arg("T"), py::arg("K"), py::arg("n_steps"));
    m.def("counter_normal", &counter_normal, py::arg("seed"), py::arg("path"), py::arg("step"), py::arg("mode"));

    py::class_<FiniteMeasure>(m, "FiniteMeasure")
        .def_readonly("offsets", &FiniteMeasure::offsets)
        .def_readonly("weights", &FiniteMeasure::weights)
        .def_readonly("dt", &FiniteMeasure::dt)
        .def("total_mass", &FiniteMeasure::total_mass)
        .def("__len__", &FiniteMeasure::size);
    m.def("measure_from_offsets", &measure_from_offsets, py::arg("grid"), py::arg("offsets"), py::arg("weights"));
    m.def("dirac", &dirac, py::arg("grid"), py::arg("s"), py::arg("mass") = 1.0);
    m.def("trapezoid_lebesgue", &trapezoid_lebesgue, py::arg("grid"));

    // kernels act on (dim x nodes) arrays; `first` is the node index of column 0
    py::class_<KernelRepresentation>(m, "Kernel")
        .def(py::init<TimeGrid, FiniteMeasure, int, int, int, int>(), py::arg("grid"), py::arg("nu0"),
             py::arg("out_dim"), py::arg("in_dim"), py::arg("t_lo"), py::arg("t_hi"))
        .def_property_readonly("in_first", &KernelRepresentation::in_first)
        .def("set", [](KernelRepresentation& k, int node, int atom, const Matrix& v) {
            if (v.rows() != k.out_dim() || v.cols() != k.in_dim()) throw ValidationError("Kernel.set: shape mismatch");
            k.kernel(node, atom) = v;
        })
        .def("get", [](const KernelRepresentation& k, int node, int atom) { return Matrix(k.kernel(node, atom)); })
        .def("apply", [](const KernelRepresentation& k, const Matrix& Z, int first) { return k.apply(to_path(Z, first)).values; },
             py::arg("Z"), py::arg("first"))
        .def("apply_star", [](const KernelRepresentation& k, const Matrix& Q, int first) {
            return k.apply_star(to_path(Q, first)).values;
        }, py::arg("Q"), py::arg("first"))
        .def("dense", &KernelRepresentation::dense);

    m.def("duality_residual", [](const KernelRepresentation& k, const Matrix& Z, int z_first, const Matrix& Q, int q_first) {
        const auto r = duality_residual(k, to_path(Z, z_first), to_path(Q, q_first));
        return py::make_tuple(r.lhs, r.rhs, r.relative);
    }, py::arg("kernel"), py::arg("Z"), py::arg("z_first"), py::arg("Q"), py::arg("q_first"));

    m.def("normalize_config", [](const std::string& text) { return config_to_json(parse_config(text)); },
          "Validate a JSON config and return it fully resolved");
    m.def("config_hash", [](const std::string& text) { return config_hash(parse_config(text)); });

    m.def("run", [](const std::string& text, const std::string& out_dir) {
        auto cfg = parse_config(text);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        py::gil_scoped_release nogil;
        auto s = run_scenario(cfg);
        py::gil_scoped_acquire gil;
        return summary_dict(s);
    }, py::arg("config"), py::arg("out_dir") = "");

    m.def("grad_check", [](const std::string& text) {
        FdReport rep;
        {
            py::gil_scoped_release nogil;
            rep = scenario_grad_check(parse_config(text));
        }
        py::list rows;
        for (const auto& r : rep.rows) {
            py::dict d;
            d["rho"] = r.rho;
            d["fd"] = r.fd;
            d["central"] = r.central;
            d["yhat0"] = r.yhat0;
            d["pairing"] = r.pairing;
            rows.append(d);
        }
        return py::make_tuple(rep.J, rep.se, rows);
    }, py::arg("config"));

    m.def("lq_oracle", [](const std::string& text) {
        const auto o = scenario_lq_oracle(parse_config(text));
        py::dict d;
        d["qp_value"] = o.qp.value;
        d["qp_min_eig"] = o.qp.min_eig;
        d["descent_J"] = o.descent_J;
        d["descent_gap"] = o.descent_gap;
        d["formula_gap"] = o.formula_gap;
        return d;
    }, py::arg("config"));

    m.def("identity_suites", [](std::uint64_t seed) {
        py::list out;
        for (const auto& r : run_identity_suites(seed)) {
            py::dict d;
            d["name"] = r.name;
            d["instances"] = r.instances;
            d["worst"] = r.worst;
            d["tol"] = r.tol;
            d["pass"] = r.pass;
            out.append(d);
        }
        return out;
    }, py::arg("seed") = 20240611);

    m.def("emit_plotdata", &emit_plotdata, py::arg("dir"));
}
