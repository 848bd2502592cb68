#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cbflab/config.hpp"
#include "cbflab/flow.hpp"
#include "cbflab/geometry.hpp"
#include "cbflab/report.hpp"
#include "cbflab/zeros.hpp"

namespace py = pybind11;
using namespace cbflab;

namespace {

VectorField field_of(const std::vector<std::string>& components) {
    std::vector<Expression> exprs;
    for (const auto& c : components) exprs.push_back(parse_expr(c));
    return VectorField::from_expressions(exprs);
}

// Reports cross the boundary as JSON text; the Python side decodes them.
std::pair<std::string, int> run_text(const std::string& text, const std::string& command, const std::string& export_dir) {
    const auto rr = run(parse_config(text), command, RunContext{export_dir});
    return {rr.report.dump(), rr.exit_code};
}

std::pair<std::string, int> run_file(const std::string& path, const std::string& command, const std::string& export_dir) {
    const auto rr = run(load_config(path), command, RunContext{export_dir});
    return {rr.report.dump(), rr.exit_code};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Topological checks for control barrier functions";
    m.attr("__version__") = kToolVersion;

    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    py::class_<Expression>(m, "Expression")
        .def("eval", [](const Expression& e, const std::map<std::string, double>& b) {
            return e.eval(Binding(b.begin(), b.end()));
        })
        .def("diff", [](const Expression& e, const std::string& v) { return differentiate(e, v); })
        .def("free_variables", &Expression::free_variables)
        .def("__str__", &Expression::to_string)
        .def("__repr__", [](const Expression& e) { return "Expression(\"" + e.to_string() + "\")"; });
    m.def("parse_expr", [](const std::string& text) { return parse_expr(text); });

    py::class_<SafeSet>(m, "SafeSet")
        .def(py::init([](const std::string& h, const Vec& lower, const Vec& upper, int resolution) {
                 return SafeSet(parse_expr(h), BoundingBox{lower, upper}, resolution);
             }),
             py::arg("h"), py::arg("lower"), py::arg("upper"), py::arg("resolution") = 64)
        .def_property_readonly("dim", &SafeSet::dim)
        .def("h", &SafeSet::h)
        .def("grad", &SafeSet::grad)
        .def("euler_characteristic", [](const SafeSet& s) { return euler_characteristic(build_cubical_complex(s)); })
        .def("boundary_euler_characteristic",
             [](const SafeSet& s) { return euler_characteristic(boundary_complex(build_cubical_complex(s))); })
        .def("boundary_sample", &boundary_sample, py::arg("count"));

    m.def(
        "locate_zeros",
        [](const std::vector<std::string>& field, const SafeSet& s) {
            py::list out;
            for (const auto& c : locate_zeros(field_of(field), s)) {
                py::dict d;
                d["point"] = c.point;
                d["residual"] = c.residual;
                d["isolated"] = c.isolated;
                out.append(d);
            }
            return out;
        },
        py::arg("field"), py::arg("safeset"));

    m.def(
        "forward_invariance",
        [](const std::vector<std::string>& field, const SafeSet& s, int count, double horizon) {
            const auto r = verify_forward_invariance(field_of(field), s, count, horizon);
            py::dict d;
            d["passed"] = r.passed;
            d["min_h"] = r.min_h;
            if (!r.passed) d["witness_start"] = r.witness_start;
            return d;
        },
        py::arg("field"), py::arg("safeset"), py::arg("trajectories") = 100, py::arg("horizon") = 10.0);

    m.def("_run_text", &run_text);
    m.def("_run_file", &run_file);
    m.def("commands", &command_names);
}
