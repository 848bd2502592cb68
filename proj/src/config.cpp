#include "cbflab/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cbflab/report.hpp"
#include "cbflab/synthesis.hpp"

namespace cbflab {

namespace {

std::string at(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }
std::string at(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

void check_keys(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed) {
    if (!node.IsMap()) throw ConfigError(path, "expected a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.count(key)) throw ConfigError(at(path, key), "unknown key");
    }
}

template <typename T>
T scalar(const YAML::Node& node, const std::string& path) {
    if (!node || !node.IsScalar()) throw ConfigError(path, "expected a scalar value");
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(path, "cannot convert '" + node.Scalar() + "'");
    }
}

double positive(const YAML::Node& node, const std::string& path) {
    const double v = scalar<double>(node, path);
    if (!(v > 0.0)) throw ConfigError(path, "must be positive");
    return v;
}

Vec vector_of(const YAML::Node& node, const std::string& path, int expected = -1) {
    if (!node || !node.IsSequence()) throw ConfigError(path, "expected a list of numbers");
    if (expected >= 0 && static_cast<int>(node.size()) != expected) {
        throw ConfigError(path, "expected " + std::to_string(expected) + " entries, got " + std::to_string(node.size()));
    }
    Vec v(static_cast<Eigen::Index>(node.size()));
    for (std::size_t i = 0; i < node.size(); ++i) v[static_cast<Eigen::Index>(i)] = scalar<double>(node[i], at(path, i));
    return v;
}

Expression expr_of(const YAML::Node& node, const std::string& path, const std::set<std::string>& allowed,
                   const std::string& hint) {
    const auto text = scalar<std::string>(node, path);
    Expression e;
    try {
        e = parse_expr(text);
    } catch (const ParseError& err) {
        throw ConfigError(path, std::string("parse error: ") + err.what());
    }
    for (const auto& v : e.free_variables()) {
        if (!allowed.count(v)) throw ConfigError(path, "unknown variable '" + v + "' (" + hint + ")");
    }
    return e;
}

std::vector<Expression> exprs_of(const YAML::Node& node, const std::string& path, int expected,
                                 const std::set<std::string>& allowed, const std::string& hint) {
    if (!node || !node.IsSequence()) throw ConfigError(path, "expected a list of expression strings");
    if (expected >= 0 && static_cast<int>(node.size()) != expected) {
        throw ConfigError(path, "expected " + std::to_string(expected) + " expressions, got " + std::to_string(node.size()));
    }
    std::vector<Expression> out;
    for (std::size_t i = 0; i < node.size(); ++i) out.push_back(expr_of(node[i], at(path, i), allowed, hint));
    return out;
}

std::set<std::string> names(int n, int m = 0, const std::string& extra = "") {
    std::set<std::string> s;
    for (const auto& v : state_names(n)) s.insert(v);
    for (const auto& v : input_names(m)) s.insert(v);
    if (!extra.empty()) s.insert(extra);
    return s;
}

std::string state_hint(int n) { return "states are x1..x" + std::to_string(n); }

InputSet input_set_of(const YAML::Node& node, const std::string& path, int m) {
    if (!node) return InputSet::full(m);
    check_keys(node, path, {"type", "lower", "upper", "radius", "points"});
    const auto type = scalar<std::string>(node["type"], at(path, "type"));
    try {
        if (type == "full") return InputSet::full(m);
        if (type == "box") return InputSet::box(vector_of(node["lower"], at(path, "lower"), m), vector_of(node["upper"], at(path, "upper"), m));
        if (type == "ball") return InputSet::ball(m, positive(node["radius"], at(path, "radius")));
        if (type == "sphere") return InputSet::sphere(m, positive(node["radius"], at(path, "radius")));
        if (type == "points") {
            const auto& pts = node["points"];
            if (!pts || !pts.IsSequence() || pts.size() == 0) throw ConfigError(at(path, "points"), "expected a non-empty list");
            std::vector<Vec> v;
            for (std::size_t i = 0; i < pts.size(); ++i) v.push_back(vector_of(pts[i], at(at(path, "points"), i), m));
            return InputSet::points(std::move(v));
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    throw ConfigError(at(path, "type"), "unknown input set '" + type + "' (full, box, ball, sphere, points)");
}

System system_of(const YAML::Node& node, const std::string& path) {
    check_keys(node, path, {"type", "n", "m", "drift", "inputs", "dynamics", "input_set"});
    const auto type = node["type"] ? scalar<std::string>(node["type"], at(path, "type")) : std::string("affine");
    const int n = scalar<int>(node["n"], at(path, "n"));
    const int m = scalar<int>(node["m"], at(path, "m"));
    if (n < 1) throw ConfigError(at(path, "n"), "must be >= 1");
    if (m < 0) throw ConfigError(at(path, "m"), "must be >= 0");
    InputSet u = input_set_of(node["input_set"], at(path, "input_set"), m);
    if (u.dim() != m) throw ConfigError(at(path, "input_set"), "dimension differs from m");
    try {
        if (type == "affine") {
            if (node["dynamics"]) throw ConfigError(at(path, "dynamics"), "affine systems use drift and inputs");
            std::vector<Expression> drift;
            if (node["drift"]) {
                drift = exprs_of(node["drift"], at(path, "drift"), n, names(n), state_hint(n));
            } else {
                drift.assign(static_cast<std::size_t>(n), Expression::constant(0.0));
            }
            std::vector<std::vector<Expression>> inputs;
            const auto& in = node["inputs"];
            if (m > 0) {
                if (!in || !in.IsSequence() || static_cast<int>(in.size()) != m) {
                    throw ConfigError(at(path, "inputs"), "expected m = " + std::to_string(m) + " input vector fields");
                }
                for (std::size_t i = 0; i < in.size(); ++i) {
                    inputs.push_back(exprs_of(in[i], at(at(path, "inputs"), i), n, names(n), state_hint(n)));
                }
            }
            return ControlAffineSystem(std::move(drift), std::move(inputs), std::move(u));
        }
        if (type == "general") {
            if (node["drift"] || node["inputs"]) throw ConfigError(path, "general systems use dynamics only");
            auto dyn = exprs_of(node["dynamics"], at(path, "dynamics"), n, names(n, m),
                                "states are x1..x" + std::to_string(n) + ", inputs u1..u" + std::to_string(m));
            return GeneralSystem(n, m, std::move(dyn), std::move(u));
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    throw ConfigError(at(path, "type"), "unknown system type '" + type + "' (affine, general)");
}

SafeSet safeset_of(const YAML::Node& node, const std::string& path, std::optional<int> n_sys) {
    check_keys(node, path, {"h", "bbox", "resolution"});
    const auto& box = node["bbox"];
    if (!box) throw ConfigError(at(path, "bbox"), "missing");
    check_keys(box, at(path, "bbox"), {"lower", "upper"});
    const Vec lo = vector_of(box["lower"], at(path, "bbox.lower"), n_sys ? *n_sys : -1);
    const Vec hi = vector_of(box["upper"], at(path, "bbox.upper"), static_cast<int>(lo.size()));
    const int n = static_cast<int>(lo.size());
    Expression h = expr_of(node["h"], at(path, "h"), names(n), state_hint(n));
    const int res = node["resolution"] ? scalar<int>(node["resolution"], at(path, "resolution")) : 64;
    try {
        return SafeSet(std::move(h), BoundingBox{lo, hi}, res);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
}

AlphaFunction alpha_of(const YAML::Node& node, const std::string& path) {
    check_keys(node, path, {"type", "c", "expr"});
    const auto type = scalar<std::string>(node["type"], at(path, "type"));
    try {
        if (type == "linear") return AlphaFunction::linear(node["c"] ? positive(node["c"], at(path, "c")) : 1.0);
        if (type == "cubic") return AlphaFunction::cubic(node["c"] ? positive(node["c"], at(path, "c")) : 1.0);
        if (type == "expression") return AlphaFunction::user(expr_of(node["expr"], at(path, "expr"), {"r"}, "alpha uses r"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    throw ConfigError(at(path, "type"), "unknown alpha '" + type + "' (linear, cubic, expression)");
}

Theorem theorem_of(const std::string& s, const std::string& path) {
    if (s == "T4") return Theorem::T4;
    if (s == "T5") return Theorem::T5;
    if (s == "Cor1") return Theorem::Cor1;
    throw ConfigError(path, "unknown family theorem '" + s + "' (T4, T5, Cor1)");
}

RunOptions run_of(const YAML::Node& node, const std::string& path) {
    RunOptions r;
    if (!node) return r;
    check_keys(node, path,
               {"commands", "seed", "threads", "field", "perturbation", "family_theorems", "horizon", "trajectories", "t0",
                "boundary_samples", "margin", "strict_samples", "strict_t0"});
    if (const auto& c = node["commands"]) {
        if (!c.IsSequence()) throw ConfigError(at(path, "commands"), "expected a list");
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto name = scalar<std::string>(c[i], at(at(path, "commands"), i));
            const auto& known = command_names();
            if (std::find(known.begin(), known.end(), name) == known.end()) {
                throw ConfigError(at(at(path, "commands"), i), "unknown command '" + name + "'");
            }
            r.commands.push_back(name);
        }
    }
    if (node["seed"]) r.seed = scalar<std::uint64_t>(node["seed"], at(path, "seed"));
    if (node["threads"]) r.threads = static_cast<int>(positive(node["threads"], at(path, "threads")));
    if (node["field"]) r.field = scalar<std::string>(node["field"], at(path, "field"));
    if (node["perturbation"]) r.perturbation = scalar<std::string>(node["perturbation"], at(path, "perturbation"));
    if (const auto& f = node["family_theorems"]) {
        if (!f.IsSequence()) throw ConfigError(at(path, "family_theorems"), "expected a list");
        r.family_theorems.clear();
        for (std::size_t i = 0; i < f.size(); ++i) {
            const auto p = at(at(path, "family_theorems"), i);
            r.family_theorems.push_back(theorem_of(scalar<std::string>(f[i], p), p));
        }
    }
    if (node["horizon"]) r.horizon = positive(node["horizon"], at(path, "horizon"));
    if (node["trajectories"]) r.trajectories = static_cast<int>(positive(node["trajectories"], at(path, "trajectories")));
    if (node["t0"]) r.t0 = positive(node["t0"], at(path, "t0"));
    if (node["boundary_samples"]) r.boundary_samples = static_cast<int>(positive(node["boundary_samples"], at(path, "boundary_samples")));
    if (node["margin"]) r.margin = positive(node["margin"], at(path, "margin"));
    if (node["strict_samples"]) r.strict_samples = static_cast<std::size_t>(positive(node["strict_samples"], at(path, "strict_samples")));
    if (node["strict_t0"]) r.strict_t0 = positive(node["strict_t0"], at(path, "strict_t0"));
    return r;
}

}  // namespace

AnalysisConfig parse_config(const std::string& text, const std::string& source) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("", "YAML syntax error at line " + std::to_string(e.mark.line + 1) + ", column " +
                                  std::to_string(e.mark.column + 1) + ": " + e.msg);
    }
    if (!root.IsMap()) throw ConfigError("", "top level must be a mapping");
    check_keys(root, "", {"system", "safeset", "alpha", "controller", "fields", "perturbations", "brockett", "run"});

    AnalysisConfig cfg;
    cfg.source = source;
    cfg.text = text;
    if (root["system"]) cfg.system = system_of(root["system"], "system");
    std::optional<int> n;
    if (cfg.system) n = cfg.system->n();
    if (root["safeset"]) {
        cfg.safeset = safeset_of(root["safeset"], "safeset", n);
        n = cfg.safeset->dim();
        if (cfg.safeset->barrier().contains(UnaryOp::Abs)) {
            cfg.warnings.push_back("h contains abs(); its derivative at 0 is taken as 0, but barrier functions should be smooth");
        }
    }
    if (root["alpha"]) cfg.alpha = alpha_of(root["alpha"], "alpha");

    if (const auto& c = root["controller"]) {
        if (!cfg.system) throw ConfigError("controller", "needs a system block");
        check_keys(c, "controller", {"type", "u", "nominal"});
        const int ns = cfg.system->n(), m = cfg.system->m();
        ControllerSpec spec;
        const auto type = scalar<std::string>(c["type"], "controller.type");
        if (type == "zero") {
            spec.kind = ControllerSpec::Kind::Zero;
        } else if (type == "expression") {
            spec.kind = ControllerSpec::Kind::Expression;
            spec.outputs = exprs_of(c["u"], "controller.u", m, names(ns), state_hint(ns));
        } else if (type == "qp") {
            spec.kind = ControllerSpec::Kind::Qp;
            if (!cfg.system->is_affine()) throw ConfigError("controller.type", "qp needs an affine system");
            if (!cfg.safeset || !cfg.alpha) throw ConfigError("controller.type", "qp needs safeset and alpha blocks");
            if (c["nominal"]) {
                spec.outputs = exprs_of(c["nominal"], "controller.nominal", m, names(ns), state_hint(ns));
            } else {
                spec.outputs.assign(static_cast<std::size_t>(m), Expression::constant(0.0));
            }
        } else {
            throw ConfigError("controller.type", "unknown controller '" + type + "' (zero, expression, qp)");
        }
        cfg.controller = std::move(spec);
    }

    if (const auto& f = root["fields"]) {
        if (!f.IsMap()) throw ConfigError("fields", "expected a mapping of name to expression list");
        if (!n) throw ConfigError("fields", "needs a system or safeset block for the dimension");
        for (const auto& kv : f) {
            const auto name = kv.first.as<std::string>();
            cfg.fields[name] = exprs_of(kv.second, at("fields", name), *n, names(*n), state_hint(*n));
        }
    }

    if (const auto& ps = root["perturbations"]) {
        if (!ps.IsSequence()) throw ConfigError("perturbations", "expected a list");
        if (!n) throw ConfigError("perturbations", "needs a system or safeset block for the dimension");
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto path = at("perturbations", i);
            check_keys(ps[i], path, {"name", "z", "scale"});
            PerturbationField pf;
            pf.name = ps[i]["name"] ? scalar<std::string>(ps[i]["name"], at(path, "name")) : "perturbation" + std::to_string(i);
            if (ps[i]["scale"]) pf.scale_param = scalar<std::string>(ps[i]["scale"], at(path, "scale"));
            pf.components = exprs_of(ps[i]["z"], at(path, "z"), *n, names(*n, 0, pf.scale_param),
                                     state_hint(*n) + (pf.scale_param.empty() ? "" : ", scale " + pf.scale_param));
            cfg.perturbations.push_back(std::move(pf));
        }
    }

    if (const auto& b = root["brockett"]) {
        if (!cfg.system) throw ConfigError("brockett", "needs a system block");
        check_keys(b, "brockett", {"xstar", "ball_radius", "search_radius"});
        BrockettSpec spec;
        spec.xstar = b["xstar"] ? vector_of(b["xstar"], "brockett.xstar", cfg.system->n()) : Vec(Vec::Zero(cfg.system->n()));
        if (b["ball_radius"]) spec.ball_radius = positive(b["ball_radius"], "brockett.ball_radius");
        if (b["search_radius"]) spec.search_radius = positive(b["search_radius"], "brockett.search_radius");
        cfg.brockett = spec;
    }

    cfg.run = run_of(root["run"], "run");
    if (!cfg.run.field.empty() && cfg.run.field != "closed_loop" && !cfg.fields.count(cfg.run.field)) {
        throw ConfigError("run.field", "unknown field '" + cfg.run.field + "'");
    }
    if (!cfg.run.perturbation.empty()) {
        bool found = false;
        for (const auto& p : cfg.perturbations) found = found || p.name == cfg.run.perturbation;
        if (!found) throw ConfigError("run.perturbation", "unknown perturbation '" + cfg.run.perturbation + "'");
    }
    if (cfg.system && cfg.safeset && cfg.system->n() != cfg.safeset->dim()) {
        throw ConfigError("safeset.bbox", "dimension differs from system.n");
    }
    return cfg;
}

AnalysisConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

Controller config_controller(const AnalysisConfig& cfg) {
    if (!cfg.system) throw ConfigError("system", "missing system block");
    if (!cfg.controller || cfg.controller->kind == ControllerSpec::Kind::Zero) return Controller::zero(cfg.system->m());
    if (cfg.controller->kind == ControllerSpec::Kind::Expression) return Controller(ExpressionController{cfg.controller->outputs});
    return qp_filter(*cfg.system->affine(), *cfg.safeset, *cfg.alpha, Controller(ExpressionController{cfg.controller->outputs}));
}

VectorField config_field(const AnalysisConfig& cfg, const std::string& name) {
    const std::string pick = name.empty() ? cfg.run.field : name;
    if (!pick.empty() && pick != "closed_loop") {
        auto it = cfg.fields.find(pick);
        if (it == cfg.fields.end()) throw ConfigError("run.field", "unknown field '" + pick + "'");
        return VectorField::from_expressions(it->second);
    }
    if (!cfg.system) throw ConfigError("run.field", "no field selected and no system to close the loop on");
    return closed_loop(*cfg.system, config_controller(cfg));
}

}  // namespace cbflab
