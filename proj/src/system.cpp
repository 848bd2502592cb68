#include "cbflab/system.hpp"

#include <cstdio>
#include <sstream>

#include "cbflab/synthesis.hpp"

namespace cbflab {

std::string format_vec(const Vec& v) {
    std::string out = "(";
    char buf[32];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6g", v[i]);
        if (i) out += ", ";
        out += buf;
    }
    return out + ")";
}

namespace {

std::vector<double> slots_of(const Vec& p) { return {p.data(), p.data() + p.size()}; }

std::vector<double> slots_of(const Vec& p, const Vec& u) {
    std::vector<double> s(static_cast<std::size_t>(p.size() + u.size()));
    for (Eigen::Index i = 0; i < p.size(); ++i) s[static_cast<std::size_t>(i)] = p[i];
    for (Eigen::Index i = 0; i < u.size(); ++i) s[static_cast<std::size_t>(p.size() + i)] = u[i];
    return s;
}

[[noreturn]] void rethrow_with_context(const EvalError& e, const std::string& context) {
    throw EvalError(e.kind(), std::string(e.what()) + " " + context, e.subexpression());
}

std::vector<CompiledExpr> compile_all(const std::vector<Expression>& exprs, const std::vector<std::string>& vars,
                                      const char* what) {
    std::vector<CompiledExpr> out;
    out.reserve(exprs.size());
    for (std::size_t i = 0; i < exprs.size(); ++i) {
        try {
            out.emplace_back(exprs[i], vars);
        } catch (const EvalError& e) {
            throw std::invalid_argument(std::string(what) + "[" + std::to_string(i) + "]: " + e.what());
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

InputSet InputSet::full(int m) {
    if (m < 0) throw std::invalid_argument("input dimension must be non-negative");
    return InputSet(FullSpace{m});
}

InputSet InputSet::box(Vec lower, Vec upper) {
    if (lower.size() != upper.size()) throw std::invalid_argument("box bounds differ in dimension");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
        if (!(lower[i] <= upper[i])) throw std::invalid_argument("box lower bound exceeds upper bound");
    }
    return InputSet(BoxSet{std::move(lower), std::move(upper)});
}

InputSet InputSet::ball(int m, double radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("ball radius must be positive");
    return InputSet(BallSet{m, radius});
}

InputSet InputSet::sphere(int m, double radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("sphere radius must be positive");
    if (m < 1) throw std::invalid_argument("sphere needs input dimension >= 1");
    return InputSet(SphereSet{m, radius});
}

InputSet InputSet::points(std::vector<Vec> points) {
    if (points.empty()) throw std::invalid_argument("finite input set must be non-empty");
    for (const auto& p : points) {
        if (p.size() != points.front().size()) throw std::invalid_argument("finite input points differ in dimension");
    }
    return InputSet(FinitePoints{std::move(points)});
}

int InputSet::dim() const {
    return std::visit(
        [](const auto& s) -> int {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, BoxSet>) {
                return static_cast<int>(s.lower.size());
            } else if constexpr (std::is_same_v<T, FinitePoints>) {
                return static_cast<int>(s.points.front().size());
            } else {
                return s.m;
            }
        },
        set_);
}

std::string InputSet::kind_name() const {
    static const char* names[] = {"full", "box", "ball", "sphere", "points"};
    return names[set_.index()];
}

Vec InputSet::project(const Vec& u) const {
    return std::visit(
        [&](const auto& s) -> Vec {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, FullSpace>) {
                return u;
            } else if constexpr (std::is_same_v<T, BoxSet>) {
                return u.cwiseMax(s.lower).cwiseMin(s.upper);
            } else if constexpr (std::is_same_v<T, BallSet>) {
                double r = u.norm();
                return r <= s.radius ? u : Vec(u * (s.radius / r));
            } else if constexpr (std::is_same_v<T, SphereSet>) {
                double r = u.norm();
                if (r == 0.0) {
                    Vec e = Vec::Zero(s.m);
                    e[0] = s.radius;
                    return e;
                }
                return u * (s.radius / r);
            } else {
                const Vec* best = &s.points.front();
                double best_d = (u - *best).norm();
                for (const auto& q : s.points) {
                    double d = (u - q).norm();
                    if (d < best_d) {
                        best_d = d;
                        best = &q;
                    }
                }
                return *best;
            }
        },
        set_);
}

Membership membership(const Vec& u, const InputSet& s) {
    if (u.size() != s.dim()) throw std::invalid_argument("input dimension does not match input set");
    return std::visit(
        [&](const auto& set) -> Membership {
            using T = std::decay_t<decltype(set)>;
            if constexpr (std::is_same_v<T, FullSpace>) {
                return {true, 0.0};
            } else if constexpr (std::is_same_v<T, BoxSet>) {
                bool inside = ((u.array() >= set.lower.array()) && (u.array() <= set.upper.array())).all();
                double d = (u - u.cwiseMax(set.lower).cwiseMin(set.upper)).norm();
                return {inside, d};
            } else if constexpr (std::is_same_v<T, BallSet>) {
                double r = u.norm();
                return {r <= set.radius + kSetTolerance, std::max(0.0, r - set.radius)};
            } else if constexpr (std::is_same_v<T, SphereSet>) {
                double d = std::fabs(u.norm() - set.radius);
                return {d <= kSetTolerance, d};
            } else {
                double d = std::numeric_limits<double>::infinity();
                for (const auto& q : set.points) d = std::min(d, (u - q).norm());
                return {d <= kSetTolerance, d};
            }
        },
        s.variant());
}

// ---------------------------------------------------------------------------

VectorField VectorField::from_expressions(const std::vector<Expression>& components,
                                          const std::vector<std::string>& params,
                                          const std::vector<double>& param_values) {
    const int n = static_cast<int>(components.size());
    if (params.size() != param_values.size()) throw std::invalid_argument("parameter names and values differ in length");
    std::vector<std::string> vars = state_names(n);
    vars.insert(vars.end(), params.begin(), params.end());
    auto compiled = std::make_shared<const std::vector<CompiledExpr>>(compile_all(components, vars, "field"));
    std::vector<double> extra = param_values;
    return VectorField(n, [compiled, extra, n](const Vec& p) {
        std::vector<double> slots(p.data(), p.data() + p.size());
        slots.insert(slots.end(), extra.begin(), extra.end());
        Vec out(n);
        try {
            for (int i = 0; i < n; ++i) out[i] = (*compiled)[static_cast<std::size_t>(i)](slots);
        } catch (const EvalError& e) {
            rethrow_with_context(e, "at p=" + format_vec(p));
        }
        return out;
    });
}

VectorField VectorField::operator+(const VectorField& other) const {
    auto a = fn_;
    auto b = other.fn_;
    return VectorField(dim_, [a, b](const Vec& p) -> Vec { return a(p) + b(p); });
}

VectorField VectorField::operator-(const VectorField& other) const {
    auto a = fn_;
    auto b = other.fn_;
    return VectorField(dim_, [a, b](const Vec& p) -> Vec { return a(p) - b(p); });
}

VectorField VectorField::scaled(double c) const {
    auto a = fn_;
    return VectorField(dim_, [a, c](const Vec& p) -> Vec { return c * a(p); });
}

// ---------------------------------------------------------------------------

ControlAffineSystem::ControlAffineSystem(std::vector<Expression> drift, std::vector<std::vector<Expression>> inputs,
                                         InputSet input_set)
    : n_(static_cast<int>(drift.size())),
      m_(static_cast<int>(inputs.size())),
      drift_(std::move(drift)),
      inputs_(std::move(inputs)),
      input_set_(std::move(input_set)) {
    if (n_ < 1) throw std::invalid_argument("state dimension must be at least 1");
    if (input_set_.dim() != m_) throw std::invalid_argument("input set dimension does not match number of input fields");
    const auto vars = state_names(n_);
    drift_c_ = compile_all(drift_, vars, "drift");
    for (std::size_t j = 0; j < inputs_.size(); ++j) {
        if (static_cast<int>(inputs_[j].size()) != n_) {
            throw std::invalid_argument("input field " + std::to_string(j + 1) + " has wrong dimension");
        }
        inputs_c_.push_back(compile_all(inputs_[j], vars, ("inputs[" + std::to_string(j) + "]").c_str()));
    }
}

Vec ControlAffineSystem::drift(const Vec& p) const {
    const auto slots = slots_of(p);
    Vec out(n_);
    try {
        for (int i = 0; i < n_; ++i) out[i] = drift_c_[static_cast<std::size_t>(i)](slots);
    } catch (const EvalError& e) {
        rethrow_with_context(e, "in drift at p=" + format_vec(p));
    }
    return out;
}

Mat ControlAffineSystem::input_matrix(const Vec& p) const {
    const auto slots = slots_of(p);
    Mat g(n_, m_);
    try {
        for (int j = 0; j < m_; ++j) {
            for (int i = 0; i < n_; ++i) g(i, j) = inputs_c_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)](slots);
        }
    } catch (const EvalError& e) {
        rethrow_with_context(e, "in input fields at p=" + format_vec(p));
    }
    return g;
}

Vec ControlAffineSystem::eval(const Vec& p, const Vec& u) const {
    if (p.size() != n_ || u.size() != m_) throw std::invalid_argument("state/input dimension mismatch");
    Vec out = drift(p);
    if (m_ > 0) out += input_matrix(p) * u;
    return out;
}

GeneralSystem ControlAffineSystem::to_general() const {
    std::vector<Expression> dyn;
    for (int i = 0; i < n_; ++i) {
        Expression e = drift_[static_cast<std::size_t>(i)];
        for (int j = 0; j < m_; ++j) {
            e = e + Expression::variable("u" + std::to_string(j + 1)) * inputs_[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
        }
        dyn.push_back(e);
    }
    return GeneralSystem(n_, m_, std::move(dyn), input_set_);
}

GeneralSystem::GeneralSystem(int n, int m, std::vector<Expression> dynamics, InputSet input_set)
    : n_(n), m_(m), dynamics_(std::move(dynamics)), input_set_(std::move(input_set)) {
    if (n_ < 1) throw std::invalid_argument("state dimension must be at least 1");
    if (m_ < 0) throw std::invalid_argument("input dimension must be non-negative");
    if (static_cast<int>(dynamics_.size()) != n_) throw std::invalid_argument("dynamics must have n components");
    if (input_set_.dim() != m_) throw std::invalid_argument("input set dimension does not match m");
    auto vars = state_names(n_);
    const auto uvars = input_names(m_);
    vars.insert(vars.end(), uvars.begin(), uvars.end());
    dyn_c_ = compile_all(dynamics_, vars, "dynamics");
    du_c_.resize(static_cast<std::size_t>(n_));
    dx_c_.resize(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) {
        for (const auto& v : uvars) du_c_[static_cast<std::size_t>(i)].emplace_back(differentiate(dynamics_[static_cast<std::size_t>(i)], v), vars);
        for (const auto& v : state_names(n_)) dx_c_[static_cast<std::size_t>(i)].emplace_back(differentiate(dynamics_[static_cast<std::size_t>(i)], v), vars);
    }
}

Vec GeneralSystem::eval(const Vec& p, const Vec& u) const {
    if (p.size() != n_ || u.size() != m_) throw std::invalid_argument("state/input dimension mismatch");
    const auto slots = slots_of(p, u);
    Vec out(n_);
    try {
        for (int i = 0; i < n_; ++i) out[i] = dyn_c_[static_cast<std::size_t>(i)](slots);
    } catch (const EvalError& e) {
        rethrow_with_context(e, "in dynamics at p=" + format_vec(p) + ", u=" + format_vec(u));
    }
    return out;
}

Mat GeneralSystem::jacobian(const std::vector<std::vector<CompiledExpr>>& table, int cols, const Vec& p, const Vec& u) const {
    const auto slots = slots_of(p, u);
    Mat j(n_, cols);
    try {
        for (int i = 0; i < n_; ++i) {
            for (int k = 0; k < cols; ++k) j(i, k) = table[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)](slots);
        }
    } catch (const EvalError& e) {
        rethrow_with_context(e, "in dynamics derivative at p=" + format_vec(p) + ", u=" + format_vec(u));
    }
    return j;
}

Mat GeneralSystem::input_jacobian(const Vec& p, const Vec& u) const { return jacobian(du_c_, m_, p, u); }
Mat GeneralSystem::state_jacobian(const Vec& p, const Vec& u) const { return jacobian(dx_c_, n_, p, u); }

int System::n() const {
    return std::visit([](const auto& s) { return s.n(); }, sys_);
}
int System::m() const {
    return std::visit([](const auto& s) { return s.m(); }, sys_);
}
const InputSet& System::input_set() const {
    return std::visit([](const auto& s) -> const InputSet& { return s.input_set(); }, sys_);
}
Vec System::eval(const Vec& p, const Vec& u) const {
    return std::visit([&](const auto& s) { return s.eval(p, u); }, sys_);
}
Mat System::input_jacobian(const Vec& p, const Vec& u) const {
    if (const auto* a = affine()) return a->input_matrix(p);
    return general()->input_jacobian(p, u);
}

Vec eval_dynamics(const System& sys, const Vec& p, const Vec& u) { return sys.eval(p, u); }
Mat input_matrix(const ControlAffineSystem& sys, const Vec& p) { return sys.input_matrix(p); }

// ---------------------------------------------------------------------------

Controller::Controller(ExpressionController c) : ctrl_(std::move(c)) {
    const auto& e = std::get<ExpressionController>(ctrl_);
    int n = 0;
    for (const auto& out : e.outputs) {
        for (const auto& v : out.free_variables()) {
            if (v.size() < 2 || v[0] != 'x') throw std::invalid_argument("controller expression uses non-state variable '" + v + "'");
            n = std::max(n, std::stoi(v.substr(1)));
        }
    }
    compiled_ = compile_all(e.outputs, state_names(n), "controller");
    state_slots_ = n;
}

Controller::Controller(TabulatedController c) : ctrl_(std::move(c)) {}
Controller::Controller(std::shared_ptr<const BlendedController> c) : ctrl_(std::move(c)) {}

Controller Controller::zero(int m) {
    ExpressionController c;
    c.outputs.assign(static_cast<std::size_t>(m), Expression::constant(0.0));
    return Controller(std::move(c));
}

int Controller::output_dim() const {
    return std::visit(
        [](const auto& c) -> int {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, ExpressionController>) {
                return static_cast<int>(c.outputs.size());
            } else if constexpr (std::is_same_v<T, TabulatedController>) {
                return c.m;
            } else {
                return c->input_dim();
            }
        },
        ctrl_);
}

std::string Controller::kind_name() const {
    static const char* names[] = {"expression", "tabulated", "blended"};
    return names[ctrl_.index()];
}

Vec Controller::operator()(const Vec& p) const {
    return std::visit(
        [&](const auto& c) -> Vec {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, ExpressionController>) {
                if (p.size() < state_slots_) throw std::invalid_argument("controller needs a higher-dimensional state");
                std::span<const double> slots(p.data(), static_cast<std::size_t>(p.size()));
                Vec u(static_cast<Eigen::Index>(c.outputs.size()));
                for (std::size_t i = 0; i < c.outputs.size(); ++i) u[static_cast<Eigen::Index>(i)] = compiled_[i](slots);
                return u;
            } else if constexpr (std::is_same_v<T, TabulatedController>) {
                return c.solve(p);
            } else {
                return c->evaluate(p);
            }
        },
        ctrl_);
}

VectorField closed_loop(const System& sys, const Controller& k) {
    if (k.output_dim() != sys.m()) throw std::invalid_argument("controller output dimension does not match system input dimension");
    return VectorField(sys.n(), [sys, k](const Vec& p) -> Vec {
        Vec u;
        try {
            u = k(p);
        } catch (const std::exception& e) {
            throw ControllerError("controller evaluation failed at p=" + format_vec(p) + ": " + e.what());
        }
        return sys.eval(p, u);
    });
}

}  // namespace cbflab
