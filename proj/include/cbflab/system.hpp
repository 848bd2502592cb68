#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cbflab/dsl.hpp"

namespace cbflab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Tolerance on the norm used for Ball/Sphere membership.
inline constexpr double kSetTolerance = 1e-9;

std::string format_vec(const Vec& v);

// ---------------------------------------------------------------------------
// Input sets

struct FullSpace {
    int m = 0;
};
struct BoxSet {
    Vec lower;
    Vec upper;
};
struct BallSet {
    int m = 0;
    double radius = 1.0;
};
struct SphereSet {
    int m = 0;
    double radius = 1.0;
};
struct FinitePoints {
    std::vector<Vec> points;
};

class InputSet {
public:
    using Variant = std::variant<FullSpace, BoxSet, BallSet, SphereSet, FinitePoints>;

    InputSet() : set_(FullSpace{0}) {}

    static InputSet full(int m);
    static InputSet box(Vec lower, Vec upper);
    static InputSet ball(int m, double radius);
    static InputSet sphere(int m, double radius);
    static InputSet points(std::vector<Vec> points);

    int dim() const;
    bool bounded() const { return !std::holds_alternative<FullSpace>(set_); }
    std::string kind_name() const;
    const Variant& variant() const { return set_; }

    /// Closest point of the set to u (Euclidean); sphere maps 0 to radius*e1.
    Vec project(const Vec& u) const;

private:
    explicit InputSet(Variant v) : set_(std::move(v)) {}
    Variant set_;
};

struct Membership {
    bool member = false;
    double distance = 0.0;
};

Membership membership(const Vec& u, const InputSet& s);

// ---------------------------------------------------------------------------
// Vector fields

class VectorField {
public:
    using Fn = std::function<Vec(const Vec&)>;

    VectorField() = default;
    VectorField(int dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

    /// Field with components given by expressions in x1..xn plus optional named parameters.
    static VectorField from_expressions(const std::vector<Expression>& components,
                                        const std::vector<std::string>& params = {},
                                        const std::vector<double>& param_values = {});

    Vec operator()(const Vec& p) const { return fn_(p); }
    int dim() const { return dim_; }
    explicit operator bool() const { return static_cast<bool>(fn_); }

    VectorField operator+(const VectorField& other) const;
    VectorField operator-(const VectorField& other) const;
    VectorField scaled(double c) const;

private:
    int dim_ = 0;
    Fn fn_;
};

// ---------------------------------------------------------------------------
// Systems

class GeneralSystem;

/// p' = X0(p) + sum_i u_i X_i(p).
class ControlAffineSystem {
public:
    ControlAffineSystem(std::vector<Expression> drift, std::vector<std::vector<Expression>> inputs, InputSet input_set);

    int n() const { return n_; }
    int m() const { return m_; }
    const InputSet& input_set() const { return input_set_; }
    const std::vector<Expression>& drift_expressions() const { return drift_; }
    const std::vector<std::vector<Expression>>& input_expressions() const { return inputs_; }

    Vec drift(const Vec& p) const;
    Mat input_matrix(const Vec& p) const;
    Vec eval(const Vec& p, const Vec& u) const;

    GeneralSystem to_general() const;

private:
    int n_;
    int m_;
    std::vector<Expression> drift_;
    std::vector<std::vector<Expression>> inputs_;
    std::vector<CompiledExpr> drift_c_;
    std::vector<std::vector<CompiledExpr>> inputs_c_;
    InputSet input_set_;
};

/// p' = f(p, u) with f given componentwise in x1..xn, u1..um.
class GeneralSystem {
public:
    GeneralSystem(int n, int m, std::vector<Expression> dynamics, InputSet input_set);

    int n() const { return n_; }
    int m() const { return m_; }
    const InputSet& input_set() const { return input_set_; }
    const std::vector<Expression>& dynamics() const { return dynamics_; }

    Vec eval(const Vec& p, const Vec& u) const;
    /// d f / d u, n x m.
    Mat input_jacobian(const Vec& p, const Vec& u) const;
    /// d f / d x, n x n.
    Mat state_jacobian(const Vec& p, const Vec& u) const;

private:
    Mat jacobian(const std::vector<std::vector<CompiledExpr>>& table, int cols, const Vec& p, const Vec& u) const;

    int n_;
    int m_;
    std::vector<Expression> dynamics_;
    std::vector<CompiledExpr> dyn_c_;
    std::vector<std::vector<CompiledExpr>> du_c_;
    std::vector<std::vector<CompiledExpr>> dx_c_;
    InputSet input_set_;
};

class System {
public:
    System(ControlAffineSystem s) : sys_(std::move(s)) {}  // NOLINT: implicit by design of the variant
    System(GeneralSystem s) : sys_(std::move(s)) {}        // NOLINT

    int n() const;
    int m() const;
    const InputSet& input_set() const;
    bool is_affine() const { return std::holds_alternative<ControlAffineSystem>(sys_); }
    const ControlAffineSystem* affine() const { return std::get_if<ControlAffineSystem>(&sys_); }
    const GeneralSystem* general() const { return std::get_if<GeneralSystem>(&sys_); }

    Vec eval(const Vec& p, const Vec& u) const;
    /// d F / d u at (p, u); for affine systems this is the input matrix.
    Mat input_jacobian(const Vec& p, const Vec& u) const;

private:
    std::variant<ControlAffineSystem, GeneralSystem> sys_;
};

Vec eval_dynamics(const System& sys, const Vec& p, const Vec& u);
Mat input_matrix(const ControlAffineSystem& sys, const Vec& p);

// ---------------------------------------------------------------------------
// Controllers

class BlendedController;

struct ExpressionController {
    std::vector<Expression> outputs;
};

struct TabulatedController {
    int m = 0;
    std::function<Vec(const Vec&)> solve;
};

class Controller {
public:
    using Variant = std::variant<ExpressionController, TabulatedController, std::shared_ptr<const BlendedController>>;

    Controller(ExpressionController c);                       // NOLINT
    Controller(TabulatedController c);                        // NOLINT
    Controller(std::shared_ptr<const BlendedController> c);   // NOLINT

    static Controller zero(int m);

    Vec operator()(const Vec& p) const;
    int output_dim() const;
    std::string kind_name() const;
    const Variant& variant() const { return ctrl_; }

private:
    Variant ctrl_;
    std::vector<CompiledExpr> compiled_;
    int state_slots_ = 0;
};

class ControllerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// p -> F(p, k(p)). Continuity of the result is the caller's modeling responsibility.
VectorField closed_loop(const System& sys, const Controller& k);

}  // namespace cbflab
