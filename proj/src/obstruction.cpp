#include "cbflab/obstruction.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include "cbflab/flow.hpp"
#include "cbflab/parallel.hpp"
#include "numeric.hpp"

namespace cbflab {

namespace {

constexpr int kStarts = 20;
constexpr double kStepStop = 1e-10;

using ResidualFn = std::function<Vec(const Vec&)>;  // u -> F(p, u) - z
using JacobianFn = std::function<Mat(const Vec&)>;  // u -> dF/du

struct Best {
    Vec u;
    double residual = std::numeric_limits<double>::infinity();

    void offer(const Vec& cand, double r) {
        if (r < residual) {
            residual = r;
            u = cand;
        }
    }
};

// Adaptive-step descent on 0.5 |r(u)|^2 with a projection back onto the set.
Vec projected_descent(const ResidualFn& res, const JacobianFn& jac, const std::function<Vec(const Vec&)>& proj, Vec u) {
    Vec r = res(u);
    double f = 0.5 * r.squaredNorm();
    double step = 1.0;
    for (int it = 0; it < 5000; ++it) {
        const Vec g = jac(u).transpose() * r;
        if (g.norm() == 0.0) break;
        bool moved = false;
        while (step > 1e-16) {
            const Vec cand = proj(u - step * g);
            const Vec rc = res(cand);
            const double fc = 0.5 * rc.squaredNorm();
            if (fc < f) {
                const double move = (cand - u).norm();
                u = cand;
                r = rc;
                f = fc;
                step *= 1.5;
                moved = move >= kStepStop;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    return u;
}

Vec sphere_point(int m, double radius, const Vec& ang) {
    Vec u(m);
    if (m == 2) {
        u << std::cos(ang[0]), std::sin(ang[0]);
    } else {
        u << std::sin(ang[1]) * std::cos(ang[0]), std::sin(ang[1]) * std::sin(ang[0]), std::cos(ang[1]);
    }
    return radius * u;
}

Mat sphere_tangent(int m, double radius, const Vec& ang) {
    Mat d(m, m - 1);
    if (m == 2) {
        d << -std::sin(ang[0]), std::cos(ang[0]);
    } else {
        const double ct = std::cos(ang[0]), st = std::sin(ang[0]), cp = std::cos(ang[1]), sp = std::sin(ang[1]);
        d << -sp * st, cp * ct, sp * ct, cp * st, 0.0, -sp;
    }
    return radius * d;
}

Vec angles_of(int m, const Vec& u) {
    Vec a(m - 1);
    a[0] = std::atan2(u[1], u[0]);
    if (m == 3) a[1] = std::acos(std::clamp(u[2] / std::max(u.norm(), 1e-300), -1.0, 1.0));
    return a;
}

Best minimize_over(const InputSet& set, const ResidualFn& res, const JacobianFn& jac, const Vec& warm, std::uint64_t seed) {
    Best best;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const int m = set.dim();
    auto proj = [&](const Vec& u) { return set.project(u); };

    std::visit(
        [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, FullSpace>) {
                const Vec u = projected_descent(res, jac, proj, warm);
                best.offer(u, res(u).norm());
            } else if constexpr (std::is_same_v<T, FinitePoints>) {
                for (const auto& u : s.points) best.offer(u, res(u).norm());
            } else if constexpr (std::is_same_v<T, SphereSet>) {
                if (m == 1) {
                    for (double sgn : {-1.0, 1.0}) best.offer(Vec::Constant(1, sgn * s.radius), res(Vec::Constant(1, sgn * s.radius)).norm());
                    return;
                }
                if (m > 3) {
                    for (int k = 0; k < kStarts; ++k) {
                        Vec u0 = k == 0 ? proj(warm) : Vec(proj(Vec::NullaryExpr(m, [&] { return normal(rng); })));
                        Vec u = projected_descent(res, jac, proj, u0);
                        best.offer(u, res(u).norm());
                    }
                    return;
                }
                // Angular parametrization: gradient descent on the angles.
                std::vector<Vec> starts{angles_of(m, proj(warm))};
                for (int k = 0; k < kStarts; ++k) {
                    Vec a(m - 1);
                    if (m == 2) {
                        a[0] = 2.0 * std::numbers::pi * k / kStarts;
                    } else {
                        const double zc = 1.0 - (2.0 * k + 1.0) / kStarts;  // Fibonacci lattice
                        a[0] = std::fmod(k * std::numbers::pi * (3.0 - std::sqrt(5.0)), 2.0 * std::numbers::pi);
                        a[1] = std::acos(zc);
                    }
                    starts.push_back(a);
                }
                auto ares = [&](const Vec& a) { return res(sphere_point(m, s.radius, a)); };
                auto ajac = [&](const Vec& a) -> Mat { return jac(sphere_point(m, s.radius, a)) * sphere_tangent(m, s.radius, a); };
                auto ident = [](const Vec& a) { return a; };
                for (const auto& a0 : starts) {
                    const Vec a = projected_descent(ares, ajac, ident, a0);
                    const Vec u = sphere_point(m, s.radius, a);
                    best.offer(u, res(u).norm());
                }
            } else {
                // Box or Ball (convex sets).
                for (int k = 0; k < kStarts; ++k) {
                    Vec u0;
                    if (k == 0) {
                        u0 = proj(warm);
                    } else if constexpr (std::is_same_v<T, BoxSet>) {
                        u0 = s.lower;
                        for (int i = 0; i < m; ++i) {
                            u0[i] += (s.upper[i] - s.lower[i]) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                        }
                    } else {
                        Vec d = Vec::NullaryExpr(m, [&] { return normal(rng); });
                        const double rad = s.radius * std::pow(std::uniform_real_distribution<double>(0.0, 1.0)(rng), 1.0 / m);
                        u0 = d.norm() > 0 ? Vec(rad * d / d.norm()) : Vec::Zero(m);
                    }
                    best.offer(u0, res(u0).norm());
                    if (best.residual == 0.0) break;
                    const Vec u = projected_descent(res, jac, proj, u0);
                    best.offer(u, res(u).norm());
                }
            }
        },
        set.variant());
    return best;
}

SolvabilityResult make_result(const Vec& p, const Vec& z, const Best& b, SolveMethod method) {
    SolvabilityResult r;
    r.p = p;
    r.u = b.u;
    r.residual = b.residual;
    r.tol = solve_tolerance(z);
    r.method = method;
    r.status = classify_residual(r.residual, r.tol);
    return r;
}

ResidualStats stats_of(const std::vector<SolvabilityResult>& rs) {
    ResidualStats st;
    st.count = rs.size();
    if (rs.empty()) return st;
    st.min = std::numeric_limits<double>::infinity();
    st.max = -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (const auto& r : rs) {
        if (r.residual < st.min) {
            st.min = r.residual;
            st.argmin = r.p;
        }
        st.max = std::max(st.max, r.residual);
        acc += r.residual;
    }
    st.mean = acc / static_cast<double>(rs.size());
    return st;
}

SolveStatus aggregate(const std::vector<SolvabilityResult>& rs, const SolvabilityResult** first_solvable) {
    bool all_unsolvable = true;
    *first_solvable = nullptr;
    for (const auto& r : rs) {
        if (r.status == SolveStatus::Solvable) {
            *first_solvable = &r;
            return SolveStatus::Solvable;
        }
        if (r.status != SolveStatus::Unsolvable) all_unsolvable = false;
    }
    return all_unsolvable ? SolveStatus::Unsolvable : SolveStatus::Inconclusive;
}

std::vector<SolvabilityResult> solve_all(const System& sys, const std::vector<Vec>& pts, const VectorField& z, std::uint64_t seed) {
    std::vector<SolvabilityResult> out(pts.size());
    parallel_for(pts.size(), [&](std::size_t i) { out[i] = solve_at(sys, pts[i], z(pts[i]), seed + i); });
    return out;
}

// Fixed sample points only approach a lower-dimensional solution set, so the best
// pairs are polished jointly over (p, u) with p kept in the region.
SolvabilityResult refine_joint(const System& sys, const SafeSet& region, const VectorField& z, const SolvabilityResult& start) {
    const int n = sys.n();
    const int m = sys.m();
    auto split_p = [&](const Vec& w) { return Vec(w.head(n)); };
    auto split_u = [&](const Vec& w) { return Vec(w.tail(m)); };
    auto res = [&](const Vec& w) -> Vec {
        const Vec p = split_p(w);
        return eval_dynamics(sys, p, split_u(w)) - z(p);
    };
    auto feasible = [&](const Vec& w) {
        const Vec p = split_p(w);
        return region.bbox().contains(p) && region.h(p) >= 0.0;
    };
    auto proj = [&](Vec w) {
        w.tail(m) = sys.input_set().project(split_u(w));
        return w;
    };
    Vec w(n + m);
    w << start.p, start.u;
    Vec r = res(w);
    double f = r.norm();
    for (int it = 0; it < 200 && f > 0.0; ++it) {
        const Mat j = numeric::fd_jacobian(res, w);
        const Vec dirs[2] = {numeric::lstsq(j, -r), -(j.transpose() * r)};
        bool moved = false;
        for (const Vec& d : dirs) {
            for (double step = 1.0; step > 1e-12 && !moved; step *= 0.5) {
                const Vec cand = proj(w + step * d);
                if (!feasible(cand)) continue;
                const Vec rc = res(cand);
                if (rc.norm() < f) {
                    moved = (cand - w).norm() >= kStepStop;
                    w = cand;
                    r = rc;
                    f = rc.norm();
                }
            }
            if (moved) break;
        }
        if (!moved) break;
    }
    if (f >= start.residual) return start;
    Best b;
    b.u = split_u(w);
    b.residual = f;
    const Vec p = split_p(w);
    return make_result(p, z(p), b, start.method);
}

// Appends joint refinements of the best few results unless one is already solvable.
void refine_best(const System& sys, const SafeSet& region, const VectorField& z, std::vector<SolvabilityResult>& rs) {
    if (rs.empty() || std::any_of(rs.begin(), rs.end(), [](const auto& r) { return r.status == SolveStatus::Solvable; })) return;
    if (std::all_of(rs.begin(), rs.end(), [](const auto& r) { return r.method == SolveMethod::ExactSpan; })) {
        // Residual of an affine span problem is already minimal pointwise; only p can move it.
        bool flat = true;
        for (const auto& r : rs) flat = flat && std::abs(r.residual - rs.front().residual) <= 1e-12 * (1.0 + r.residual);
        if (flat) return;
    }
    std::vector<std::size_t> order(rs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t keep = std::min<std::size_t>(8, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) { return rs[a].residual < rs[b].residual; });
    std::vector<SolvabilityResult> extra(keep);
    parallel_for(keep, [&](std::size_t i) { extra[i] = refine_joint(sys, region, z, rs[order[i]]); });
    rs.insert(rs.end(), extra.begin(), extra.end());
}

std::optional<int> chi_of(const SafeSet& s, std::vector<std::string>& notes) {
    if (s.dim() > 3) {
        notes.push_back("Euler characteristic not computed for n > 3; theorem hypothesis unchecked");
        return std::nullopt;
    }
    return euler_characteristic(build_cubical_complex(s));
}

void require_compact(const SafeSet& s) {
    const auto c = check_compact(s);
    if (!c.compact) {
        throw ObstructionError(ObstructionError::Kind::NotCompact,
                               "C is not compact in the bounding box: h = " + std::to_string(c.max_face_value) +
                                   " >= 0 on a face at " + format_vec(c.witness),
                               c.witness);
    }
}

std::vector<Vec> search_points(const SafeSet& s, const CubicalComplex& k, const SearchOptions& opts) {
    std::vector<Vec> pts = cell_centers(k, s.bbox());
    const auto b = boundary_sample(s, opts.boundary_samples * opts.density);
    pts.insert(pts.end(), b.begin(), b.end());
    const std::size_t nr = static_cast<std::size_t>(10 * s.dim() * s.dim() * opts.density);
    const auto r = random_points(s, nr, opts.seed);
    pts.insert(pts.end(), r.begin(), r.end());
    return pts;
}

}  // namespace

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Solvable: return "solvable";
        case SolveStatus::Unsolvable: return "unsolvable";
        case SolveStatus::Inconclusive: return "inconclusive";
    }
    return "?";
}

std::string to_string(SolveMethod m) { return m == SolveMethod::ExactSpan ? "exact_span" : "constrained_search"; }

std::string to_string(Theorem t) {
    switch (t) {
        case Theorem::T3: return "T3";
        case Theorem::T4: return "T4";
        case Theorem::T5: return "T5";
        case Theorem::Cor1: return "Cor1";
        case Theorem::Brockett: return "Brockett";
    }
    return "?";
}

std::string to_string(Outcome o) {
    switch (o) {
        case Outcome::Violated: return "violated";
        case Outcome::NotViolated: return "not_violated";
        case Outcome::Inconclusive: return "inconclusive";
    }
    return "?";
}

double solve_tolerance(const Vec& z) { return 1e-7 * (1.0 + z.norm()); }

SolveStatus classify_residual(double residual, double tol) {
    if (residual <= tol) return SolveStatus::Solvable;
    if (residual > kGapFactor * tol) return SolveStatus::Unsolvable;
    return SolveStatus::Inconclusive;
}

SolvabilityResult span_solvability(const ControlAffineSystem& sys, const Vec& p, const Vec& z) {
    if (sys.input_set().bounded()) throw std::invalid_argument("span_solvability needs a FullSpace input set");
    const Mat g = sys.input_matrix(p);
    const Vec rhs = z - sys.drift(p);
    Best b;
    b.u = numeric::lstsq(g, rhs, 1e-10);
    b.residual = (g * b.u - rhs).norm();
    return make_result(p, z, b, SolveMethod::ExactSpan);
}

SolvabilityResult constrained_solvability(const System& sys, const Vec& p, const Vec& z, std::uint64_t seed) {
    const InputSet& set = sys.input_set();
    if (!set.bounded()) throw std::invalid_argument("constrained_solvability needs a bounded input set");
    Best b;
    if (const auto* a = sys.affine()) {
        const Mat g = a->input_matrix(p);
        const Vec rhs = z - a->drift(p);
        auto res = [&](const Vec& u) -> Vec { return g * u - rhs; };
        auto jac = [&](const Vec&) -> Mat { return g; };
        b = minimize_over(set, res, jac, numeric::lstsq(g, rhs), seed);
    } else {
        const GeneralSystem& gs = *sys.general();
        auto res = [&](const Vec& u) -> Vec { return gs.eval(p, u) - z; };
        auto jac = [&](const Vec& u) -> Mat { return gs.input_jacobian(p, u); };
        b = minimize_over(set, res, jac, Vec::Zero(gs.m()), seed);
    }
    return make_result(p, z, b, SolveMethod::ConstrainedSearch);
}

SolvabilityResult solve_at(const System& sys, const Vec& p, const Vec& z, std::uint64_t seed) {
    if (sys.input_set().bounded()) return constrained_solvability(sys, p, z, seed);
    if (const auto* a = sys.affine()) return span_solvability(*a, p, z);
    const GeneralSystem& gs = *sys.general();
    auto res = [&](const Vec& u) -> Vec { return gs.eval(p, u) - z; };
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Best b;
    for (int k = 0; k < 5 && b.residual > 0.0; ++k) {
        Vec u0 = k == 0 ? Vec(Vec::Zero(gs.m())) : Vec(Vec::NullaryExpr(gs.m(), [&] { return normal(rng); }));
        const Vec u = numeric::gauss_newton(res, u0, 0.0, 100);
        b.offer(u, res(u).norm());
    }
    return make_result(p, z, b, SolveMethod::ConstrainedSearch);
}

VectorField PerturbationField::at(double scale) const {
    if (scale_param.empty()) return VectorField::from_expressions(components);
    return VectorField::from_expressions(components, {scale_param}, {scale});
}

ObstructionVerdict check_theorem3(const System& sys, const SafeSet& s, const PerturbationField& zf, const SearchOptions& opts) {
    if (sys.n() != s.dim()) throw std::invalid_argument("system and safe set dimensions differ");
    ObstructionVerdict v;
    v.theorem = Theorem::T3;
    v.region = "C";
    v.witness_field = zf.name;
    const auto chi = chi_of(s, v.notes);
    if (chi && *chi == 0) {
        v.notes.push_back("Euler characteristic zero; theorem silent");
        return v;
    }
    require_compact(s);

    const VectorField z = zf.at();
    for (const auto& p : boundary_sample(s, opts.boundary_samples * opts.density)) {
        const Vec zp = z(p);
        const Vec g = s.grad(p);
        const double val = g.dot(zp);
        if (val > 1e-8 * (1.0 + zp.norm() * g.norm())) {
            throw ObstructionError(ObstructionError::Kind::Inadmissible,
                                   "perturbation '" + zf.name + "' has dh.Z = " + std::to_string(val) + " > 0 at " +
                                       format_vec(p),
                                   p);
        }
    }

    const auto k = build_cubical_complex(s, false);
    const auto pts = search_points(s, k, opts);
    auto results = solve_all(sys, pts, z, opts.seed);
    refine_best(sys, s, z, results);
    v.sampled_points = pts.size();
    v.residuals = stats_of(results);
    const SolvabilityResult* first = nullptr;
    const SolveStatus st = aggregate(results, &first);
    if (!chi) {
        v.outcome = Outcome::Inconclusive;
    } else if (st == SolveStatus::Unsolvable) {
        v.outcome = Outcome::Violated;
    } else if (st == SolveStatus::Solvable) {
        v.outcome = Outcome::NotViolated;
        v.solution = *first;
    }
    if (v.outcome == Outcome::NotViolated) v.notes.push_back("a solving pair exists; this does not prove a CBF exists");
    return v;
}

std::vector<double> epsilon_ladder() {
    std::vector<double> l;
    for (int k = 1; k <= 10; ++k) l.push_back(std::ldexp(1.0, -k));
    return l;
}

ObstructionVerdict check_neighborhood_family(const System& sys, const SafeSet& s, const PerturbationField& zfam,
                                             Theorem theorem, const SearchOptions& opts, double t0) {
    if (theorem != Theorem::T4 && theorem != Theorem::T5 && theorem != Theorem::Cor1) {
        throw std::invalid_argument("neighborhood family check is for T4, T5 or Cor1");
    }
    if (sys.n() != s.dim()) throw std::invalid_argument("system and safe set dimensions differ");
    if (zfam.scale_param.empty()) {
        throw ObstructionError(ObstructionError::Kind::BadFamily, "perturbation '" + zfam.name + "' has no scale parameter");
    }
    ObstructionVerdict v;
    v.theorem = theorem;
    v.witness_field = zfam.name;
    const auto chi = chi_of(s, v.notes);
    if (chi && *chi == 0) {
        v.notes.push_back("Euler characteristic zero; theorem silent");
        return v;
    }
    require_compact(s);

    std::optional<SafeSet> inflated;
    if (theorem == Theorem::T4) {
        inflated = flow_out(s, t0, 2 * t0).effective;
        require_compact(*inflated);
        v.region = "flow-out neighborhood (h >= -" + std::to_string(t0) + ")";
    } else {
        v.region = "C";
    }
    const SafeSet& region = inflated ? *inflated : s;

    const auto k = build_cubical_complex(region, false);
    const auto pts = search_points(region, k, opts);
    v.sampled_points = pts.size();

    const VectorField z0 = zfam.at(0.0);
    for (const auto& p : pts) {
        if (z0(p).norm() > 1e-12) {
            throw ObstructionError(ObstructionError::Kind::BadFamily,
                                   "family '" + zfam.name + "' does not vanish at eps = 0 (at " + format_vec(p) + ")", p);
        }
    }

    int consecutive = 0;
    bool confirmed = false;
    bool all_unsolvable = true;
    for (double eps : epsilon_ladder()) {
        const VectorField z = zfam.at(eps);
        auto results = solve_all(sys, pts, z, opts.seed);
        refine_best(sys, region, z, results);
        RungResult rung;
        rung.scale = eps;
        rung.residuals = stats_of(results);
        const SolvabilityResult* first = nullptr;
        rung.status = aggregate(results, &first);
        if (first) rung.solution = *first;

        const bool exact = std::all_of(results.begin(), results.end(),
                                       [](const auto& r) { return r.method == SolveMethod::ExactSpan; });
        if (exact && rung.residuals.max - rung.residuals.min <= 1e-12 * (1.0 + rung.residuals.max)) {
            const auto extra = random_points(region, 5 * pts.size(), opts.seed + 1);
            const auto more = solve_all(sys, extra, z, opts.seed + 1);
            rung.refined_min = stats_of(more).min;
        }
        all_unsolvable = all_unsolvable && rung.status == SolveStatus::Unsolvable;
        consecutive = rung.status == SolveStatus::Solvable ? consecutive + 1 : 0;
        if (consecutive >= 3 && !confirmed) {
            confirmed = true;
            v.solution = rung.solution;
        }
        v.ladder.push_back(std::move(rung));
        if (confirmed) break;
    }
    v.residuals = v.ladder.back().residuals;
    if (!chi) {
        v.outcome = Outcome::Inconclusive;
    } else if (all_unsolvable) {
        v.outcome = Outcome::Violated;
    } else if (confirmed) {
        v.outcome = Outcome::NotViolated;
        v.notes.push_back("solvable on three consecutive rungs; this does not prove a CBF exists");
    }
    return v;
}

ObstructionVerdict brockett_check(const System& sys, const Vec& xstar, const BrockettOptions& opts) {
    const int n = sys.n();
    if (xstar.size() != n) throw std::invalid_argument("xstar has the wrong dimension");
    if (!(opts.ball_radius > 0.0) || !(opts.search_radius > 0.0)) throw std::invalid_argument("Brockett radii must be positive");
    ObstructionVerdict v;
    v.theorem = Theorem::Brockett;
    v.region = "box of half-width " + std::to_string(opts.search_radius) + " around " + format_vec(xstar);

    const auto eq = solve_at(sys, xstar, Vec::Zero(n), opts.seed);
    if (eq.status != SolveStatus::Solvable) {
        v.notes.push_back("warning: xstar does not appear to be an equilibrium for any admissible input");
    }

    std::vector<Vec> dirs;
    for (int i = 0; i < n; ++i) {
        for (double sgn : {1.0, -1.0}) dirs.push_back(sgn * Vec::Unit(n, i));
    }
    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal;
    while (static_cast<int>(dirs.size()) < 2 * n * n) {
        Vec d = Vec::NullaryExpr(n, [&] { return normal(rng); });
        if (d.norm() > 1e-6) dirs.push_back(d / d.norm());
    }

    const double rad = opts.search_radius;
    const SafeSet box(Expression::constant(1.0), {(xstar.array() - rad).matrix(), (xstar.array() + rad).matrix()}, 4);
    auto clamp_box = [&](Vec x) {
        for (int a = 0; a < n; ++a) x[a] = std::clamp(x[a], xstar[a] - rad, xstar[a] + rad);
        return x;
    };
    // min over x in the box of min over u of |f(x,u) - z|: 5^n grid, then compass search.
    auto search = [&](const Vec& z, std::uint64_t seed) {
        SolvabilityResult best;
        best.residual = std::numeric_limits<double>::infinity();
        std::vector<int> idx(static_cast<std::size_t>(n), 0);
        for (;;) {
            Vec x(n);
            for (int a = 0; a < n; ++a) x[a] = xstar[a] - rad + 0.5 * rad * idx[static_cast<std::size_t>(a)];
            auto r = solve_at(sys, x, z, seed);
            if (r.residual < best.residual) best = r;
            if (best.status == SolveStatus::Solvable) return best;
            int a = 0;
            while (a < n && ++idx[static_cast<std::size_t>(a)] == 5) idx[static_cast<std::size_t>(a++)] = 0;
            if (a == n) break;
        }
        for (double step = 0.25 * rad; step > 1e-6 * rad;) {
            bool improved = false;
            for (int a = 0; a < n && !improved; ++a) {
                for (double sgn : {1.0, -1.0}) {
                    Vec x = best.p;
                    x[a] += sgn * step;
                    x = clamp_box(x);
                    auto r = solve_at(sys, x, z, seed);
                    if (r.residual < best.residual) {
                        best = r;
                        improved = true;
                        break;
                    }
                }
            }
            if (best.status == SolveStatus::Solvable) break;
            if (!improved) step *= 0.5;
        }
        // Compass search stalls near 1e-7; a joint (x, u) Gauss-Newton step finishes smooth cases.
        if (best.status != SolveStatus::Solvable) {
            const VectorField target(n, [z](const Vec&) { return z; });
            best = refine_joint(sys, box, target, best);
        }
        return best;
    };

    const int nd = static_cast<int>(dirs.size());
    std::vector<std::vector<SolvabilityResult>> table(static_cast<std::size_t>(opts.rungs));
    for (int k = 0; k < opts.rungs; ++k) {
        const double rho = opts.ball_radius * std::ldexp(1.0, -k);
        auto& row = table[static_cast<std::size_t>(k)];
        row.resize(dirs.size());
        parallel_for(dirs.size(), [&](std::size_t d) { row[d] = search(rho * dirs[d], opts.seed + d); });
    }

    int witness = -1;
    bool all_solvable = true;
    for (int d = 0; d < nd; ++d) {
        bool stuck = true;
        for (const auto& row : table) {
            stuck = stuck && row[static_cast<std::size_t>(d)].status == SolveStatus::Unsolvable;
            all_solvable = all_solvable && row[static_cast<std::size_t>(d)].status == SolveStatus::Solvable;
        }
        if (stuck && witness < 0) witness = d;
    }
    const int shown = witness >= 0 ? witness : 0;
    for (int k = 0; k < opts.rungs; ++k) {
        const auto& r = table[static_cast<std::size_t>(k)][static_cast<std::size_t>(shown)];
        RungResult rung;
        rung.scale = opts.ball_radius * std::ldexp(1.0, -k);
        rung.status = r.status;
        rung.residuals = stats_of({r});
        if (r.status == SolveStatus::Solvable) rung.solution = r;
        v.ladder.push_back(std::move(rung));
    }
    std::vector<SolvabilityResult> flat;
    for (const auto& row : table) flat.insert(flat.end(), row.begin(), row.end());
    v.residuals = stats_of(flat);
    v.sampled_points = flat.size();
    if (witness >= 0) {
        v.outcome = Outcome::Violated;
        v.witness_direction = dirs[static_cast<std::size_t>(witness)];
    } else if (all_solvable) {
        v.outcome = Outcome::NotViolated;
        v.solution = table.back().front();
    }
    return v;
}

std::vector<PerturbationField> candidate_perturbations(const SafeSet& s) {
    std::vector<PerturbationField> out;
    const auto& grad = s.gradient_expressions();
    for (double c : {0.1, 1.0}) {
        PerturbationField f;
        f.name = c == 1.0 ? "neg_grad" : "neg_grad_0.1";
        for (const auto& g : grad) f.components.push_back(Expression::constant(-c) * g);
        out.push_back(std::move(f));
    }
    PerturbationField zero;
    zero.name = "zero";
    zero.components.assign(grad.size(), Expression::constant(0.0));
    out.push_back(std::move(zero));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        PerturbationField f;
        f.name = "eps_e" + std::to_string(i + 1);
        f.scale_param = "eps";
        for (std::size_t j = 0; j < grad.size(); ++j) {
            f.components.push_back(j == i ? Expression::variable("eps") : Expression::constant(0.0));
        }
        out.push_back(std::move(f));
    }
    return out;
}

}  // namespace cbflab
