// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "cbflab/config.hpp"
#include "cbflab/flow.hpp"
#include "cbflab/report.hpp"
#include "cbflab/synthesis.hpp"
#include "random_expr.hpp"
#include "support.hpp"

using namespace cbflab;
using testing::fixture;

namespace {

struct Check {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

struct Loaded {
    AnalysisConfig cfg;
    const SafeSet& s() const { return *cfg.safeset; }
    const System& sys() const { return *cfg.system; }
};

Loaded load(const std::string& name) { return {load_config(fixture(name))}; }

int chi(const SafeSet& s) { return euler_characteristic(build_cubical_complex(s)); }

void euler(Check& o) {
    double slowest = 0.0;
    // Each complex has its own 5 s budget.
    auto timed = [&](const std::function<int()>& f) {
        const auto t0 = std::chrono::steady_clock::now();
        const int v = f();
        slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        return v;
    };
    const auto disk = load("disk.cfg").cfg.safeset->with_resolution(64);
    const auto annulus = load("annulus.cfg").cfg.safeset->with_resolution(64);
    const auto ball = load("ball.cfg").cfg.safeset->with_resolution(64);
    const int d64 = timed([&] { return chi(disk); });
    const int a64 = timed([&] { return chi(annulus); });
    const int b64 = timed([&] { return chi(ball); });
    const int d128 = timed([&] { return chi(disk.with_resolution(128)); });
    const int a128 = timed([&] { return chi(annulus.with_resolution(128)); });
    const int b128 = timed([&] { return chi(ball.with_resolution(128)); });
    const int sphere = timed([&] { return euler_characteristic(boundary_complex(build_cubical_complex(ball))); });
    o.detail << "disk " << d64 << "/" << d128 << ", annulus " << a64 << "/" << a128 << ", ball " << b64 << "/" << b128
             << " at resolution 64/128, ball boundary " << sphere << ", slowest " << slowest << " s";
    o.require(d64 == 1 && d128 == 1, "disk");
    o.require(a64 == 0 && a128 == 0, "annulus");
    o.require(b64 == 1 && b128 == 1, "ball");
    o.require(sphere == 2, "ball boundary");
    o.require(slowest < 5.0, "per-complex runtime");
}

void brockett(Check& o) {
    const auto rr = run(load("nonholonomic.cfg").cfg, "brockett");
    const auto& r = rr.report["results"];
    o.require(rr.exit_code == 2, "exit code");
    o.require(r["outcome"] == "violated", "outcome");
    const auto dir = r["witness"]["direction"];
    o.require(dir.size() == 3 && std::abs(std::abs(dir[2].get<double>()) - 1.0) <= 1e-12, "direction");
    double worst = INFINITY;
    for (const auto& rung : r["epsilon_ladder"]) {
        worst = std::min(worst, rung["min_residual"].get<double>() / rung["scale"].get<double>());
    }
    o.require(r["epsilon_ladder"].size() > 0 && worst >= 0.9, "residual ratio");
    o.detail << "exit " << rr.exit_code << ", direction " << dir.dump() << ", min residual/eps " << worst;
}

void theorem3(Check& o) {
    const auto sphere = load("unit_disk_sphere_input.cfg");
    const auto v = check_theorem3(sphere.sys(), sphere.s(), sphere.cfg.perturbations.front());
    o.require(v.outcome == Outcome::Violated, "sphere outcome");
    o.require(v.residuals.min >= 0.999, "sphere residual");
    const auto ball = load("unit_disk_ball_input.cfg");
    const auto w = check_theorem3(ball.sys(), ball.s(), ball.cfg.perturbations.front());
    o.require(w.outcome == Outcome::NotViolated, "ball outcome");
    o.require(w.solution && w.solution->u.norm() <= 1e-9, "ball witness u = 0");
    o.detail << "sphere " << to_string(v.outcome) << " min residual " << v.residuals.min << " over " << v.sampled_points
             << " points; ball " << to_string(w.outcome) << " |u| " << (w.solution ? w.solution->u.norm() : NAN);
}

void satellite(Check& o) {
    const auto sat = load("satellite_reduced.cfg");
    double worst = 0.0;
    for (Theorem th : {Theorem::T4, Theorem::Cor1}) {
        const auto v = check_neighborhood_family(sat.sys(), sat.s(), sat.cfg.perturbations.front(), th, {}, sat.cfg.run.t0);
        o.require(v.outcome == Outcome::Violated, to_string(th) + " outcome");
        o.require(v.ladder.size() == epsilon_ladder().size(), to_string(th) + " rung count");
        for (const auto& r : v.ladder) {
            o.require(r.status == SolveStatus::Unsolvable, to_string(th) + " rung status");
            worst = std::max({worst, std::abs(r.residuals.min - r.scale), std::abs(r.residuals.max - r.scale)});
        }
    }
    o.require(worst <= 1e-12, "residual equals eps");
    o.detail << "T4 and Cor1 violated on every rung, max |residual - eps| " << worst;
}

void poincare_hopf(Check& o) {
    const auto disk = load("disk.cfg");
    std::mt19937_64 rng(50);
    double worst = 0.0;
    int certified = 0;
    for (int i = 0; i < 50; ++i) {
        const auto r = verify_poincare_hopf(testing::field(testing::random_inward_field(rng)), disk.s());
        if (r.hypotheses_hold && !r.certificates.empty() && r.certificates.front().residual <= 1e-8) ++certified;
        if (!r.certificates.empty()) worst = std::max(worst, r.certificates.front().residual);
    }
    o.require(certified == 50, "random inward fields");
    const auto rot = verify_poincare_hopf(config_field(disk.cfg, "rotation"), disk.s());
    const double limit = rot.sequence ? rot.sequence->limit_residual : INFINITY;
    o.require(rot.path == "perturbation" && limit <= 1e-6, "rotation field");
    o.detail << certified << "/50 certified, worst residual " << worst << "; rotation path " << rot.path
             << " limit residual " << limit;
}

void flow_out_identity(Check& o) {
    const double t0 = 0.2;
    double worst = 0.0;
    for (const char* name : {"disk.cfg", "annulus_poly.cfg", "slab.cfg"}) {
        const auto f = load(name);
        const auto y = flow_out_field(f.s());
        for (const Vec& p : boundary_sample(f.s(), 200)) {
            for (double t : {t0 / 4, t0 / 2, t0}) worst = std::max(worst, std::abs(f.s().h(integrate(y, p, t).end_state()) + t));
        }
        const int c = chi(f.s());
        const int ct = chi(flow_out(f.s(), t0, 2 * t0).effective);
        o.require(c == ct, std::string("chi preserved on ") + name);
        o.detail << name << " chi " << c << "->" << ct << "; ";
    }
    o.require(worst <= 1e-6, "decay identity");
    o.detail << "max |h(phi_t) + t| " << worst;
}

void invariance(Check& o) {
    const auto d = load("unit_disk.cfg");
    const auto qp = verify_forward_invariance(config_field(d.cfg), d.s(), d.cfg.run.trajectories, d.cfg.run.horizon);
    const auto out = verify_forward_invariance(config_field(d.cfg, "outward"), d.s(), 100, 10.0);
    o.require(d.cfg.run.trajectories == 100 && d.cfg.run.horizon == 10.0, "fixture horizon");
    o.require(qp.passed && qp.min_h >= -1e-6, "QP closed loop");
    o.require(!out.passed && out.witness_start.size() == 2, "outward witness");
    o.detail << "QP min h " << qp.min_h << "; outward fails from (" << (out.witness_start.size() ? out.witness_start[0] : NAN)
             << ", " << (out.witness_start.size() ? out.witness_start[1] : NAN) << ")";
}

void synthesis(Check& o) {
    const auto si = load("single_integrator.cfg");
    const auto& sys = *si.sys().affine();
    CoverOptions opts;
    opts.margin = si.cfg.run.margin;
    opts.t0 = si.cfg.run.strict_t0;
    const auto k = blend(build_local_cover(sys, si.s(), *si.cfg.alpha, opts));
    const auto r = verify_strict(sys, si.s(), *si.cfg.alpha, Controller(k), opts.t0, 10000);
    o.require(r.samples >= 10000 && r.uncovered == 0, "coverage");
    o.require(r.passed && r.min_slack > 0.0, "strict slack");
    o.require(r.max_weight_error <= 1e-12, "partition of unity");
    o.detail << k->patches().size() << " patches, " << r.samples << " samples, min slack " << r.min_slack
             << ", weight error " << r.max_weight_error;

    const auto ns = load("unit_disk_sphere_input.cfg");
    try {
        build_local_cover(*ns.sys().affine(), ns.s(), *ns.cfg.alpha);
        o.require(false, "non-strict cover should fail");
    } catch (const SynthesisError& e) {
        const double h = ns.s().h(e.witness());
        o.require(e.kind() == SynthesisError::Kind::StrictnessFailure && std::abs(h) <= 1e-9, "boundary witness");
        o.detail << "; non-strict variant fails with witness h = " << h;
    }
}

void hygiene(Check& o) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> coord(-2.0, 2.0);
    int agree = 0, disagree = 0, unresolved = 0;
    for (int i = 0; i < 1000; ++i) {
        const Expression e = parse_expr(testing::random_expression(rng, 3, 3));
        Binding b{{"x1", coord(rng)}, {"x2", coord(rng)}, {"x3", coord(rng)}};
        for (const char* v : {"x1", "x2", "x3"}) {
            const auto c = testing::compare_derivative(e, differentiate(e, v), b, v);
            if (!c.resolved) ++unresolved;
            else if (c.agrees) ++agree;
            else ++disagree;
        }
    }
    o.require(disagree == 0 && unresolved <= 30, "derivatives");

    const auto lin = testing::field({"-x2", "x1"});
    const Vec p0 = testing::vec({1, 0});
    const Vec exact = testing::vec({std::cos(2.0), std::sin(2.0)});
    double prev = 0.0, worst_ratio = INFINITY;
    for (double h : {0.2, 0.1, 0.05}) {
        IntegratorOptions io;
        io.fixed_step = h;
        const double err = (integrate(lin, p0, 2.0, io).end_state() - exact).norm();
        if (prev > 0.0) worst_ratio = std::min(worst_ratio, prev / err);
        prev = err;
    }
    o.require(worst_ratio >= 16.0, "integrator order");

    std::mt19937_64 g(1000);
    std::normal_distribution<double> nd;
    std::uniform_int_distribution<int> dim(1, 4);
    int wrong = 0, band = 0;
    for (int i = 0; i < 1000; ++i) {
        const int n = dim(g) + 1, m = dim(g);
        const int r = std::uniform_int_distribution<int>(0, std::min(n, m))(g);
        const Mat gm = Mat::NullaryExpr(n, r, [&] { return nd(g); }) * Mat::NullaryExpr(r, m, [&] { return nd(g); });
        const Vec c = Vec::NullaryExpr(n, [&] { return nd(g); });
        std::vector<std::string> drift;
        for (int a = 0; a < n; ++a) drift.push_back(Expression::constant(c[a]).to_string());
        std::vector<std::vector<std::string>> cols;
        for (int j = 0; j < m; ++j) {
            cols.emplace_back();
            for (int a = 0; a < n; ++a) cols.back().push_back(Expression::constant(gm(a, j)).to_string());
        }
        const auto sys = testing::affine(drift, cols, InputSet::full(m));
        Eigen::JacobiSVD<Mat> svd(gm, Eigen::ComputeFullU);
        const auto& sv = svd.singularValues();
        int rank = 0;
        for (int k = 0; k < sv.size(); ++k) rank += sv[k] > 1e-10 * std::max(1.0, sv[0]);
        Vec z = c + gm * Vec::NullaryExpr(m, [&] { return nd(g); });
        if (i % 2 == 1 && rank < n) z += std::uniform_real_distribution<double>(1e-9, 1.0)(g) * svd.matrixU().col(n - 1);
        const Mat u = svd.matrixU().leftCols(rank);
        const double truth = ((z - c) - u * (u.transpose() * (z - c))).norm();
        const auto expected = classify_residual(truth, solve_tolerance(z));
        if (expected == SolveStatus::Inconclusive) {
            ++band;
            continue;
        }
        if (span_solvability(sys, Vec::Zero(n), z).status != expected) ++wrong;
    }
    o.require(wrong == 0, "rank oracle");
    o.detail << agree << " derivative checks agree, " << unresolved << " skipped where the difference quotient is unresolved; "
             << "step-halving error ratio " << worst_ratio << "; rank oracle " << wrong << " misclassified, " << band
             << " in the inconclusive band";
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        double budget_s;
        std::function<void(Check&)> fn;
    };
    const Criterion criteria[] = {
        {"Euler characteristics", INFINITY, euler},
        {"Brockett violation", 10.0, brockett},
        {"sphere-input obstruction", 30.0, theorem3},
        {"satellite neighbourhood families", 5.0, satellite},
        {"Poincare-Hopf zeros", 60.0, poincare_hopf},
        {"flow-out decay identity", 30.0, flow_out_identity},
        {"forward invariance", 30.0, invariance},
        {"strict CBF synthesis", 60.0, synthesis},
        {"numerical hygiene", INFINITY, hygiene},
    };
    int failed = 0;
    int idx = 0;
    for (const auto& c : criteria) {
        ++idx;
        Check o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.fn(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        o.require(secs <= c.budget_s, "runtime");
        failed += !o.pass;
        std::printf("criterion %d %s: %s (%.2f s) %s\n", idx, c.name, o.pass ? "PASS" : "FAIL", secs, o.detail.str().c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
