#include "cbflab/flow.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cbflab/parallel.hpp"

namespace cbflab {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200, e6 = 22.0 / 525,
                 e7 = -1.0 / 40;
// Continuous extension (Hairer, Norsett, Wanner).
constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                 d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                 d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;

constexpr double kBlowUp = 1e12;
constexpr double kInvarianceTol = 1e-6;
constexpr double kIdentityTol = 1e-6;

Vec eval_field(const VectorField& x, const Vec& p, double t) {
    Vec v = x(p);
    if (!v.allFinite()) throw FlowError(FlowError::Kind::BlowUp, "non-finite field value at " + format_vec(p), p, t);
    return v;
}

double error_norm(const Vec& err, const Vec& y0, const Vec& y1, double rtol, double atol) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double sk = atol + rtol * std::max(std::fabs(y0[i]), std::fabs(y1[i]));
        acc += (err[i] / sk) * (err[i] / sk);
    }
    return std::sqrt(acc / static_cast<double>(std::max<Eigen::Index>(err.size(), 1)));
}

double safe_h(const SafeSet& s, const Vec& p) {
    try {
        return s.h(p);
    } catch (const EvalError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

}  // namespace

Vec Trajectory::at(double t) const {
    const bool forward = t_.back() >= t_.front();
    const double lo = forward ? t_.front() : t_.back();
    const double hi = forward ? t_.back() : t_.front();
    const double span = std::fabs(t_.back() - t_.front());
    if (t < lo - 1e-12 * (1.0 + span) || t > hi + 1e-12 * (1.0 + span)) {
        throw std::out_of_range("dense output queried outside the integrated interval");
    }
    if (dense_.empty()) return x_.front();
    std::size_t i;
    if (forward) {
        i = static_cast<std::size_t>(std::upper_bound(t_.begin(), t_.end(), t) - t_.begin());
    } else {
        i = static_cast<std::size_t>(std::upper_bound(t_.begin(), t_.end(), t, std::greater<>()) - t_.begin());
    }
    i = std::clamp<std::size_t>(i, 1, t_.size() - 1) - 1;
    const double theta = (t - t_[i]) / (t_[i + 1] - t_[i]);
    const double th1 = 1.0 - theta;
    const auto& r = dense_[i];
    return r[0] + theta * (r[1] + th1 * (r[2] + theta * (r[3] + th1 * r[4])));
}

Trajectory integrate(const VectorField& x, const Vec& p0, double t_end, const IntegratorOptions& opts) {
    Trajectory tr;
    tr.t_.push_back(0.0);
    tr.x_.push_back(p0);
    if (t_end == 0.0) return tr;
    if (!(opts.rtol > 0.0) || !(opts.atol > 0.0)) throw std::invalid_argument("integrator tolerances must be positive");

    const double dir = t_end > 0 ? 1.0 : -1.0;
    double t = 0.0;
    Vec y = p0;
    Vec k1 = eval_field(x, y, t);

    double h;
    if (opts.fixed_step > 0.0) {
        h = std::min(opts.fixed_step, std::fabs(t_end));
    } else {
        // Initial step guess from the scaled sizes of y and y'.
        double d0 = 0.0, d1n = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double sk = opts.atol + opts.rtol * std::fabs(y[i]);
            d0 += (y[i] / sk) * (y[i] / sk);
            d1n += (k1[i] / sk) * (k1[i] / sk);
        }
        d0 = std::sqrt(d0 / y.size());
        d1n = std::sqrt(d1n / y.size());
        h = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
        h = std::min({h, std::fabs(t_end), opts.max_step});
    }

    while (dir * (t_end - t) > 0.0) {
        if (tr.t_.size() > opts.max_steps) {
            throw FlowError(FlowError::Kind::StepUnderflow, "step budget exhausted at t = " + std::to_string(t), y, t);
        }
        if (h < 1e-14 * std::max(1.0, std::fabs(t))) {
            throw FlowError(FlowError::Kind::StepUnderflow,
                            "step size underflow at t = " + std::to_string(t) + " (stiffness or blow-up)", y, t);
        }
        const bool last = h >= std::fabs(t_end - t);
        const double hs = dir * (last ? std::fabs(t_end - t) : h);

        const Vec k2 = eval_field(x, y + hs * (a21 * k1), t);
        const Vec k3 = eval_field(x, y + hs * (a31 * k1 + a32 * k2), t);
        const Vec k4 = eval_field(x, y + hs * (a41 * k1 + a42 * k2 + a43 * k3), t);
        const Vec k5 = eval_field(x, y + hs * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t);
        const Vec k6 = eval_field(x, y + hs * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t);
        const Vec y1 = y + hs * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
        const Vec k7 = eval_field(x, y1, t + hs);

        double err = 0.0;
        if (opts.fixed_step <= 0.0) {
            const Vec e = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
            err = error_norm(e, y, y1, opts.rtol, opts.atol);
        }
        if (err > 1.0) {
            ++tr.rejected_;
            h = std::fabs(hs) * std::max(0.2, 0.9 * std::pow(err, -0.2));
            continue;
        }

        std::array<Vec, 5> rc;
        rc[0] = y;
        rc[1] = y1 - y;
        rc[2] = hs * k1 - rc[1];
        rc[3] = rc[1] - hs * k7 - rc[2];
        rc[4] = hs * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);

        t = last ? t_end : t + hs;
        y = y1;
        k1 = k7;
        tr.t_.push_back(t);
        tr.x_.push_back(y);
        tr.dense_.push_back(std::move(rc));

        if (y.norm() > kBlowUp) {
            throw FlowError(FlowError::Kind::BlowUp, "solution blew up near t = " + std::to_string(t), y, t);
        }
        if (opts.domain && !opts.domain->contains(y)) {
            if (opts.exit_is_error) {
                throw FlowError(FlowError::Kind::DomainExit, "trajectory left the bounding box at t = " + std::to_string(t), y, t);
            }
            tr.exited_ = true;
            break;
        }
        if (opts.fixed_step <= 0.0) {
            const double fac = err == 0.0 ? 10.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 10.0);
            h = std::min(std::fabs(hs) * fac, opts.max_step);
        }
    }
    return tr;
}

std::string trajectory_csv(const Trajectory& traj, const SafeSet* s) {
    std::ostringstream os;
    os.precision(17);
    const auto n = traj.states().front().size();
    os << 't';
    for (Eigen::Index a = 0; a < n; ++a) os << ",x" << (a + 1);
    if (s) os << ",h";
    os << '\n';
    for (std::size_t i = 0; i < traj.times().size(); ++i) {
        os << traj.times()[i];
        for (Eigen::Index a = 0; a < n; ++a) os << ',' << traj.states()[i][a];
        if (s) os << ',' << safe_h(*s, traj.states()[i]);
        os << '\n';
    }
    return os.str();
}

InvarianceReport verify_forward_invariance(const VectorField& x, const SafeSet& s, int initial_count, double horizon) {
    if (initial_count < 1) throw std::invalid_argument("need at least one initial point");
    const int nb = std::max(1, initial_count / 2);
    std::vector<Vec> starts = boundary_sample(s, nb);
    const auto interior = grid_points(s, s.resolution(), 0.0);
    const std::size_t want = static_cast<std::size_t>(initial_count) - std::min<std::size_t>(starts.size(), initial_count);
    for (std::size_t i = 0; i < want && !interior.empty(); ++i) {
        starts.push_back(interior[i * interior.size() / want]);
    }

    struct Result {
        double min_h = std::numeric_limits<double>::infinity();
        double time = 0.0;
        std::optional<Trajectory> traj;
        std::string error;
    };
    std::vector<Result> results(starts.size());
    IntegratorOptions opts;
    opts.domain = &s.bbox();
    parallel_for(starts.size(), [&](std::size_t i) {
        Result& r = results[i];
        try {
            Trajectory tr = integrate(x, starts[i], horizon, opts);
            const auto& ts = tr.times();
            for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
                for (int j = 0; j < 10; ++j) {
                    const double tq = ts[k] + (ts[k + 1] - ts[k]) * j / 10.0;
                    const double hv = safe_h(s, j == 0 ? tr.states()[k] : tr.at(tq));
                    if (hv < r.min_h) {
                        r.min_h = hv;
                        r.time = tq;
                    }
                }
            }
            const double hv = safe_h(s, tr.end_state());
            if (hv < r.min_h) {
                r.min_h = hv;
                r.time = tr.end_time();
            }
            r.traj = std::move(tr);
        } catch (const FlowError& e) {
            r.error = "start " + format_vec(starts[i]) + ": " + e.what();
        }
    });

    InvarianceReport rep;
    rep.trajectories = starts.size();
    rep.min_h = std::numeric_limits<double>::infinity();
    std::size_t worst = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!results[i].error.empty()) {
            ++rep.failures;
            rep.errors.push_back(results[i].error);
            continue;
        }
        if (results[i].min_h < rep.min_h) {
            rep.min_h = results[i].min_h;
            worst = i;
        }
    }
    if (rep.failures < results.size()) {
        rep.witness_start = starts[worst];
        rep.witness_time = results[worst].time;
        rep.witness = std::move(results[worst].traj);
    }
    rep.passed = rep.failures == 0 && rep.min_h >= -kInvarianceTol;
    return rep;
}

StrictEntryReport strict_entry_check(const VectorField& x, const SafeSet& s, double horizon, int boundary_count) {
    constexpr double t_min = 1e-4;
    if (!(horizon > t_min)) throw std::invalid_argument("strict entry horizon must exceed 1e-4");
    const auto pts = boundary_sample(s, boundary_count);
    const auto cls = classify_boundary(s, x, pts);
    if (cls.summary != BoundarySummary::AllInward) {
        throw FlowError(FlowError::Kind::Precondition,
                        "strict entry needs an inward-pointing field, boundary summary is " + to_string(cls.summary));
    }
    std::vector<double> grid(20);
    for (int k = 0; k < 20; ++k) grid[static_cast<std::size_t>(k)] = t_min * std::pow(horizon / t_min, k / 19.0);

    std::vector<std::pair<double, double>> worst(pts.size(), {std::numeric_limits<double>::infinity(), 0.0});
    parallel_for(pts.size(), [&](std::size_t i) {
        const Trajectory tr = integrate(x, pts[i], horizon);
        for (double tq : grid) {
            const double hv = safe_h(s, tr.at(tq));
            if (!(hv >= worst[i].first)) worst[i] = {hv, tq};
        }
    });
    StrictEntryReport r;
    r.samples = pts.size();
    r.min_h = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!(worst[i].first >= r.min_h)) {
            r.min_h = worst[i].first;
            r.witness = pts[i];
            r.witness_time = worst[i].second;
        }
    }
    r.passed = r.min_h > 0.0;
    return r;
}

VectorField flow_out_field(const SafeSet& s) {
    return VectorField(s.dim(), [s](const Vec& p) {
        const Vec g = s.grad(p);
        return Vec(-g / g.squaredNorm());
    });
}

FlowOutSet flow_out(const SafeSet& s, double t0, double t1, int boundary_count) {
    if (!(t0 > 0.0) || !(t1 > t0)) throw std::invalid_argument("flow-out needs 0 < t0 < t1");
    for (const auto& p : grid_points(s, s.resolution(), -t1)) {
        if (s.h(p) > 0.0) continue;
        if (s.grad(p).norm() < kRegularEps) {
            throw FlowError(FlowError::Kind::CriticalBand,
                            "h has a near-critical point in the band -t1 <= h <= 0 at " + format_vec(p), p);
        }
    }
    const auto pts = boundary_sample(s, boundary_count);
    const VectorField y = flow_out_field(s);
    const std::array<double, 3> checks{t0 / 4, t0 / 2, t0};

    std::vector<Vec> image(pts.size());
    std::vector<double> err(pts.size(), 0.0);
    IntegratorOptions opts;
    opts.rtol = 1e-11;
    opts.atol = 1e-13;
    parallel_for(pts.size(), [&](std::size_t i) {
        const Trajectory tr = integrate(y, pts[i], t0, opts);
        for (double tq : checks) err[i] = std::max(err[i], std::fabs(s.h(tr.at(tq)) + tq));
        image[i] = tr.end_state();
    });

    std::size_t worst = static_cast<std::size_t>(std::max_element(err.begin(), err.end()) - err.begin());
    if (err[worst] > kIdentityTol) {
        throw FlowError(FlowError::Kind::IdentityViolation,
                        "decay identity h(phi_t(p)) = -t violated by " + std::to_string(err[worst]) + " at " +
                            format_vec(pts[worst]),
                        pts[worst]);
    }
    return FlowOutSet{t0, t1, pts, std::move(image), err[worst], pts[worst], s.shifted(t0)};
}

Lemma1Report verify_lemma1(const SafeSet& s, const VectorField& x, const AlphaFunction& alpha, double t0) {
    Lemma1Report r;
    constexpr double tol = 1e-8;
    auto slack = [&](const Vec& p) { return s.grad(p).dot(x(p)) + alpha(s.h(p)); };

    // Boundary first so a violation on the boundary is the reported witness.
    const auto bpts = boundary_sample(s, 200);
    std::vector<Vec> band = bpts;
    for (const auto& p : grid_points(s, s.resolution(), -t0)) {
        if (s.h(p) <= t0) band.push_back(p);
    }
    r.band_samples = band.size();
    r.band_min_slack = std::numeric_limits<double>::infinity();
    for (const auto& p : band) {
        const double v = slack(p);
        if (v < -tol) {
            throw FlowError(FlowError::Kind::Hypothesis,
                            "dh.X >= -alpha(h) fails by " + std::to_string(-v) + " at " + format_vec(p), p);
        }
        r.band_min_slack = std::min(r.band_min_slack, v);
    }

    const FlowOutSet fo = flow_out(s, t0, 2 * t0);
    r.max_identity_error = fo.max_identity_error;
    r.chi_c = euler_characteristic(build_cubical_complex(s));
    r.chi_tilde = euler_characteristic(build_cubical_complex(fo.effective));
    if (r.chi_c != r.chi_tilde) {
        throw FlowError(FlowError::Kind::ChiMismatch,
                        "chi(C) = " + std::to_string(r.chi_c) + " but chi(C~) = " + std::to_string(r.chi_tilde) +
                            " (under-resolved grid?)");
    }
    const auto cls = classify_boundary(fo.effective, x, fo.boundary_image);
    r.image_samples = cls.points.size();
    r.min_inward = std::numeric_limits<double>::infinity();
    for (const auto& c : cls.points) r.min_inward = std::min(r.min_inward, c.value);
    r.passed = cls.summary == BoundarySummary::AllInward;
    return r;
}

}  // namespace cbflab
