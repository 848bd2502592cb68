#include "cbflab/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cbflab/parallel.hpp"

namespace cbflab {

namespace {

struct Constraint {
    Vec a;     // G^T grad h
    double b;  // -alpha(h) - dh.drift
};

Constraint constraint_at(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha, const Vec& p) {
    const Vec g = s.grad(p);
    return {sys.input_matrix(p).transpose() * g, -alpha(s.h(p)) - g.dot(sys.drift(p))};
}

Vec box_filter(const BoxSet& box, const Vec& nominal, const Constraint& c, const Vec& p) {
    auto at = [&](double lambda) { return Vec((nominal + lambda * c.a).cwiseMax(box.lower).cwiseMin(box.upper)); };
    Vec u = at(0.0);
    if (c.a.dot(u) >= c.b) return u;
    Vec best(box.lower.size());
    for (Eigen::Index i = 0; i < best.size(); ++i) best[i] = c.a[i] > 0 ? box.upper[i] : box.lower[i];
    if (c.a.dot(best) < c.b) {
        throw SynthesisError(SynthesisError::Kind::Infeasible,
                             "CBF constraint infeasible over the input box at " + format_vec(p) + " (gap " +
                                 std::to_string(c.b - c.a.dot(best)) + ")",
                             p);
    }
    double lo = 0.0, hi = 1.0;
    while (c.a.dot(at(hi)) < c.b && hi < 1e300) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (c.a.dot(at(mid)) >= c.b ? hi : lo) = mid;
    }
    return at(hi);
}

double smooth_cutoff(double t) { return t >= 1.0 ? 0.0 : std::exp(1.0 - 1.0 / (1.0 - t * t)); }

std::vector<long> cell_key(const Vec& p, double cell) {
    std::vector<long> k(static_cast<std::size_t>(p.size()));
    for (Eigen::Index a = 0; a < p.size(); ++a) k[static_cast<std::size_t>(a)] = static_cast<long>(std::floor(p[a] / cell));
    return k;
}

bool next_offset(std::vector<int>& off) {
    for (auto& o : off) {
        if (++o <= 1) return true;
        o = -1;
    }
    return false;
}

}  // namespace

double cbf_slack(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha, const Vec& p, const Vec& u) {
    return s.grad(p).dot(sys.eval(p, u)) + alpha(s.h(p));
}

Controller qp_filter(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha, const Controller& nominal) {
    const auto& set = sys.input_set().variant();
    if (!std::holds_alternative<FullSpace>(set) && !std::holds_alternative<BoxSet>(set)) {
        throw SynthesisError(SynthesisError::Kind::Unsupported, "qp_filter supports FullSpace and Box input sets only");
    }
    if (nominal.output_dim() != sys.m()) throw std::invalid_argument("nominal controller has the wrong output dimension");
    TabulatedController t;
    t.m = sys.m();
    t.solve = [sys, s, alpha, nominal](const Vec& p) -> Vec {
        const Vec nom = nominal(p);
        const Constraint c = constraint_at(sys, s, alpha, p);
        if (const auto* box = std::get_if<BoxSet>(&sys.input_set().variant())) return box_filter(*box, nom, c, p);
        const double gap = c.b - c.a.dot(nom);
        if (gap <= 0.0) return nom;
        const double a2 = c.a.squaredNorm();
        if (a2 <= 1e-24) {
            throw SynthesisError(SynthesisError::Kind::Degenerate,
                                 "active CBF constraint with G^T grad h = 0 at " + format_vec(p), p);
        }
        return nom + (gap / a2) * c.a;
    };
    return Controller(std::move(t));
}

Vec margin_maximizing_input(const ControlAffineSystem& sys, const SafeSet& s, const Vec& p) {
    const Vec a = sys.input_matrix(p).transpose() * s.grad(p);
    return std::visit(
        [&](const auto& set) -> Vec {
            using T = std::decay_t<decltype(set)>;
            if constexpr (std::is_same_v<T, FullSpace>) {
                return a;
            } else if constexpr (std::is_same_v<T, BoxSet>) {
                Vec u = 0.5 * (set.lower + set.upper);
                for (Eigen::Index i = 0; i < u.size(); ++i) {
                    if (a[i] > 0) u[i] = set.upper[i];
                    if (a[i] < 0) u[i] = set.lower[i];
                }
                return u;
            } else if constexpr (std::is_same_v<T, FinitePoints>) {
                const Vec* best = &set.points.front();
                for (const auto& u : set.points) {
                    if (a.dot(u) > a.dot(*best)) best = &u;
                }
                return *best;
            } else {
                const double na = a.norm();
                if (na == 0.0) {
                    return std::is_same_v<T, SphereSet> ? Vec(set.radius * Vec::Unit(set.m, 0)) : Vec(Vec::Zero(set.m));
                }
                return set.radius * a / na;
            }
        },
        sys.input_set().variant());
}

std::vector<Patch> build_local_cover(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha,
                                     const CoverOptions& opts) {
    const int n = s.dim();
    const int res = s.resolution();
    const std::size_t side = static_cast<std::size_t>(res + 1);
    std::size_t total = 1;
    for (int a = 0; a < n; ++a) total *= side;

    auto vertex = [&](std::size_t flat) {
        Vec p(n);
        for (int a = 0; a < n; ++a) {
            const double i = static_cast<double>(flat % side);
            flat /= side;
            p[a] = s.bbox().lower[a] + (s.bbox().upper[a] - s.bbox().lower[a]) * i / res;
        }
        return p;
    };
    std::vector<double> hv(total);
    parallel_for(total, [&](std::size_t i) { hv[i] = s.h(vertex(i)); });

    // Strictness on C first: a failure here is the CBF failing, not the cover.
    std::vector<double> best_slack(total, std::numeric_limits<double>::infinity());
    parallel_for(total, [&](std::size_t i) {
        if (!(hv[i] >= 0.0)) return;
        const Vec p = vertex(i);
        best_slack[i] = cbf_slack(sys, s, alpha, p, margin_maximizing_input(sys, s, p));
    });
    for (std::size_t i = 0; i < total; ++i) {
        if (best_slack[i] < opts.margin) {
            const Vec p = vertex(i);
            throw SynthesisError(SynthesisError::Kind::StrictnessFailure,
                                 "h is not a strict CBF with margin " + std::to_string(opts.margin) + ": best slack " +
                                     std::to_string(best_slack[i]) + " at " + format_vec(p) + " (h = " +
                                     std::to_string(hv[i]) + ")",
                                 p);
        }
    }
    // Grid vertices rarely sit on the boundary, where a non-strict CBF has zero slack.
    for (const Vec& p : boundary_sample(s, 200)) {
        const double slack = cbf_slack(sys, s, alpha, p, margin_maximizing_input(sys, s, p));
        if (slack < opts.margin) {
            throw SynthesisError(SynthesisError::Kind::StrictnessFailure,
                                 "h is not a strict CBF with margin " + std::to_string(opts.margin) + ": best slack " +
                                     std::to_string(slack) + " at boundary point " + format_vec(p),
                                 p);
        }
    }

    // Region: every corner of a grid cell that has a corner with h >= -t0.
    std::vector<std::uint8_t> region(total, 0);
    std::vector<std::size_t> stride(static_cast<std::size_t>(n), 1);
    for (int a = 1; a < n; ++a) stride[static_cast<std::size_t>(a)] = stride[static_cast<std::size_t>(a - 1)] * side;
    for (std::size_t flat = 0; flat < total; ++flat) {
        bool interior_cell = true;
        std::size_t rem = flat;
        for (int a = 0; a < n; ++a) {
            if (rem % side == static_cast<std::size_t>(res)) interior_cell = false;
            rem /= side;
        }
        if (!interior_cell) continue;
        bool touches = false;
        for (int c = 0; c < (1 << n) && !touches; ++c) {
            std::size_t v = flat;
            for (int a = 0; a < n; ++a) v += ((c >> a) & 1) * stride[static_cast<std::size_t>(a)];
            touches = hv[v] >= -opts.t0;
        }
        if (!touches) continue;
        for (int c = 0; c < (1 << n); ++c) {
            std::size_t v = flat;
            for (int a = 0; a < n; ++a) v += ((c >> a) & 1) * stride[static_cast<std::size_t>(a)];
            region[v] = 1;
        }
    }

    double hmin = std::numeric_limits<double>::infinity(), diag2 = 0.0;
    for (int a = 0; a < n; ++a) {
        hmin = std::min(hmin, s.spacing(a));
        diag2 += s.spacing(a) * s.spacing(a);
    }
    const double half_diag = 0.5 * std::sqrt(diag2);
    const double r_max = opts.max_cells * hmin;
    const double r_min = 1.05 * half_diag;

    std::vector<Patch> patches;
    std::vector<std::pair<std::vector<long>, std::size_t>> index;
    auto covered = [&](const Vec& p) {
        const auto key = cell_key(p, r_max);
        std::vector<int> off(static_cast<std::size_t>(n), -1);
        do {
            auto k = key;
            for (int a = 0; a < n; ++a) k[static_cast<std::size_t>(a)] += off[static_cast<std::size_t>(a)];
            for (const auto& [pk, j] : index) {
                if (pk != k) continue;
                if ((p - patches[j].center).norm() <= patches[j].radius - half_diag) return true;
            }
        } while (next_offset(off));
        return false;
    };

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        if (!region[flat]) continue;
        const Vec q = vertex(flat);
        if (covered(q)) continue;
        const Vec u = margin_maximizing_input(sys, s, q);
        const double center_slack = cbf_slack(sys, s, alpha, q, u);
        if (!(center_slack >= opts.margin)) {
            throw SynthesisError(SynthesisError::Kind::StrictnessFailure,
                                 "no input with margin " + std::to_string(opts.margin) + " at " + format_vec(q) +
                                     " (h = " + std::to_string(hv[flat]) + ")",
                                 q);
        }
        // Directions fixed per patch so the radius test is monotone in r.
        std::vector<Vec> offsets;
        for (int k = 0; k < opts.check_points; ++k) {
            Vec d = Vec::NullaryExpr(n, [&] { return normal(rng); });
            d *= std::pow(unif(rng), 1.0 / n) / std::max(d.norm(), 1e-300);
            offsets.push_back(d);
        }
        Vec failing;
        auto ok = [&](double r) {
            for (const auto& d : offsets) {
                const Vec p = q + r * d;
                double sl;
                try {
                    sl = cbf_slack(sys, s, alpha, p, u);
                } catch (const EvalError&) {
                    sl = -1.0;
                }
                if (!(sl >= 0.5 * opts.margin)) {
                    failing = p;
                    return false;
                }
            }
            return true;
        };
        double r = r_max;
        if (!ok(r_max)) {
            if (!ok(r_min)) {
                throw SynthesisError(SynthesisError::Kind::StrictnessFailure,
                                     "margin lost within one grid cell of " + format_vec(q) + " at " + format_vec(failing),
                                     failing);
            }
            double lo = r_min, hi = r_max;
            for (int it = 0; it < 12; ++it) {
                const double mid = 0.5 * (lo + hi);
                (ok(mid) ? lo : hi) = mid;
            }
            r = lo;
        }
        index.emplace_back(cell_key(q, r_max), patches.size());
        patches.push_back(Patch{q, r, u, center_slack});
    }
    return patches;
}

double bump(double s) { return std::fabs(s) < 1.0 ? std::exp(-1.0 / (1.0 - s * s)) : 0.0; }

BlendedController::BlendedController(std::vector<Patch> patches) : patches_(std::move(patches)) {
    if (patches_.empty()) throw std::invalid_argument("blend needs at least one patch");
    m_ = static_cast<int>(patches_.front().input.size());
    cell_ = 0.0;
    for (const auto& p : patches_) {
        if (!(p.radius > 0.0)) throw std::invalid_argument("patch radius must be positive");
        if (p.input.size() != m_ || p.center.size() != patches_.front().center.size()) {
            throw std::invalid_argument("patches have inconsistent dimensions");
        }
        cell_ = std::max(cell_, p.radius);
    }
    for (std::size_t j = 0; j < patches_.size(); ++j) grid_.emplace_back(cell_key(patches_[j].center, cell_), j);
    std::sort(grid_.begin(), grid_.end());
}

std::vector<std::size_t> BlendedController::nearby(const Vec& p) const {
    std::vector<std::size_t> out;
    const auto key = cell_key(p, cell_);
    std::vector<int> off(key.size(), -1);
    do {
        auto k = key;
        for (std::size_t a = 0; a < k.size(); ++a) k[a] += off[a];
        auto lo = std::lower_bound(grid_.begin(), grid_.end(), std::pair{k, std::size_t{0}});
        for (auto it = lo; it != grid_.end() && it->first == k; ++it) out.push_back(it->second);
    } while (next_offset(off));
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<std::size_t, double>> BlendedController::weights(const Vec& p) const {
    std::vector<std::pair<std::size_t, double>> w;
    double total = 0.0;
    for (std::size_t j : nearby(p)) {
        const double v = bump((p - patches_[j].center).norm() / patches_[j].radius);
        if (v > 0.0) {
            w.emplace_back(j, v);
            total += v;
        }
    }
    for (auto& [j, v] : w) v /= total;
    return w;
}

Vec BlendedController::evaluate(const Vec& p) const {
    const auto w = weights(p);
    Vec u = Vec::Zero(m_);
    if (!w.empty()) {
        for (const auto& [j, v] : w) u += v * patches_[j].input;
        return u;
    }
    // Outside the cover: nearest patch input faded out by a smooth cutoff.
    std::size_t best = 0;
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < patches_.size(); ++j) {
        const double d = (p - patches_[j].center).norm() - patches_[j].radius;
        if (d < dist) {
            dist = d;
            best = j;
        }
    }
    return smooth_cutoff(std::max(dist, 0.0) / (2.0 * cell_)) * patches_[best].input;
}

std::shared_ptr<const BlendedController> blend(std::vector<Patch> patches) {
    return std::make_shared<const BlendedController>(std::move(patches));
}

StrictReport verify_strict(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha, const Controller& k,
                           double t0, std::size_t samples, std::uint64_t seed) {
    std::vector<Vec> pts = random_points(s, samples, seed, -t0);
    const auto b = boundary_sample(s, 200);
    pts.insert(pts.end(), b.begin(), b.end());

    const auto* blended = std::get_if<std::shared_ptr<const BlendedController>>(&k.variant());
    struct Sample {
        double slack = 0.0;
        double weight_error = 0.0;
        double gap = std::numeric_limits<double>::infinity();
        bool covered = true;
    };
    std::vector<Sample> out(pts.size());
    parallel_for(pts.size(), [&](std::size_t i) {
        const Vec& p = pts[i];
        Sample& smp = out[i];
        smp.slack = cbf_slack(sys, s, alpha, p, k(p));
        if (!blended) return;
        const auto w = (*blended)->weights(p);
        smp.covered = !w.empty();
        if (!smp.covered) return;
        double sum = 0.0;
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& [j, v] : w) {
            sum += v;
            worst = std::min(worst, cbf_slack(sys, s, alpha, p, (*blended)->patches()[j].input));
        }
        smp.weight_error = std::fabs(sum - 1.0);
        smp.gap = smp.slack - worst;
    });

    StrictReport r;
    r.t0 = t0;
    r.samples = pts.size();
    r.min_slack = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (out[i].slack < r.min_slack) {
            r.min_slack = out[i].slack;
            r.witness = pts[i];
        }
        if (!out[i].covered) ++r.uncovered;
        r.max_weight_error = std::max(r.max_weight_error, out[i].weight_error);
    }
    r.min_blend_gap = std::numeric_limits<double>::infinity();
    for (const auto& smp : out) r.min_blend_gap = std::min(r.min_blend_gap, smp.gap);
    if (!blended) r.min_blend_gap = 0.0;
    r.passed = r.min_slack > 0.0 && r.uncovered == 0;
    return r;
}

}  // namespace cbflab
