#include "cbflab/zeros.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "cbflab/parallel.hpp"
#include "numeric.hpp"

namespace cbflab {

namespace {

constexpr double kSplit = 0.5123;  // off-center split keeps symmetric zeros off child faces
constexpr int kMaxRefinements = 4;

struct BoundaryScan {
    double min_norm = std::numeric_limits<double>::infinity();
    double max_norm = 0.0;
    Vec argmin;

    void see(const Vec& p, const Vec& v) {
        const double nv = v.norm();
        if (nv < min_norm) {
            min_norm = nv;
            argmin = p;
        }
        max_norm = std::max(max_norm, nv);
    }
};

void require_nonzero(const BoundaryScan& scan) {
    if (!(scan.min_norm > 1e-12 * scan.max_norm) || scan.max_norm == 0.0) {
        throw ZeroError(ZeroError::Kind::ZeroOnBoundary,
                        "field vanishes on the region boundary near " + format_vec(scan.argmin), scan.argmin);
    }
}

// Angle swept from direction a to b along a segment, refined until every step is below pi/2.
double sweep(const VectorField& x, const Vec& pa, const Vec& va, const Vec& pb, const Vec& vb, int depth,
             BoundaryScan& scan) {
    const double dtheta = std::atan2(va[0] * vb[1] - va[1] * vb[0], va.dot(vb));
    if (std::fabs(dtheta) < std::numbers::pi / 2) return dtheta;
    if (depth >= kMaxRefinements) {
        throw ZeroError(ZeroError::Kind::RefinementLimit,
                        "winding number needs more than " + std::to_string(kMaxRefinements) + " refinements near " +
                            format_vec(pa),
                        pa);
    }
    const Vec pm = 0.5 * (pa + pb);
    const Vec vm = x(pm);
    scan.see(pm, vm);
    require_nonzero(scan);
    return sweep(x, pa, va, pm, vm, depth + 1, scan) + sweep(x, pm, vm, pb, vb, depth + 1, scan);
}

int degree_2d(const VectorField& x, const SubBox& b, int samples, BoundaryScan& scan) {
    const Vec& l = b.lower;
    const Vec& u = b.upper;
    std::vector<Vec> corners;
    for (const auto& [cx, cy] : {std::pair{l[0], l[1]}, {u[0], l[1]}, {u[0], u[1]}, {l[0], u[1]}}) {
        Vec c(2);
        c << cx, cy;
        corners.push_back(c);
    }
    std::vector<Vec> pts;
    for (int e = 0; e < 4; ++e) {
        const Vec& a = corners[static_cast<std::size_t>(e)];
        const Vec& c = corners[static_cast<std::size_t>((e + 1) % 4)];
        for (int k = 0; k < samples; ++k) pts.push_back(a + (c - a) * (static_cast<double>(k) / samples));
    }
    std::vector<Vec> vals(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        vals[i] = x(pts[i]);
        scan.see(pts[i], vals[i]);
    }
    require_nonzero(scan);
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const std::size_t j = (i + 1) % pts.size();
        total += sweep(x, pts[i], vals[i], pts[j], vals[j], 0, scan);
    }
    return static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
}

double solid_angle(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
    return 2.0 * std::atan2(a.dot(b.cross(c)), 1.0 + a.dot(b) + b.dot(c) + c.dot(a));
}

int degree_3d(const VectorField& x, const SubBox& box, int samples, BoundaryScan& scan) {
    int k = std::max(samples, 2);
    for (int attempt = 0; attempt <= kMaxRefinements; ++attempt, k *= 2) {
        double total = 0.0;
        bool coarse = false;
        for (int axis = 0; axis < 3 && !coarse; ++axis) {
            const int b1 = (axis + 1) % 3;
            const int b2 = (axis + 2) % 3;
            for (int side = 0; side < 2 && !coarse; ++side) {
                std::vector<Eigen::Vector3d> dir(static_cast<std::size_t>((k + 1) * (k + 1)));
                for (int j = 0; j <= k; ++j) {
                    for (int i = 0; i <= k; ++i) {
                        Vec p(3);
                        p[axis] = side ? box.upper[axis] : box.lower[axis];
                        p[b1] = box.lower[b1] + (box.upper[b1] - box.lower[b1]) * i / k;
                        p[b2] = box.lower[b2] + (box.upper[b2] - box.lower[b2]) * j / k;
                        const Vec v = x(p);
                        scan.see(p, v);
                        dir[static_cast<std::size_t>(j * (k + 1) + i)] = Eigen::Vector3d(v[0], v[1], v[2]).normalized();
                    }
                }
                require_nonzero(scan);
                auto at = [&](int i, int j) -> const Eigen::Vector3d& { return dir[static_cast<std::size_t>(j * (k + 1) + i)]; };
                for (int j = 0; j < k && !coarse; ++j) {
                    for (int i = 0; i < k; ++i) {
                        const auto& a = at(i, j);
                        const auto& b = at(i + 1, j);
                        const auto& c = at(i + 1, j + 1);
                        const auto& d = at(i, j + 1);
                        if (a.dot(b) < 0 || b.dot(c) < 0 || c.dot(d) < 0 || d.dot(a) < 0 || a.dot(c) < 0) {
                            coarse = true;
                            break;
                        }
                        // (e_b1, e_b2, e_axis) is right-handed, so counterclockwise in (b1, b2) faces +axis.
                        const double w = solid_angle(a, b, c) + solid_angle(a, c, d);
                        total += side ? w : -w;
                    }
                }
            }
        }
        if (coarse) continue;
        const double deg = total / (4.0 * std::numbers::pi);
        if (std::fabs(deg - std::round(deg)) < 0.1) return static_cast<int>(std::lround(deg));
    }
    throw ZeroError(ZeroError::Kind::RefinementLimit, "solid-angle degree did not settle to an integer", box.center());
}

std::vector<SubBox> split(const SubBox& b) {
    const int n = static_cast<int>(b.lower.size());
    Vec mid = b.lower + kSplit * (b.upper - b.lower);
    std::vector<SubBox> out;
    for (int mask = 0; mask < (1 << n); ++mask) {
        SubBox c{b.lower, b.upper};
        for (int a = 0; a < n; ++a) {
            if ((mask >> a) & 1) {
                c.lower[a] = mid[a];
            } else {
                c.upper[a] = mid[a];
            }
        }
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<Vec> corners(const SubBox& b) {
    const int n = static_cast<int>(b.lower.size());
    std::vector<Vec> out;
    for (int mask = 0; mask < (1 << n); ++mask) {
        Vec p = b.lower;
        for (int a = 0; a < n; ++a) {
            if ((mask >> a) & 1) p[a] = b.upper[a];
        }
        out.push_back(p);
    }
    return out;
}

// True when the box provably (up to the 2x finite-difference Lipschitz estimate) misses C.
bool outside_c(const SafeSet& s, const SubBox& b) {
    try {
        const Vec c = b.center();
        const double hc = s.h(c);
        const double hd = 0.5 * b.diameter();
        double lip = s.grad(c).norm();
        for (const auto& p : corners(b)) {
            const double hp = s.h(p);
            if (hp >= 0.0) return false;
            lip = std::max(lip, std::fabs(hp - hc) / hd);
        }
        return hc + 2.0 * lip * hd < 0.0;
    } catch (const EvalError&) {
        return false;
    }
}

bool no_zero(const VectorField& x, const SubBox& b) {
    const Vec c = b.center();
    const Vec xc = x(c);
    const double hd = 0.5 * b.diameter();
    double lip = 0.0;
    for (const auto& p : corners(b)) lip = std::max(lip, (x(p) - xc).norm() / hd);
    return xc.norm() > 2.0 * lip * hd;
}

bool jacobian_regular(const VectorField& x, const Vec& p) {
    const Mat j = numeric::fd_jacobian([&](const Vec& q) { return x(q); }, p);
    Eigen::JacobiSVD<Mat> svd(j);
    const auto& sv = svd.singularValues();
    return sv.size() > 0 && sv[0] > 0.0 && sv[sv.size() - 1] > 1e-6 * sv[0];
}

struct Candidate {
    Vec start;
    SubBox box;
};

struct BoxOutcome {
    std::vector<SubBox> children;
    std::optional<Candidate> candidate;
};

}  // namespace

std::string to_string(ZeroMethod m) {
    switch (m) {
        case ZeroMethod::DegreeIsolation: return "degree_isolation";
        case ZeroMethod::PerturbationLimit: return "perturbation_limit";
        case ZeroMethod::SignChange: return "sign_change";
        case ZeroMethod::Minimization: return "minimization";
    }
    return "?";
}

DegreeResult topological_degree(const VectorField& x, const SubBox& box, int samples_per_face) {
    const auto n = box.lower.size();
    DegreeResult r;
    r.box = box;
    BoundaryScan scan;
    if (n == 1) {
        Vec a = box.lower, b = box.upper;
        const Vec va = x(a), vb = x(b);
        scan.see(a, va);
        scan.see(b, vb);
        require_nonzero(scan);
        r.degree = ((vb[0] > 0) - (vb[0] < 0) - (va[0] > 0) + (va[0] < 0)) / 2;
    } else if (n == 2) {
        r.degree = degree_2d(x, box, samples_per_face, scan);
    } else if (n == 3) {
        r.degree = degree_3d(x, box, samples_per_face, scan);
    } else {
        throw ZeroError(ZeroError::Kind::UnsupportedDimension, "degree is implemented for n <= 3");
    }
    r.boundary_min_norm = scan.min_norm;
    return r;
}

ZeroSearch locate_zeros_detailed(const VectorField& x, const SafeSet& s, const ZeroSearchOptions& opts) {
    const int n = s.dim();
    ZeroSearch out;
    const int scale_res = std::min(s.resolution(), n >= 3 ? 24 : 64);
    const auto cpts = grid_points(s, scale_res);
    if (cpts.empty()) return out;
    for (const auto& p : cpts) out.scale = std::max(out.scale, x(p).norm());
    out.tol_zero = 1e-8 * out.scale;

    const double span = (s.bbox().upper - s.bbox().lower).norm();
    double continuum_gap = 0.0;  // spacing of sample points kept on a zero continuum
    auto accept = [&](const Vec& start, const SubBox& box, ZeroMethod method) {
        if (out.certificates.size() >= opts.max_certificates) return;
        auto fx = [&](const Vec& q) { return x(q); };
        Vec p = numeric::gauss_newton(fx, start, 0.01 * out.tol_zero);
        const double res = x(p).norm();
        if (!(res <= out.tol_zero)) return;
        if (!s.bbox().contains(p) || s.h(p) < -1e-9) return;
        for (const auto& c : out.certificates) {
            if ((c.point - p).norm() <= 1e-6 * (1.0 + span)) return;
        }
        ZeroCertificate cert;
        cert.point = p;
        cert.residual = res;
        cert.method = method;
        cert.box = box;
        cert.isolated = jacobian_regular(x, p);
        if (!cert.isolated) {
            // Keep a sparse sample of a continuum and leave room for isolated zeros.
            std::size_t kept = 0;
            for (const auto& c : out.certificates) {
                if (c.isolated) continue;
                if ((c.point - p).norm() < continuum_gap) return;
                ++kept;
            }
            if (kept >= opts.max_certificates / 2) return;
        }
        out.certificates.push_back(std::move(cert));
    };

    if (n == 1) {
        auto sorted = cpts;
        std::sort(sorted.begin(), sorted.end(), [](const Vec& a, const Vec& b) { return a[0] < b[0]; });
        const double dx = s.spacing(0, scale_res);
        for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
            double a = sorted[i][0], b = sorted[i + 1][0];
            if (b - a > 1.5 * dx) continue;
            auto f = [&](double t) { return x(Vec::Constant(1, t))[0]; };
            double fa = f(a), fb = f(b);
            ++out.boxes_visited;
            if (fa == 0.0) {
                accept(Vec::Constant(1, a), SubBox{Vec::Constant(1, a), Vec::Constant(1, a)}, ZeroMethod::SignChange);
                continue;
            }
            if ((fa > 0) == (fb > 0)) continue;
            while (b - a > 1e-14 * (1.0 + std::fabs(a))) {
                const double m = 0.5 * (a + b);
                const double fm = f(m);
                if ((fm > 0) == (fa > 0)) {
                    a = m;
                    fa = fm;
                } else {
                    b = m;
                }
            }
            accept(Vec::Constant(1, 0.5 * (a + b)), SubBox{Vec::Constant(1, a), Vec::Constant(1, b)},
                   ZeroMethod::SignChange);
        }
        return out;
    }

    if (n >= 4) {
        out.best_effort = true;
        std::mt19937_64 rng(opts.seed);
        std::vector<Vec> starts;
        std::uniform_int_distribution<std::size_t> pick(0, cpts.size() - 1);
        for (int i = 0; i < 20 * n; ++i) starts.push_back(cpts[pick(rng)]);
        for (const auto& st : starts) {
            ++out.boxes_visited;
            accept(st, SubBox{s.bbox().lower, s.bbox().upper}, ZeroMethod::Minimization);
        }
        return out;
    }

    // Start from the bounding box of C's grid points padded by one cell.
    SubBox root{cpts.front(), cpts.front()};
    for (const auto& p : cpts) {
        root.lower = root.lower.cwiseMin(p);
        root.upper = root.upper.cwiseMax(p);
    }
    double coarse = 0.0;
    for (int a = 0; a < n; ++a) {
        const double h = s.spacing(a, scale_res);
        root.lower[a] = std::max(s.bbox().lower[a], root.lower[a] - h);
        root.upper[a] = std::min(s.bbox().upper[a], root.upper[a] + h);
        coarse += h * h;
    }
    coarse = std::sqrt(coarse);
    continuum_gap = coarse;

    std::vector<SubBox> level{root};
    while (!level.empty() && out.certificates.size() < opts.max_certificates && out.boxes_visited < opts.max_boxes) {
        std::vector<BoxOutcome> results(level.size());
        parallel_for(level.size(), [&](std::size_t i) {
            const SubBox& b = level[i];
            BoxOutcome& r = results[i];
            if (outside_c(s, b) || no_zero(x, b)) return;
            const double diam = b.diameter();
            if (diam > coarse) {
                r.children = split(b);
                return;
            }
            try {
                const auto deg = topological_degree(x, b, 8);
                if (deg.degree == 0) return;
                if (diam <= opts.min_diameter) {
                    r.candidate = Candidate{b.center(), b};
                } else {
                    r.children = split(b);
                }
            } catch (const ZeroError& e) {
                if (e.kind() == ZeroError::Kind::ZeroOnBoundary) {
                    r.candidate = Candidate{e.witness(), b};
                } else if (diam > std::max(opts.min_diameter, coarse / 8.0)) {
                    r.children = split(b);
                } else {
                    // Degree stays undefined under refinement: zeros touch the boundary, as on a
                    // continuum. Splitting further multiplies boxes without isolating anything.
                    r.candidate = Candidate{b.center(), b};
                }
            }
        });
        out.boxes_visited += level.size();
        std::vector<SubBox> next;
        for (auto& r : results) {
            if (r.candidate) accept(r.candidate->start, r.candidate->box, ZeroMethod::DegreeIsolation);
            for (auto& c : r.children) next.push_back(std::move(c));
        }
        level = std::move(next);
    }
    return out;
}

std::vector<ZeroCertificate> locate_zeros(const VectorField& x, const SafeSet& s) {
    return locate_zeros_detailed(x, s).certificates;
}

std::vector<double> default_deltas() {
    std::vector<double> d;
    for (int k = 1; k <= 6; ++k) d.push_back(std::ldexp(1.0, -k));
    return d;
}

VectorField default_inward_perturbation(const SafeSet& s) {
    return VectorField(s.dim(), [s](const Vec& p) {
        const Vec g = s.grad(p);
        return Vec(g / (1.0 + g.norm()));
    });
}

PerturbationSequence perturbation_sequence_zero(const VectorField& x, const VectorField& y, const SafeSet& s,
                                                std::vector<double> deltas) {
    if (deltas.empty()) throw std::invalid_argument("perturbation sequence needs at least one delta");
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (!(deltas[i] > 0.0) || (i > 0 && !(deltas[i] < deltas[i - 1]))) {
            throw std::invalid_argument("deltas must be positive and strictly decreasing");
        }
    }
    const auto bpts = boundary_sample(s, 200);
    const auto ycls = classify_boundary(s, y, bpts);
    if (ycls.summary != BoundarySummary::AllInward) {
        throw ZeroError(ZeroError::Kind::Precondition, "perturbation field Y is not inward-pointing on the boundary");
    }
    PerturbationSequence seq;
    seq.deltas = deltas;
    for (double d : deltas) {
        const VectorField xd = x + y.scaled(d);
        const auto cls = classify_boundary(s, xd, bpts);
        if (cls.summary != BoundarySummary::AllInward) {
            Vec witness;
            for (const auto& c : cls.points) {
                if (c.label != BoundaryLabel::Inward) {
                    witness = c.point;
                    break;
                }
            }
            throw ZeroError(ZeroError::Kind::Precondition,
                            "X + delta Y is not inward-pointing for delta = " + std::to_string(d) + " at " +
                                format_vec(witness),
                            witness);
        }
        const auto found = locate_zeros(xd, s);
        if (found.empty()) {
            throw ZeroError(ZeroError::Kind::NotFound, "no zero located for X + delta Y with delta = " + std::to_string(d));
        }
        const ZeroCertificate* best = &found.front();
        if (!seq.zeros.empty()) {
            for (const auto& c : found) {
                if ((c.point - seq.zeros.back().point).norm() < (best->point - seq.zeros.back().point).norm()) best = &c;
            }
            seq.increments.push_back((best->point - seq.zeros.back().point).norm());
        }
        seq.zeros.push_back(*best);
    }
    seq.limit = seq.zeros.back().point;
    seq.limit_residual = x(seq.limit).norm();
    return seq;
}

PoincareHopfReport verify_poincare_hopf(const VectorField& x, const SafeSet& s, int boundary_samples) {
    PoincareHopfReport r;
    if (s.dim() <= 3) {
        r.chi = euler_characteristic(build_cubical_complex(s));
    } else {
        r.notes.push_back("Euler characteristic not computed for n > 3");
    }
    const auto bpts = boundary_sample(s, boundary_samples);
    r.boundary_points = bpts.size();
    r.summary = classify_boundary(s, x, bpts).summary;

    const bool boundary_ok = r.summary != BoundarySummary::SomeOutward;
    r.hypotheses_hold = boundary_ok && r.chi && *r.chi != 0;
    if (!boundary_ok) r.notes.push_back("field points outward somewhere on the boundary; theorem silent");
    if (r.chi && *r.chi == 0) r.notes.push_back("Euler characteristic zero; theorem silent");

    if (!r.hypotheses_hold || r.summary == BoundarySummary::AllInward) {
        auto found = locate_zeros_detailed(x, s);
        r.tol_zero = found.tol_zero;
        r.certificates = std::move(found.certificates);
        r.path = r.hypotheses_hold ? "direct" : "none";
        if (!r.hypotheses_hold && !r.certificates.empty()) r.notes.push_back("zeros found although no zero is guaranteed");
    } else {
        r.path = "perturbation";
        auto seq = perturbation_sequence_zero(x, default_inward_perturbation(s), s);
        auto fx = [&](const Vec& q) { return x(q); };
        Vec p = numeric::gauss_newton(fx, seq.limit, 0.0, 40);
        ZeroCertificate cert;
        cert.point = x(p).norm() < seq.limit_residual ? p : seq.limit;
        cert.residual = x(cert.point).norm();
        cert.method = ZeroMethod::PerturbationLimit;
        cert.box = seq.zeros.back().box;
        cert.isolated = jacobian_regular(x, cert.point);
        double scale = 0.0;
        for (const auto& q : grid_points(s, std::min(s.resolution(), 32))) scale = std::max(scale, x(q).norm());
        r.tol_zero = 1e-8 * scale;
        if (cert.residual <= std::max(r.tol_zero, 1e-6)) r.certificates.push_back(cert);
        r.sequence = std::move(seq);
    }
    for (const auto& c : r.certificates) {
        if (!c.isolated) {
            r.notes.push_back("non-isolated (heuristic): singular Jacobian at a certified zero");
            break;
        }
    }
    r.contradiction = r.hypotheses_hold && r.certificates.empty();
    if (r.contradiction) r.notes.push_back("NUMERICAL FAILURE: hypotheses hold but no zero was certified");
    return r;
}

}  // namespace cbflab
