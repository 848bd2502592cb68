#include "cbflab/geometry.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <unordered_map>

#include "cbflab/parallel.hpp"

namespace cbflab {

namespace {

constexpr std::size_t kMaxSampleVertices = 4'000'000;

// Odometer over an n-dimensional index box [0, extent)^n.
bool next_index(std::vector<int>& idx, int extent) {
    for (std::size_t a = 0; a < idx.size(); ++a) {
        if (++idx[a] < extent) return true;
        idx[a] = 0;
    }
    return false;
}

std::size_t ipow(std::size_t b, int e) {
    std::size_t r = 1;
    for (int i = 0; i < e; ++i) r *= b;
    return r;
}

Vec vertex_point(const SafeSet& s, int res, const std::vector<int>& idx) {
    const auto& box = s.bbox();
    Vec p(s.dim());
    for (int a = 0; a < s.dim(); ++a) {
        p[a] = box.lower[a] + (box.upper[a] - box.lower[a]) * static_cast<double>(idx[static_cast<std::size_t>(a)]) / res;
    }
    return p;
}

// h at every vertex of the (res+1)^n grid; vertex (i0, i1, ...) lives at i0 + i1*(res+1) + ...
std::vector<double> vertex_values(const SafeSet& s, int res) {
    const int n = s.dim();
    const std::size_t side = static_cast<std::size_t>(res + 1);
    const std::size_t total = ipow(side, n);
    std::vector<double> values(total);
    parallel_for(total, [&](std::size_t flat) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::size_t rem = flat;
        for (int a = 0; a < n; ++a) {
            idx[static_cast<std::size_t>(a)] = static_cast<int>(rem % side);
            rem /= side;
        }
        double v;
        try {
            v = s.h(vertex_point(s, res, idx));
        } catch (const EvalError&) {
            v = std::numeric_limits<double>::quiet_NaN();
        }
        values[flat] = v;
    });
    return values;
}

// Vertices with h exactly 0 are nudged by eta = 1e-12, which puts them inside.
bool inside(double h) { return h >= 0.0; }

bool project_to_zero(const SafeSet& s, Vec& p) {
    double hv = s.h(p);
    for (int iter = 0; iter < 100; ++iter) {
        if (std::fabs(hv) <= kBoundaryResidual) return true;
        Vec g = s.grad(p);
        double g2 = g.squaredNorm();
        if (!(g2 > 0.0) || !std::isfinite(g2)) return false;
        Vec step = (hv / g2) * g;
        double lambda = 1.0;
        bool improved = false;
        for (int k = 0; k < 40; ++k) {
            Vec trial = p - lambda * step;
            double ht;
            try {
                ht = s.h(trial);
            } catch (const EvalError&) {
                lambda *= 0.5;
                continue;
            }
            if (std::fabs(ht) < std::fabs(hv)) {
                p = trial;
                hv = ht;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!improved) return std::fabs(hv) <= kBoundaryResidual;
    }
    return std::fabs(hv) <= kBoundaryResidual;
}

struct SeedResult {
    std::vector<Vec> points;
    std::size_t seeds = 0;
    std::size_t failed = 0;
};

struct KeyHash {
    std::size_t operator()(const std::vector<long>& k) const {
        std::size_t h = 1469598103934665603ull;
        for (long v : k) h = (h ^ static_cast<std::size_t>(v)) * 1099511628211ull;
        return h;
    }
};

SeedResult zero_set_points(const SafeSet& s, int res) {
    const int n = s.dim();
    const std::size_t side = static_cast<std::size_t>(res + 1);
    const auto values = vertex_values(s, res);

    std::vector<Vec> seeds;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    do {
        std::size_t flat = 0;
        std::size_t stride = 1;
        for (int a = 0; a < n; ++a) {
            flat += static_cast<std::size_t>(idx[static_cast<std::size_t>(a)]) * stride;
            stride *= side;
        }
        const double ha = values[flat];
        stride = 1;
        for (int a = 0; a < n; ++a) {
            if (idx[static_cast<std::size_t>(a)] + 1 <= res) {
                const double hb = values[flat + stride];
                if (std::isfinite(ha) && std::isfinite(hb) && inside(ha) != inside(hb)) {
                    double t = ha / (ha - hb);
                    Vec pa = vertex_point(s, res, idx);
                    Vec p = pa;
                    p[a] += t * s.spacing(a, res);
                    seeds.push_back(p);
                }
            }
            stride *= side;
        }
    } while (next_index(idx, res + 1));

    std::vector<Vec> projected(seeds.size());
    std::vector<std::uint8_t> ok(seeds.size(), 0);
    parallel_for(seeds.size(), [&](std::size_t i) {
        Vec p = seeds[i];
        bool converged = false;
        try {
            converged = project_to_zero(s, p);
        } catch (const EvalError&) {
            converged = false;
        }
        if (converged && s.bbox().contains(p)) {
            projected[i] = p;
            ok[i] = 1;
        }
    });

    SeedResult out;
    out.seeds = seeds.size();
    double cell = std::numeric_limits<double>::infinity();
    for (int a = 0; a < n; ++a) cell = std::min(cell, s.spacing(a, res));
    const double radius = 0.5 * cell;
    std::unordered_map<std::vector<long>, std::vector<std::size_t>, KeyHash> buckets;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (!ok[i]) {
            ++out.failed;
            continue;
        }
        const Vec& p = projected[i];
        std::vector<long> key(static_cast<std::size_t>(n));
        for (int a = 0; a < n; ++a) key[static_cast<std::size_t>(a)] = static_cast<long>(std::floor(p[a] / radius));
        bool duplicate = false;
        std::vector<int> off(static_cast<std::size_t>(n), 0);
        do {
            std::vector<long> probe = key;
            for (int a = 0; a < n; ++a) probe[static_cast<std::size_t>(a)] += off[static_cast<std::size_t>(a)] - 1;
            auto it = buckets.find(probe);
            if (it == buckets.end()) continue;
            for (std::size_t j : it->second) {
                if ((out.points[j] - p).norm() < radius) {
                    duplicate = true;
                    break;
                }
            }
        } while (!duplicate && next_index(off, 3));
        if (duplicate) continue;
        buckets[key].push_back(out.points.size());
        out.points.push_back(p);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------

bool BoundingBox::contains(const Vec& p, double slack) const {
    for (int a = 0; a < dim(); ++a) {
        if (p[a] < lower[a] - slack || p[a] > upper[a] + slack) return false;
    }
    return true;
}

SafeSet::SafeSet(Expression h, BoundingBox bbox, int resolution)
    : h_(std::move(h)), bbox_(std::move(bbox)), resolution_(resolution) {
    const int n = bbox_.dim();
    if (n < 1) throw std::invalid_argument("bounding box must have dimension >= 1");
    if (bbox_.upper.size() != n) throw std::invalid_argument("bounding box bounds differ in dimension");
    for (int a = 0; a < n; ++a) {
        if (!(bbox_.lower[a] < bbox_.upper[a])) throw std::invalid_argument("bounding box must have positive extent");
    }
    if (resolution_ < 2) throw std::invalid_argument("resolution must be at least 2");
    const auto vars = state_names(n);
    try {
        h_c_ = CompiledExpr(h_, vars);
    } catch (const EvalError& e) {
        throw std::invalid_argument(std::string("barrier: ") + e.what());
    }
    for (const auto& v : vars) {
        grad_.push_back(differentiate(h_, v));
        grad_c_.emplace_back(grad_.back(), vars);
    }
}

double SafeSet::h(const Vec& p) const { return h_c_(std::span<const double>(p.data(), static_cast<std::size_t>(p.size()))); }

Vec SafeSet::grad(const Vec& p) const {
    std::span<const double> slots(p.data(), static_cast<std::size_t>(p.size()));
    Vec g(dim());
    for (int a = 0; a < dim(); ++a) g[a] = grad_c_[static_cast<std::size_t>(a)](slots);
    return g;
}

double SafeSet::spacing(int axis, int res) const {
    if (res <= 0) res = resolution_;
    return (bbox_.upper[axis] - bbox_.lower[axis]) / res;
}

SafeSet SafeSet::with_resolution(int res) const { return SafeSet(h_, bbox_, res); }

SafeSet SafeSet::shifted(double c) const { return SafeSet(h_ + Expression::constant(c), bbox_, resolution_); }

// ---------------------------------------------------------------------------

RegularValueReport regular_value_check(const SafeSet& s) {
    auto found = zero_set_points(s, s.resolution());
    if (found.points.empty()) {
        throw GeometryError(GeometryError::Kind::Degenerate, "zero level set of h is empty in the bounding box (C has no boundary)");
    }
    RegularValueReport r;
    r.samples = found.points.size();
    r.min_grad_norm = std::numeric_limits<double>::infinity();
    for (const auto& p : found.points) {
        double g = s.grad(p).norm();
        if (g < r.min_grad_norm) {
            r.min_grad_norm = g;
            r.witness = p;
        }
    }
    r.passed = r.min_grad_norm >= kRegularEps;
    return r;
}

CompactnessReport check_compact(const SafeSet& s) {
    const int n = s.dim();
    const int res = s.resolution();
    CompactnessReport r;
    r.max_face_value = -std::numeric_limits<double>::infinity();
    for (int axis = 0; axis < n; ++axis) {
        for (int side = 0; side < 2; ++side) {
            std::vector<int> idx(static_cast<std::size_t>(n), 0);
            do {
                if (idx[static_cast<std::size_t>(axis)] != 0) continue;
                std::vector<int> full = idx;
                full[static_cast<std::size_t>(axis)] = side == 0 ? 0 : res;
                Vec p = vertex_point(s, res, full);
                double v = s.h(p);
                if (v > r.max_face_value) {
                    r.max_face_value = v;
                    r.witness = p;
                }
            } while (next_index(idx, res + 1));
        }
    }
    r.compact = r.max_face_value < 0.0;
    return r;
}

// ---------------------------------------------------------------------------

CubicalComplex::CubicalComplex(int dim, int resolution) : dim_(dim), res_(resolution), side_(2 * resolution + 1) {
    if (dim < 1 || dim > 3) {
        throw GeometryError(GeometryError::Kind::UnsupportedDimension,
                            "cubical complexes are supported for n in {1, 2, 3}, got n = " + std::to_string(dim));
    }
    lattice_.assign(ipow(static_cast<std::size_t>(side_), dim), 0);
    top_.assign(ipow(static_cast<std::size_t>(res_), dim), 0);
}

std::size_t CubicalComplex::lattice_index(const std::array<int, 3>& l) const {
    std::size_t flat = 0;
    std::size_t stride = 1;
    for (int a = 0; a < dim_; ++a) {
        flat += static_cast<std::size_t>(l[static_cast<std::size_t>(a)]) * stride;
        stride *= static_cast<std::size_t>(side_);
    }
    return flat;
}

std::size_t CubicalComplex::cell_index(const std::array<int, 3>& c) const {
    std::size_t flat = 0;
    std::size_t stride = 1;
    for (int a = 0; a < dim_; ++a) {
        flat += static_cast<std::size_t>(c[static_cast<std::size_t>(a)]) * stride;
        stride *= static_cast<std::size_t>(res_);
    }
    return flat;
}

std::size_t CubicalComplex::top_cell_count() const {
    std::size_t c = 0;
    for (auto t : top_) c += t;
    return c;
}

bool CubicalComplex::marked(const std::array<int, 3>& lattice) const {
    for (int a = 0; a < dim_; ++a) {
        if (lattice[static_cast<std::size_t>(a)] < 0 || lattice[static_cast<std::size_t>(a)] >= side_) return false;
    }
    return lattice_[lattice_index(lattice)] != 0;
}

void CubicalComplex::add_cell(const std::array<int, 3>& l) {
    // Faces vary each odd coordinate by -1, 0, +1 and keep even coordinates fixed.
    std::array<int, 3> off{0, 0, 0};
    std::array<int, 3> span{1, 1, 1};
    for (int a = 0; a < dim_; ++a) span[static_cast<std::size_t>(a)] = (l[static_cast<std::size_t>(a)] % 2) ? 3 : 1;
    for (off[2] = 0; off[2] < span[2]; ++off[2]) {
        for (off[1] = 0; off[1] < span[1]; ++off[1]) {
            for (off[0] = 0; off[0] < span[0]; ++off[0]) {
                std::array<int, 3> f{0, 0, 0};
                int k = 0;
                for (int a = 0; a < dim_; ++a) {
                    const auto ua = static_cast<std::size_t>(a);
                    f[ua] = l[ua] + (span[ua] == 3 ? off[ua] - 1 : 0);
                    k += f[ua] % 2;
                }
                auto& slot = lattice_[lattice_index(f)];
                if (!slot) {
                    slot = 1;
                    ++counts_[static_cast<std::size_t>(k)];
                }
            }
        }
    }
}

void CubicalComplex::add_top_cell(const std::array<int, 3>& cell) {
    top_[cell_index(cell)] = 1;
    std::array<int, 3> l{0, 0, 0};
    for (int a = 0; a < dim_; ++a) l[static_cast<std::size_t>(a)] = 2 * cell[static_cast<std::size_t>(a)] + 1;
    add_cell(l);
}

namespace {

CubicalComplex build_at(const SafeSet& s, int res) {
    const int n = s.dim();
    CubicalComplex k(n, res);
    const auto values = vertex_values(s, res);
    const std::size_t side = static_cast<std::size_t>(res + 1);
    std::array<int, 3> c{0, 0, 0};
    const int zmax = n >= 3 ? res : 1;
    const int ymax = n >= 2 ? res : 1;
    for (c[2] = 0; c[2] < zmax; ++c[2]) {
        for (c[1] = 0; c[1] < ymax; ++c[1]) {
            for (c[0] = 0; c[0] < res; ++c[0]) {
                bool all_inside = true;
                for (int corner = 0; corner < (1 << n) && all_inside; ++corner) {
                    std::size_t flat = 0;
                    std::size_t stride = 1;
                    for (int a = 0; a < n; ++a) {
                        flat += static_cast<std::size_t>(c[static_cast<std::size_t>(a)] + ((corner >> a) & 1)) * stride;
                        stride *= side;
                    }
                    const double v = values[flat];
                    all_inside = std::isfinite(v) && inside(v);
                }
                if (all_inside) k.add_top_cell(c);
            }
        }
    }
    return k;
}

}  // namespace

CubicalComplex build_cubical_complex(const SafeSet& s, bool check_stability) {
    if (s.dim() > 3) {
        throw GeometryError(GeometryError::Kind::UnsupportedDimension,
                            "Euler characteristic is supported for n <= 3, got n = " + std::to_string(s.dim()));
    }
    CubicalComplex k = build_at(s, s.resolution());
    if (check_stability) {
        const int chi = euler_characteristic(k);
        const int chi_fine = euler_characteristic(build_at(s, 2 * s.resolution()));
        if (chi != chi_fine) {
            throw GeometryError(GeometryError::Kind::Underresolved,
                                "resolution too coarse: chi = " + std::to_string(chi) + " at resolution " +
                                    std::to_string(s.resolution()) + " but " + std::to_string(chi_fine) + " at " +
                                    std::to_string(2 * s.resolution()));
        }
    }
    return k;
}

int euler_characteristic(const CubicalComplex& k) {
    long chi = 0;
    for (int d = 0; d <= k.dim(); ++d) chi += (d % 2 ? -1 : 1) * k.count(d);
    return static_cast<int>(chi);
}

CubicalComplex boundary_complex(const CubicalComplex& k) {
    CubicalComplex b(k.dim(), k.resolution());
    const int n = k.dim();
    const int res = k.resolution();
    std::array<int, 3> c{0, 0, 0};
    const int zmax = n >= 3 ? res : 1;
    const int ymax = n >= 2 ? res : 1;
    auto included = [&](std::array<int, 3> cell) {
        for (int a = 0; a < n; ++a) {
            if (cell[static_cast<std::size_t>(a)] < 0 || cell[static_cast<std::size_t>(a)] >= res) return false;
        }
        return k.top_[k.cell_index(cell)] != 0;
    };
    for (c[2] = 0; c[2] < zmax; ++c[2]) {
        for (c[1] = 0; c[1] < ymax; ++c[1]) {
            for (c[0] = 0; c[0] < res; ++c[0]) {
                if (!included(c)) continue;
                for (int a = 0; a < n; ++a) {
                    for (int dir : {-1, 1}) {
                        auto nb = c;
                        nb[static_cast<std::size_t>(a)] += dir;
                        if (included(nb)) continue;
                        std::array<int, 3> face{0, 0, 0};
                        for (int j = 0; j < n; ++j) face[static_cast<std::size_t>(j)] = 2 * c[static_cast<std::size_t>(j)] + 1;
                        face[static_cast<std::size_t>(a)] += dir;
                        b.add_cell(face);
                    }
                }
            }
        }
    }
    return b;
}

std::vector<Vec> cell_centers(const CubicalComplex& k, const BoundingBox& bbox) {
    std::vector<Vec> out;
    const int n = k.dim();
    const int res = k.resolution();
    const auto& top = k.top_cells();
    for (std::size_t flat = 0; flat < top.size(); ++flat) {
        if (!top[flat]) continue;
        Vec p(n);
        std::size_t rem = flat;
        for (int a = 0; a < n; ++a) {
            const double i = static_cast<double>(rem % static_cast<std::size_t>(res)) + 0.5;
            rem /= static_cast<std::size_t>(res);
            p[a] = bbox.lower[a] + (bbox.upper[a] - bbox.lower[a]) * i / res;
        }
        out.push_back(p);
    }
    return out;
}

// ---------------------------------------------------------------------------

BoundarySamples boundary_sample_detailed(const SafeSet& s, int count) {
    if (count < 1) throw std::invalid_argument("boundary sample count must be positive");
    int res = s.resolution();
    SeedResult found;
    for (;;) {
        found = zero_set_points(s, res);
        if (found.seeds > 0 && static_cast<double>(found.failed) > 0.1 * static_cast<double>(found.seeds)) {
            throw GeometryError(GeometryError::Kind::NewtonFailure,
                                "Newton projection failed for " + std::to_string(found.failed) + " of " +
                                    std::to_string(found.seeds) + " boundary seeds");
        }
        if (found.points.size() >= static_cast<std::size_t>(count)) break;
        if (ipow(static_cast<std::size_t>(2 * res + 1), s.dim()) > kMaxSampleVertices) break;
        res *= 2;
    }
    if (found.points.empty()) {
        throw GeometryError(GeometryError::Kind::Degenerate, "zero level set of h is empty in the bounding box (C has no boundary)");
    }
    BoundarySamples out;
    out.seeds = found.seeds;
    out.failed_seeds = found.failed;
    out.resolution_used = res;
    const std::size_t total = found.points.size();
    const std::size_t want = std::min<std::size_t>(total, static_cast<std::size_t>(count));
    out.points.reserve(want);
    for (std::size_t i = 0; i < want; ++i) out.points.push_back(found.points[i * total / want]);
    for (const auto& p : out.points) {
        if (s.grad(p).norm() < kRegularEps) {
            throw GeometryError(GeometryError::Kind::NotRegular,
                                "zero is not a regular value of h: |grad h| < 1e-4 at " + format_vec(p));
        }
    }
    return out;
}

std::vector<Vec> boundary_sample(const SafeSet& s, int count) { return boundary_sample_detailed(s, count).points; }

std::string to_string(BoundaryLabel l) {
    switch (l) {
        case BoundaryLabel::Inward: return "inward";
        case BoundaryLabel::Tangent: return "tangent";
        case BoundaryLabel::Outward: return "outward";
    }
    return "?";
}

std::string to_string(BoundarySummary s) {
    switch (s) {
        case BoundarySummary::AllInward: return "all_inward";
        case BoundarySummary::InwardOrTangent: return "inward_or_tangent";
        case BoundarySummary::SomeOutward: return "some_outward";
    }
    return "?";
}

ClassificationReport classify_boundary(const SafeSet& s, const VectorField& x, const std::vector<Vec>& points) {
    ClassificationReport r;
    r.points.resize(points.size());
    parallel_for(points.size(), [&](std::size_t i) {
        const Vec& p = points[i];
        Vec xp;
        try {
            xp = x(p);
        } catch (const std::exception& e) {
            throw std::runtime_error("vector field evaluation failed at " + format_vec(p) + ": " + e.what());
        }
        const Vec g = s.grad(p);
        BoundaryClassification c;
        c.point = p;
        c.value = g.dot(xp);
        c.tolerance = 1e-8 * (1.0 + xp.norm() * g.norm());
        c.label = c.value > c.tolerance ? BoundaryLabel::Inward
                  : c.value < -c.tolerance ? BoundaryLabel::Outward
                                           : BoundaryLabel::Tangent;
        r.points[i] = std::move(c);
    });
    for (const auto& c : r.points) {
        switch (c.label) {
            case BoundaryLabel::Inward: ++r.inward; break;
            case BoundaryLabel::Tangent: ++r.tangent; break;
            case BoundaryLabel::Outward: ++r.outward; break;
        }
    }
    r.summary = r.outward > 0 ? BoundarySummary::SomeOutward
                : r.tangent > 0 ? BoundarySummary::InwardOrTangent
                                : BoundarySummary::AllInward;
    return r;
}

std::vector<Vec> grid_points(const SafeSet& s, int res, double level) {
    const auto values = vertex_values(s, res);
    std::vector<Vec> out;
    std::vector<int> idx(static_cast<std::size_t>(s.dim()), 0);
    std::size_t flat = 0;
    do {
        if (std::isfinite(values[flat]) && values[flat] >= level) out.push_back(vertex_point(s, res, idx));
        ++flat;
    } while (next_index(idx, res + 1));
    return out;
}

std::vector<Vec> random_points(const SafeSet& s, std::size_t count, std::uint64_t seed, double level) {
    std::mt19937_64 rng(seed);
    std::vector<std::uniform_real_distribution<double>> axes;
    for (int a = 0; a < s.dim(); ++a) axes.emplace_back(s.bbox().lower[a], s.bbox().upper[a]);
    std::vector<Vec> out;
    const std::size_t max_attempts = 10000 * std::max<std::size_t>(count, 1);
    for (std::size_t attempt = 0; attempt < max_attempts && out.size() < count; ++attempt) {
        Vec p(s.dim());
        for (int a = 0; a < s.dim(); ++a) p[a] = axes[static_cast<std::size_t>(a)](rng);
        double v;
        try {
            v = s.h(p);
        } catch (const EvalError&) {
            continue;
        }
        if (v >= level) out.push_back(p);
    }
    return out;
}

std::string complex_counts_csv(const CubicalComplex& k) {
    std::ostringstream os;
    os << "dimension,count\n";
    for (int d = 0; d <= k.dim(); ++d) os << d << ',' << k.count(d) << '\n';
    os << "euler," << euler_characteristic(k) << '\n';
    return os.str();
}

std::string points_csv(const std::vector<Vec>& points, const SafeSet* s) {
    std::ostringstream os;
    os.precision(17);
    if (points.empty()) return os.str();
    const auto n = points.front().size();
    for (Eigen::Index a = 0; a < n; ++a) os << (a ? "," : "") << 'x' << (a + 1);
    if (s) os << ",h";
    os << '\n';
    for (const auto& p : points) {
        for (Eigen::Index a = 0; a < n; ++a) os << (a ? "," : "") << p[a];
        if (s) os << ',' << s->h(p);
        os << '\n';
    }
    return os.str();
}

}  // namespace cbflab
