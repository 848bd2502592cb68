#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbflab/dsl.hpp"
#include "cbflab/system.hpp"

namespace cbflab {

/// Minimum gradient norm on the zero level set for zero to count as a regular value.
inline constexpr double kRegularEps = 1e-4;
/// Residual |h| accepted for projected boundary points.
inline constexpr double kBoundaryResidual = 1e-10;

class GeometryError : public std::runtime_error {
public:
    enum class Kind { Degenerate, UnsupportedDimension, Underresolved, NewtonFailure, NotRegular };

    GeometryError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct BoundingBox {
    Vec lower;
    Vec upper;

    int dim() const { return static_cast<int>(lower.size()); }
    bool contains(const Vec& p, double slack = 0.0) const;
    Vec center() const { return 0.5 * (lower + upper); }
};

/// C = { p : h(p) >= 0 } restricted to an axis-aligned analysis box.
class SafeSet {
public:
    SafeSet(Expression h, BoundingBox bbox, int resolution = 64);

    int dim() const { return bbox_.dim(); }
    const Expression& barrier() const { return h_; }
    const std::vector<Expression>& gradient_expressions() const { return grad_; }
    const BoundingBox& bbox() const { return bbox_; }
    int resolution() const { return resolution_; }

    double h(const Vec& p) const;
    Vec grad(const Vec& p) const;
    /// Grid spacing along `axis` at resolution `res` (defaults to the set's resolution).
    double spacing(int axis, int res = 0) const;

    SafeSet with_resolution(int res) const;
    /// Same box and resolution, barrier h + c (the superlevel set {h >= -c}).
    SafeSet shifted(double c) const;

private:
    Expression h_;
    std::vector<Expression> grad_;
    CompiledExpr h_c_;
    std::vector<CompiledExpr> grad_c_;
    BoundingBox bbox_;
    int resolution_;
};

struct RegularValueReport {
    bool passed = false;
    double min_grad_norm = 0.0;
    Vec witness;
    std::size_t samples = 0;
};

RegularValueReport regular_value_check(const SafeSet& s);

struct CompactnessReport {
    bool compact = false;
    double max_face_value = 0.0;
    Vec witness;
};

/// h < 0 on every face of the bounding box (sampled at the set's resolution).
CompactnessReport check_compact(const SafeSet& s);

/// Closed cubical complex on the regular grid, stored as a doubled-index lattice.
///
/// A lattice index with k odd coordinates denotes a k-cell. Every face of a marked
/// cell is marked.
class CubicalComplex {
public:
    CubicalComplex(int dim, int resolution);

    int dim() const { return dim_; }
    int resolution() const { return res_; }
    long count(int k) const { return counts_[static_cast<std::size_t>(k)]; }
    const std::array<long, 4>& counts() const { return counts_; }
    const std::vector<std::uint8_t>& top_cells() const { return top_; }
    std::size_t top_cell_count() const;

    bool marked(const std::array<int, 3>& lattice) const;

    /// Marks top cell (i, j, k) and all of its faces.
    void add_top_cell(const std::array<int, 3>& cell);
    /// Marks an arbitrary lattice cell and all of its faces.
    void add_cell(const std::array<int, 3>& lattice);

private:
    std::size_t lattice_index(const std::array<int, 3>& l) const;
    std::size_t cell_index(const std::array<int, 3>& c) const;

    int dim_;
    int res_;
    int side_;
    std::vector<std::uint8_t> lattice_;
    std::vector<std::uint8_t> top_;
    std::array<long, 4> counts_{0, 0, 0, 0};

    friend CubicalComplex boundary_complex(const CubicalComplex& k);
};

/// Includes every grid cell whose corners all satisfy h >= 0, then closes under faces.
/// With `check_stability` the construction is repeated at twice the resolution and a
/// changed Euler characteristic raises GeometryError::Underresolved.
CubicalComplex build_cubical_complex(const SafeSet& s, bool check_stability = true);

int euler_characteristic(const CubicalComplex& k);

/// Closure of the (n-1)-faces that belong to exactly one top cell.
CubicalComplex boundary_complex(const CubicalComplex& k);

/// Center of each included top cell, in raster order.
std::vector<Vec> cell_centers(const CubicalComplex& k, const BoundingBox& bbox);

struct BoundarySamples {
    std::vector<Vec> points;
    std::size_t seeds = 0;
    std::size_t failed_seeds = 0;
    int resolution_used = 0;
};

/// Points with |h| <= 1e-10 from grid-edge sign changes projected by damped Newton.
std::vector<Vec> boundary_sample(const SafeSet& s, int count);
BoundarySamples boundary_sample_detailed(const SafeSet& s, int count);

enum class BoundaryLabel { Inward, Tangent, Outward };
enum class BoundarySummary { AllInward, InwardOrTangent, SomeOutward };

std::string to_string(BoundaryLabel l);
std::string to_string(BoundarySummary s);

struct BoundaryClassification {
    Vec point;
    double value = 0.0;
    BoundaryLabel label = BoundaryLabel::Tangent;
    double tolerance = 0.0;
};

struct ClassificationReport {
    std::vector<BoundaryClassification> points;
    BoundarySummary summary = BoundarySummary::AllInward;
    std::size_t inward = 0;
    std::size_t tangent = 0;
    std::size_t outward = 0;
};

/// Label of dh_p X_p with tolerance 1e-8 (1 + |X_p| |grad h_p|).
ClassificationReport classify_boundary(const SafeSet& s, const VectorField& x, const std::vector<Vec>& points);

/// Grid vertices at resolution `res` with h >= level, raster order.
std::vector<Vec> grid_points(const SafeSet& s, int res, double level = 0.0);

/// Uniform rejection samples from { h >= level } inside the box.
std::vector<Vec> random_points(const SafeSet& s, std::size_t count, std::uint64_t seed, double level = 0.0);

std::string complex_counts_csv(const CubicalComplex& k);
std::string points_csv(const std::vector<Vec>& points, const SafeSet* s = nullptr);

}  // namespace cbflab
