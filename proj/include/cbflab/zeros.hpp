#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbflab/geometry.hpp"
#include "cbflab/system.hpp"

namespace cbflab {

class ZeroError : public std::runtime_error {
public:
    enum class Kind { ZeroOnBoundary, RefinementLimit, UnsupportedDimension, Precondition, NotFound };

    ZeroError(Kind kind, const std::string& what, Vec witness = {})
        : std::runtime_error(what), kind_(kind), witness_(std::move(witness)) {}
    Kind kind() const { return kind_; }
    const Vec& witness() const { return witness_; }

private:
    Kind kind_;
    Vec witness_;
};

struct SubBox {
    Vec lower;
    Vec upper;

    Vec center() const { return 0.5 * (lower + upper); }
    double diameter() const { return (upper - lower).norm(); }
};

struct DegreeResult {
    SubBox box;
    int degree = 0;
    double boundary_min_norm = 0.0;
};

/// Brouwer degree of X over a box from the field direction on the box boundary (n = 1, 2, 3).
DegreeResult topological_degree(const VectorField& x, const SubBox& box, int samples_per_face = 32);

enum class ZeroMethod { DegreeIsolation, PerturbationLimit, SignChange, Minimization };
std::string to_string(ZeroMethod m);

struct ZeroCertificate {
    Vec point;
    double residual = 0.0;
    ZeroMethod method = ZeroMethod::DegreeIsolation;
    SubBox box;
    // Heuristic: false when the Jacobian at the point is numerically singular.
    bool isolated = true;
};

struct ZeroSearch {
    std::vector<ZeroCertificate> certificates;
    double scale = 0.0;
    double tol_zero = 0.0;
    std::size_t boxes_visited = 0;
    // n >= 4: multi-start minimization, no degree certificate.
    bool best_effort = false;
};

struct ZeroSearchOptions {
    double min_diameter = 1e-6;
    std::size_t max_certificates = 32;
    std::size_t max_boxes = 400'000;
    std::uint64_t seed = 0;
};

ZeroSearch locate_zeros_detailed(const VectorField& x, const SafeSet& s, const ZeroSearchOptions& opts = {});
std::vector<ZeroCertificate> locate_zeros(const VectorField& x, const SafeSet& s);

struct PerturbationSequence {
    std::vector<double> deltas;
    std::vector<ZeroCertificate> zeros;  // one per delta, zeros of X + delta Y
    std::vector<double> increments;      // |p_k - p_{k-1}|
    Vec limit;
    double limit_residual = 0.0;         // |X| at the limit point
};

/// Default deltas 1/2, 1/4, ..., 1/64.
std::vector<double> default_deltas();

PerturbationSequence perturbation_sequence_zero(const VectorField& x, const VectorField& y, const SafeSet& s,
                                                std::vector<double> deltas = default_deltas());

/// grad h / (1 + |grad h|): smooth, bounded, and inward-pointing at every regular boundary point.
VectorField default_inward_perturbation(const SafeSet& s);

struct PoincareHopfReport {
    std::optional<int> chi;
    BoundarySummary summary = BoundarySummary::AllInward;
    std::size_t boundary_points = 0;
    bool hypotheses_hold = false;
    std::string path;  // "direct", "perturbation" or "none"
    std::vector<ZeroCertificate> certificates;
    std::optional<PerturbationSequence> sequence;
    double tol_zero = 0.0;
    bool contradiction = false;
    std::vector<std::string> notes;
};

PoincareHopfReport verify_poincare_hopf(const VectorField& x, const SafeSet& s, int boundary_samples = 400);

}  // namespace cbflab
