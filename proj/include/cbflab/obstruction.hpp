#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbflab/geometry.hpp"
#include "cbflab/system.hpp"

namespace cbflab {

/// Solvable/Unsolvable thresholds are separated by this factor; in between is Inconclusive.
inline constexpr double kGapFactor = 100.0;

class ObstructionError : public std::runtime_error {
public:
    enum class Kind { Inadmissible, NotCompact, BadFamily, Unsupported };

    ObstructionError(Kind kind, const std::string& what, Vec witness = {})
        : std::runtime_error(what), kind_(kind), witness_(std::move(witness)) {}
    Kind kind() const { return kind_; }
    const Vec& witness() const { return witness_; }

private:
    Kind kind_;
    Vec witness_;
};

enum class SolveStatus { Solvable, Unsolvable, Inconclusive };
enum class SolveMethod { ExactSpan, ConstrainedSearch };
std::string to_string(SolveStatus s);
std::string to_string(SolveMethod m);

struct SolvabilityResult {
    SolveStatus status = SolveStatus::Inconclusive;
    Vec p;
    Vec u;          // best input found
    double residual = 0.0;
    double tol = 0.0;
    SolveMethod method = SolveMethod::ExactSpan;
};

/// tol_solve = 1e-7 (1 + |z|).
double solve_tolerance(const Vec& z);
SolveStatus classify_residual(double residual, double tol);

/// Least squares for G(p) u = z - drift(p) with SVD cutoff 1e-10 sigma_max; FullSpace inputs only.
SolvabilityResult span_solvability(const ControlAffineSystem& sys, const Vec& p, const Vec& z);

/// min over u in U of |F(p, u) - z| for bounded input sets.
SolvabilityResult constrained_solvability(const System& sys, const Vec& p, const Vec& z, std::uint64_t seed = 0);

/// Dispatches on the system and input set: exact span, unconstrained Gauss-Newton, or constrained search.
SolvabilityResult solve_at(const System& sys, const Vec& p, const Vec& z, std::uint64_t seed = 0);

struct PerturbationField {
    std::string name;
    std::vector<Expression> components;
    std::string scale_param;  // empty for a single field
    bool admissibility_verified = false;

    VectorField at(double scale = 0.0) const;
};

enum class Theorem { T3, T4, T5, Cor1, Brockett };
enum class Outcome { Violated, NotViolated, Inconclusive };
std::string to_string(Theorem t);
std::string to_string(Outcome o);

struct ResidualStats {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    std::size_t count = 0;
    Vec argmin;
};

struct RungResult {
    double scale = 0.0;  // epsilon or sphere radius
    SolveStatus status = SolveStatus::Inconclusive;
    ResidualStats residuals;
    std::optional<SolvabilityResult> solution;
    // Minimum over 5x more sample points when the residual looked state-independent.
    std::optional<double> refined_min;
};

struct ObstructionVerdict {
    Theorem theorem = Theorem::T3;
    Outcome outcome = Outcome::Inconclusive;
    std::string region;
    std::string witness_field;
    Vec witness_direction;
    std::optional<SolvabilityResult> solution;
    ResidualStats residuals;
    std::size_t sampled_points = 0;
    std::vector<RungResult> ladder;
    std::vector<std::string> notes;
};

struct SearchOptions {
    std::uint64_t seed = 0;
    // Multiplies the boundary and random interior point counts (1 = default density).
    int density = 1;
    int boundary_samples = 200;
};

ObstructionVerdict check_theorem3(const System& sys, const SafeSet& s, const PerturbationField& z,
                                  const SearchOptions& opts = {});

/// Ladder eps = 2^-1 ... 2^-10.
std::vector<double> epsilon_ladder();

ObstructionVerdict check_neighborhood_family(const System& sys, const SafeSet& s, const PerturbationField& zfam,
                                             Theorem theorem, const SearchOptions& opts = {}, double t0 = 0.05);

struct BrockettOptions {
    double ball_radius = 0.1;
    double search_radius = 0.25;
    int rungs = 9;
    std::uint64_t seed = 0;
};

ObstructionVerdict brockett_check(const System& sys, const Vec& xstar, const BrockettOptions& opts = {});

/// -0.1 grad h, -grad h, 0, and the families eps e_i.
std::vector<PerturbationField> candidate_perturbations(const SafeSet& s);

}  // namespace cbflab
