#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cbflab/alpha.hpp"
#include "cbflab/geometry.hpp"
#include "cbflab/system.hpp"

namespace cbflab {

class SynthesisError : public std::runtime_error {
public:
    enum class Kind { Infeasible, Degenerate, StrictnessFailure, CoverageHole, Unsupported };

    SynthesisError(Kind kind, const std::string& what, Vec witness = {})
        : std::runtime_error(what), kind_(kind), witness_(std::move(witness)) {}
    Kind kind() const { return kind_; }
    const Vec& witness() const { return witness_; }

private:
    Kind kind_;
    Vec witness_;
};

/// Pointwise min |u - nominal(p)|^2 s.t. dh.F(p,u) >= -alpha(h(p)); FullSpace or Box inputs.
Controller qp_filter(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha, const Controller& nominal);

struct Patch {
    Vec center;
    double radius = 0.0;
    Vec input;
    double margin = 0.0;  // dh.F + alpha(h) at the center
};

struct CoverOptions {
    double margin = 1e-3;  // m0
    double t0 = 0.05;      // cover the flow-out neighborhood h >= -t0
    int max_cells = 4;     // radius cap in grid cells
    int check_points = 50;
    std::uint64_t seed = 0;
};

/// dh.F(p,u) + alpha(h(p)).
double cbf_slack(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha, const Vec& p, const Vec& u);

/// Input maximizing the slack over the input set (regularized to u = G^T grad h for FullSpace).
Vec margin_maximizing_input(const ControlAffineSystem& sys, const SafeSet& s, const Vec& p);

std::vector<Patch> build_local_cover(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha,
                                     const CoverOptions& opts = {});

/// psi(s) = exp(-1 / (1 - s^2)) for |s| < 1, else 0.
double bump(double s);

class BlendedController {
public:
    explicit BlendedController(std::vector<Patch> patches);

    Vec evaluate(const Vec& p) const;
    int input_dim() const { return m_; }
    const std::vector<Patch>& patches() const { return patches_; }

    /// Normalized weights of the patches whose support contains p.
    std::vector<std::pair<std::size_t, double>> weights(const Vec& p) const;
    bool covered(const Vec& p) const { return !weights(p).empty(); }

    std::string profile() const { return "exp(-1/(1-s^2))"; }
    std::string normalization() const { return "divide by weight sum"; }

private:
    std::vector<std::size_t> nearby(const Vec& p) const;

    std::vector<Patch> patches_;
    int m_ = 0;
    double cell_ = 1.0;
    std::vector<std::pair<std::vector<long>, std::size_t>> grid_;  // sorted (cell key, patch index)
};

std::shared_ptr<const BlendedController> blend(std::vector<Patch> patches);

struct StrictReport {
    bool passed = false;
    std::size_t samples = 0;
    double min_slack = 0.0;
    Vec witness;
    std::size_t uncovered = 0;
    double max_weight_error = 0.0;     // |sum of weights - 1|
    double min_blend_gap = 0.0;        // slack(kappa) - min active patch slack, >= -1e-12 expected
    double t0 = 0.0;
};

/// Samples C~ = { h >= -t0 } (plus boundary points of C) and checks dh.F(p, k(p)) + alpha(h(p)) > 0.
StrictReport verify_strict(const ControlAffineSystem& sys, const SafeSet& s, const AlphaFunction& alpha,
                           const Controller& k, double t0 = 0.05, std::size_t samples = 10000, std::uint64_t seed = 0);

}  // namespace cbflab
