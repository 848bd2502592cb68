#pragma once

#include <array>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbflab/alpha.hpp"
#include "cbflab/geometry.hpp"
#include "cbflab/system.hpp"

namespace cbflab {

class FlowError : public std::runtime_error {
public:
    enum class Kind { StepUnderflow, BlowUp, DomainExit, Precondition, CriticalBand, IdentityViolation, Hypothesis, ChiMismatch };

    FlowError(Kind kind, const std::string& what, Vec witness = {}, double time = std::numeric_limits<double>::quiet_NaN())
        : std::runtime_error(what), kind_(kind), witness_(std::move(witness)), time_(time) {}
    Kind kind() const { return kind_; }
    const Vec& witness() const { return witness_; }
    double time() const { return time_; }

private:
    Kind kind_;
    Vec witness_;
    double time_;
};

struct IntegratorOptions {
    double rtol = 1e-9;
    double atol = 1e-12;
    // > 0 switches to fixed steps of this size (same Dormand-Prince tableau, no error control).
    double fixed_step = 0.0;
    double max_step = std::numeric_limits<double>::infinity();
    std::size_t max_steps = 2'000'000;
    // Set to stop (or, with exit_is_error, fail) when the state leaves the box.
    const BoundingBox* domain = nullptr;
    bool exit_is_error = false;
};

/// Accepted steps of a Dormand-Prince 5(4) integration with 4th-order dense output.
class Trajectory {
public:
    const std::vector<double>& times() const { return t_; }
    const std::vector<Vec>& states() const { return x_; }
    std::size_t accepted() const { return t_.empty() ? 0 : t_.size() - 1; }
    std::size_t rejected() const { return rejected_; }
    bool exited_domain() const { return exited_; }
    double end_time() const { return t_.back(); }
    const Vec& end_state() const { return x_.back(); }

    /// Dense-output state at time t inside the covered interval.
    Vec at(double t) const;

private:
    friend Trajectory integrate(const VectorField&, const Vec&, double, const IntegratorOptions&);

    std::vector<double> t_;
    std::vector<Vec> x_;
    std::vector<std::array<Vec, 5>> dense_;
    std::size_t rejected_ = 0;
    bool exited_ = false;
};

Trajectory integrate(const VectorField& x, const Vec& p0, double t_end, const IntegratorOptions& opts = {});

std::string trajectory_csv(const Trajectory& traj, const SafeSet* s = nullptr);

struct InvarianceReport {
    bool passed = false;
    double min_h = 0.0;
    std::size_t trajectories = 0;
    std::size_t failures = 0;
    Vec witness_start;
    double witness_time = 0.0;
    std::optional<Trajectory> witness;
    std::vector<std::string> errors;
};

/// Integrates from boundary samples and interior grid points for horizon T; pass iff min h >= -1e-6.
InvarianceReport verify_forward_invariance(const VectorField& x, const SafeSet& s, int initial_count, double horizon);

struct StrictEntryReport {
    bool passed = false;
    double min_h = 0.0;
    std::size_t samples = 0;
    Vec witness;
    double witness_time = 0.0;
};

StrictEntryReport strict_entry_check(const VectorField& x, const SafeSet& s, double horizon, int boundary_count = 100);

struct FlowOutSet {
    double t0 = 0.0;
    double t1 = 0.0;
    std::vector<Vec> boundary_points;
    std::vector<Vec> boundary_image;
    double max_identity_error = 0.0;
    Vec worst_sample;
    SafeSet effective;  // barrier h + t0
};

/// Y = -grad h / |grad h|^2, along which h(phi_t(p)) = h(p) - t.
VectorField flow_out_field(const SafeSet& s);

FlowOutSet flow_out(const SafeSet& s, double t0, double t1, int boundary_count = 200);

struct Lemma1Report {
    bool passed = false;
    double band_min_slack = 0.0;  // min of dh.X + alpha(h) over the band
    int chi_c = 0;
    int chi_tilde = 0;
    double min_inward = 0.0;      // min dh.X over the boundary image
    double max_identity_error = 0.0;
    std::size_t band_samples = 0;
    std::size_t image_samples = 0;
};

Lemma1Report verify_lemma1(const SafeSet& s, const VectorField& x, const AlphaFunction& alpha, double t0);

}  // namespace cbflab
