#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbflab/alpha.hpp"
#include "cbflab/geometry.hpp"
#include "cbflab/obstruction.hpp"
#include "cbflab/system.hpp"

namespace cbflab {

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& path, const std::string& what)
        : std::runtime_error(path.empty() ? what : path + ": " + what), path_(path) {}
    const std::string& field_path() const { return path_; }

private:
    std::string path_;
};

struct ControllerSpec {
    enum class Kind { Zero, Expression, Qp };
    Kind kind = Kind::Zero;
    std::vector<Expression> outputs;  // Expression: u(x); Qp: nominal(x)
};

struct BrockettSpec {
    Vec xstar;
    double ball_radius = 0.1;
    double search_radius = 0.25;
};

struct RunOptions {
    std::vector<std::string> commands;
    std::uint64_t seed = 0;
    int threads = 1;
    std::string field;  // named field for classify / poincare-hopf / flow commands
    std::string perturbation;  // restrict obstruct-* to one named perturbation
    std::vector<Theorem> family_theorems{Theorem::T4, Theorem::Cor1};
    double horizon = 10.0;
    int trajectories = 100;
    double t0 = 0.2;
    int boundary_samples = 400;
    double margin = 1e-3;
    std::size_t strict_samples = 10000;
    double strict_t0 = 0.05;
};

struct AnalysisConfig {
    std::string source;  // file path or "<string>"
    std::string text;    // raw text, hashed into reports
    std::optional<System> system;
    std::optional<SafeSet> safeset;
    std::optional<AlphaFunction> alpha;
    std::optional<ControllerSpec> controller;
    std::map<std::string, std::vector<Expression>> fields;
    std::vector<PerturbationField> perturbations;
    std::optional<BrockettSpec> brockett;
    RunOptions run;
    std::vector<std::string> warnings;
};

/// Reads the YAML config format documented in the README.
AnalysisConfig load_config(const std::string& path);
AnalysisConfig parse_config(const std::string& text, const std::string& source = "<string>");

/// Closed-loop field of the configured controller, or the named field from `fields`.
VectorField config_field(const AnalysisConfig& cfg, const std::string& name = "");

/// Controller built from the controller block (zero, expression or QP filter).
Controller config_controller(const AnalysisConfig& cfg);

}  // namespace cbflab
