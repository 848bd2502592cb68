#pragma once

#include <random>
#include <string>
#include <vector>

#include "cbflab/geometry.hpp"
#include "cbflab/system.hpp"

namespace testing {

using cbflab::Vec;

inline Vec vec(std::initializer_list<double> v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

inline cbflab::VectorField field(const std::vector<std::string>& comps) {
    return cbflab::VectorField::from_expressions(cbflab::parse_all(comps));
}

inline cbflab::SafeSet box_set(const std::string& h, int n, double half, int res = 64) {
    return cbflab::SafeSet(cbflab::parse_expr(h), {Vec::Constant(n, -half), Vec::Constant(n, half)}, res);
}

inline cbflab::SafeSet unit_disk(int res = 64) { return box_set("1 - x1^2 - x2^2", 2, 1.5, res); }

inline cbflab::ControlAffineSystem affine(const std::vector<std::string>& drift,
                                          const std::vector<std::vector<std::string>>& inputs, cbflab::InputSet u) {
    std::vector<std::vector<cbflab::Expression>> in;
    for (const auto& col : inputs) in.push_back(cbflab::parse_all(col));
    return cbflab::ControlAffineSystem(cbflab::parse_all(drift), std::move(in), std::move(u));
}

inline std::string fixture(const std::string& name) { return std::string(CBFLAB_FIXTURES) + "/" + name; }

// Polynomial field strictly inward on the unit circle: a contracting radial part scaled
// by (1 + q^2) for a random affine q, plus a random tangential term.
inline std::vector<std::string> random_inward_field(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> c(-1.0, 1.0);
    auto num = [&] { return std::to_string(c(rng)); };
    const std::string pos = "(1 + (" + num() + "*x1 + " + num() + "*x2 + " + num() + ")^2)";
    const std::string tan = "(" + num() + " + " + num() + "*x1*x2 + " + num() + "*x1^2)";
    return {"-x1*" + pos + " - x2*" + tan, "-x2*" + pos + " + x1*" + tan};
}

}  // namespace testing
