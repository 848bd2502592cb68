#pragma once

#include <cmath>
#include <random>
#include <string>

#include "cbflab/dsl.hpp"

namespace testing {

// Random polynomial/trig expression text over x1..x<nvars>. At most one power node per
// root-to-leaf path: nested cubes reach degree 27+ and sin(x^18) oscillates faster than
// a 1e-5 central difference can resolve, which tests the oracle rather than the derivative.
inline std::string random_expression(std::mt19937_64& rng, int depth, int nvars, bool allow_pow = true) {
    std::uniform_int_distribution<int> pick(0, 9);
    std::uniform_int_distribution<int> var(1, nvars);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    auto leaf = [&] {
        if (pick(rng) < 3) return std::to_string(coef(rng));
        return "x" + std::to_string(var(rng));
    };
    if (depth == 0) return leaf();
    int op = pick(rng);
    if (!allow_pow && (op == 2 || op == 3)) op = 9;
    const bool pow_below = allow_pow && op != 2 && op != 3;
    const std::string a = random_expression(rng, depth - 1, nvars, pow_below);
    switch (op) {
        case 0: return "sin(" + a + ")";
        case 1: return "cos(" + a + ")";
        case 2: return "(" + a + ")^2";
        case 3: return "(" + a + ")^3";
        case 4: return "-(" + a + ")";
        case 5: return "exp(0.3*sin(" + a + "))";
        case 6: return "(" + a + ") * (" + random_expression(rng, depth - 1, nvars, pow_below) + ")";
        case 7: return "(" + a + ") - (" + random_expression(rng, depth - 1, nvars, pow_below) + ")";
        case 8: return "(" + a + ") / (2 + (" + random_expression(rng, depth - 1, nvars, pow_below) + ")^2)";
        default: return "(" + a + ") + (" + random_expression(rng, depth - 1, nvars, pow_below) + ")";
    }
}

struct FdComparison {
    bool resolved;  // central differences at h and h/2 agree, so the oracle itself is trustworthy
    bool agrees;
};

// Symbolic derivative against a central difference with step 1e-5 * (1 + |x|).
inline FdComparison compare_derivative(const cbflab::Expression& e, const cbflab::Expression& de, const cbflab::Binding& b,
                                       const std::string& v) {
    const double x = b.at(v);
    auto central = [&](double step) {
        cbflab::Binding hi = b, lo = b;
        hi[v] = x + step;
        lo[v] = x - step;
        return (e.eval(hi) - e.eval(lo)) / (2.0 * step);
    };
    const double step = 1e-5 * (1.0 + std::abs(x));
    const double fd = central(step);
    const double d = de.eval(b);
    const double tol = 1e-6 * std::abs(d) + 1e-9 * (1.0 + std::abs(e.eval(b)));
    // Truncation error scales with h^2, so fd(h) - fd(h/2) is about 3/4 of the error at h.
    const bool resolved = std::abs(fd - central(0.5 * step)) <= 0.5 * tol;
    return {resolved, std::abs(d - fd) <= tol};
}

}  // namespace testing
