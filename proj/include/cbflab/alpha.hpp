#pragma once

#include <string>

#include "cbflab/dsl.hpp"

namespace cbflab {

/// Extended class-K_inf function: strictly increasing with alpha(0) = 0.
class AlphaFunction {
public:
    enum class Kind { Linear, Cubic, User };

    static AlphaFunction linear(double c);
    static AlphaFunction cubic(double c);
    /// Expression in the variable `r`; validated by sampling.
    static AlphaFunction user(const Expression& e);

    double operator()(double r) const;
    Kind kind() const { return kind_; }
    double coefficient() const { return c_; }
    std::string describe() const;

private:
    AlphaFunction(Kind k, double c) : kind_(k), c_(c) {}

    Kind kind_;
    double c_;
    Expression expr_;
    CompiledExpr compiled_;
};

}  // namespace cbflab
