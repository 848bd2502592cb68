#include "cbflab/alpha.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cbflab {

AlphaFunction AlphaFunction::linear(double c) {
    if (!(c > 0.0)) throw std::invalid_argument("linear alpha needs c > 0");
    return AlphaFunction(Kind::Linear, c);
}

AlphaFunction AlphaFunction::cubic(double c) {
    if (!(c > 0.0)) throw std::invalid_argument("cubic alpha needs c > 0");
    return AlphaFunction(Kind::Cubic, c);
}

AlphaFunction AlphaFunction::user(const Expression& e) {
    for (const auto& v : e.free_variables()) {
        if (v != "r") throw std::invalid_argument("alpha expression may only use the variable r, found '" + v + "'");
    }
    AlphaFunction a(Kind::User, 1.0);
    a.expr_ = e;
    a.compiled_ = CompiledExpr(e, {"r"});
    if (a(0.0) != 0.0) throw std::invalid_argument("alpha(0) must be exactly 0, got " + std::to_string(a(0.0)));
    double prev = a(-10.0);
    for (int i = 1; i <= 1000; ++i) {
        const double r = -10.0 + 20.0 * i / 1000.0;
        const double v = a(r);
        if (!(v > prev)) {
            throw std::invalid_argument("alpha is not strictly increasing near r = " + std::to_string(r));
        }
        prev = v;
    }
    return a;
}

double AlphaFunction::operator()(double r) const {
    switch (kind_) {
        case Kind::Linear: return c_ * r;
        case Kind::Cubic: return c_ * r * r * r;
        case Kind::User: {
            const double slot[1] = {r};
            return compiled_(slot);
        }
    }
    return 0.0;
}

std::string AlphaFunction::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case Kind::Linear: os << "linear(" << c_ << ")"; break;
        case Kind::Cubic: os << "cubic(" << c_ << ")"; break;
        case Kind::User: os << "user(" << expr_.to_string() << ")"; break;
    }
    return os.str();
}

}  // namespace cbflab
