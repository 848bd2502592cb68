#include <doctest.h>

#include <cmath>
#include <random>

#include "cbflab/zeros.hpp"
#include "support.hpp"

using namespace cbflab;
using testing::vec;

namespace {

SubBox square(double a) { return {Vec::Constant(2, -a), Vec::Constant(2, a)}; }

}  // namespace

TEST_CASE("degree of linear fields on a square") {
    CHECK(topological_degree(testing::field({"-x1", "-x2"}), square(1)).degree == 1);
    CHECK(topological_degree(testing::field({"x1", "x2"}), square(1)).degree == 1);
    CHECK(topological_degree(testing::field({"x1", "-x2"}), square(1)).degree == -1);
    CHECK(topological_degree(testing::field({"1", "0"}), square(1)).degree == 0);
    // z^2 has a double zero at the origin.
    CHECK(topological_degree(testing::field({"x1^2 - x2^2", "2*x1*x2"}), square(1)).degree == 2);
    const SubBox off{vec({0.5, 0.5}), vec({1, 1})};
    CHECK(topological_degree(testing::field({"-x1", "-x2"}), off).degree == 0);
    CHECK_THROWS_AS(topological_degree(testing::field({"x1", "x2"}), SubBox{vec({0, -1}), vec({1, 1})}), ZeroError);
}

TEST_CASE("degree in one and three dimensions") {
    const VectorField neg = VectorField::from_expressions(parse_all({"-x1"}));
    CHECK(topological_degree(neg, SubBox{vec({-1}), vec({1})}).degree == -1);
    const SubBox cube{Vec::Constant(3, -1), Vec::Constant(3, 1)};
    CHECK(topological_degree(testing::field({"x1", "x2", "x3"}), cube).degree == 1);
    CHECK(topological_degree(testing::field({"-x1", "-x2", "-x3"}), cube).degree == -1);
    CHECK(topological_degree(testing::field({"x1", "-x2", "x3"}), cube).degree == -1);
    CHECK(topological_degree(testing::field({"0", "0", "1"}), cube).degree == 0);
}

TEST_CASE("degree is additive over a split") {
    const auto x = testing::field({"(x1 - 0.3)*(x1 + 0.4) - x2", "x2 + 0.1*x1"});
    const SubBox whole{vec({-1, -1}), vec({1, 1})};
    const SubBox left{vec({-1, -1}), vec({-0.05, 1})};
    const SubBox right{vec({-0.05, -1}), vec({1, 1})};
    const int d = topological_degree(x, whole).degree;
    CHECK(topological_degree(x, left).degree + topological_degree(x, right).degree == d);
}

TEST_CASE("degree survives small perturbations") {
    const auto x = testing::field({"-x1 + 0.3*x2^2", "-x2 + 0.2*x1*x2"});
    const auto w = testing::field({"cos(3*x2)", "sin(2*x1)"});
    const auto base = topological_degree(x, square(0.8));
    const double eps = 0.1 * base.boundary_min_norm / std::sqrt(2.0);
    CHECK(topological_degree(x + w.scaled(eps), square(0.8)).degree == base.degree);
}

TEST_CASE("zeros of fields on the disk") {
    const auto disk = testing::unit_disk();
    auto one_at_origin = [&](const std::vector<std::string>& f) {
        const auto z = locate_zeros(testing::field(f), disk);
        REQUIRE(z.size() == 1);
        CHECK(z[0].point.norm() <= 1e-8);
        CHECK(z[0].residual <= 1e-8);
    };
    one_at_origin({"-x1", "-x2"});
    one_at_origin({"-x2 - 0.1*x1", "x1 - 0.1*x2"});
    // Continuous analogue of x - x/|x| restricted to radius 0.9: x(|x| - 1).
    const auto r09 = testing::box_set("0.81 - x1^2 - x2^2", 2, 1.2);
    const auto z = locate_zeros(testing::field({"x1*(sqrt(x1^2 + x2^2) - 1)", "x2*(sqrt(x1^2 + x2^2) - 1)"}), r09);
    REQUIRE(z.size() == 1);
    CHECK(z[0].point.norm() <= 1e-8);
}

TEST_CASE("zero certificates reproduce their residuals") {
    const auto disk = testing::unit_disk();
    const auto x = testing::field({"(x1 - 0.2)*(x1 + 0.5) - x2", "x2 - 0.3*x1"});
    const auto search = locate_zeros_detailed(x, disk);
    CHECK(search.certificates.size() == 2);
    for (const auto& c : search.certificates) {
        CHECK(c.residual <= search.tol_zero);
        CHECK(std::abs(x(c.point).norm() - c.residual) <= 1e-12);
        CHECK(disk.h(c.point) >= 0.0);
    }
}

TEST_CASE("zeros on a continuum are marked non-isolated") {
    // Vanishes on the whole circle of radius 0.5.
    const auto x = testing::field({"x1*(x1^2 + x2^2 - 0.25)", "x2*(x1^2 + x2^2 - 0.25)"});
    const auto search = locate_zeros_detailed(x, testing::unit_disk(32));
    bool saw_continuum = false;
    for (const auto& c : search.certificates) {
        if (std::abs(c.point.norm() - 0.5) < 1e-6) saw_continuum = saw_continuum || !c.isolated;
    }
    CHECK(saw_continuum);
}

TEST_CASE("one dimensional zeros by bisection") {
    const SafeSet interval(parse_expr("1 - x1^2"), {vec({-1.5}), vec({1.5})}, 64);
    const auto z = locate_zeros(VectorField::from_expressions(parse_all({"x1 - 0.3"})), interval);
    REQUIRE(z.size() == 1);
    CHECK(z[0].point[0] == doctest::Approx(0.3).epsilon(1e-10));
    CHECK(z[0].method == ZeroMethod::SignChange);
}

TEST_CASE("perturbation sequence") {
    const auto disk = testing::unit_disk();
    const auto y = testing::field({"-x1", "-x2"});
    const auto seq = perturbation_sequence_zero(testing::field({"-x2", "x1"}), y, disk);
    CHECK(seq.zeros.size() == default_deltas().size());
    for (const auto& z : seq.zeros) CHECK(z.point.norm() <= 1e-8);
    CHECK(seq.limit.norm() <= 1e-8);
    CHECK(seq.limit_residual <= 1e-8);
    const auto zero = perturbation_sequence_zero(testing::field({"0", "0"}), y, disk);
    CHECK(zero.limit.norm() <= 1e-8);
    CHECK_THROWS_AS(perturbation_sequence_zero(testing::field({"x1", "x2"}), y, disk), ZeroError);
}

TEST_CASE("Poincare-Hopf pipeline") {
    const auto disk = testing::unit_disk();
    const auto direct = verify_poincare_hopf(testing::field({"-x1", "-x2"}), disk);
    CHECK(direct.chi == 1);
    CHECK(direct.path == "direct");
    REQUIRE(direct.certificates.size() == 1);
    CHECK_FALSE(direct.contradiction);

    const auto tangent = verify_poincare_hopf(testing::field({"-x2", "x1"}), disk);
    CHECK(tangent.path == "perturbation");
    REQUIRE(tangent.sequence.has_value());
    CHECK(tangent.sequence->limit_residual <= 1e-6);
    CHECK(tangent.certificates.size() == 1);

    const auto annulus = testing::box_set("0.0625 - (sqrt(x1^2 + x2^2) - 0.75)^2", 2, 1.5);
    const auto silent = verify_poincare_hopf(testing::field({"1", "0"}), annulus);
    CHECK(silent.chi == 0);
    CHECK_FALSE(silent.hypotheses_hold);
    CHECK(silent.certificates.empty());
}

TEST_CASE("random inward polynomial fields always have a certified zero") {
    const auto disk = testing::unit_disk();
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 20; ++i) {
        const auto f = testing::random_inward_field(rng);
        const auto r = verify_poincare_hopf(testing::field(f), disk, 200);
        CAPTURE(f[0]);
        CHECK(r.hypotheses_hold);
        REQUIRE_FALSE(r.certificates.empty());
        CHECK(r.certificates.front().residual <= 1e-8);
    }
}

TEST_CASE("default inward perturbation points inward") {
    const auto disk = testing::unit_disk();
    const auto c = classify_boundary(disk, default_inward_perturbation(disk), boundary_sample(disk, 100));
    CHECK(c.summary == BoundarySummary::AllInward);
}
