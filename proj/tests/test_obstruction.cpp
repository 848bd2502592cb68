#include <doctest.h>

#include <random>

#include "cbflab/obstruction.hpp"
#include "support.hpp"

using namespace cbflab;
using testing::vec;

namespace {

ControlAffineSystem nonholonomic() {
    return testing::affine({"0", "0", "0"}, {{"1", "0", "x2"}, {"0", "1", "-x1"}}, InputSet::full(2));
}

ControlAffineSystem disk_system(InputSet u) { return testing::affine({"x1", "x2"}, {{"1", "0"}, {"0", "1"}}, std::move(u)); }

ControlAffineSystem satellite() {
    return testing::affine({"0", "0", "0"}, {{"1", "0", "0"}, {"0", "1", "0"}}, InputSet::full(2));
}

PerturbationField pf(const std::string& name, const std::vector<std::string>& z, const std::string& scale = "") {
    return PerturbationField{name, parse_all(z), scale, false};
}

// Constant-matrix affine system p' = c + G u, written as expressions.
ControlAffineSystem constant_system(const Vec& c, const Mat& g) {
    std::vector<std::string> drift;
    for (int i = 0; i < c.size(); ++i) drift.push_back(std::to_string(c[i]));
    std::vector<std::vector<std::string>> cols;
    for (int j = 0; j < g.cols(); ++j) {
        std::vector<std::string> col;
        for (int i = 0; i < g.rows(); ++i) col.push_back(std::to_string(g(i, j)));
        cols.push_back(col);
    }
    return testing::affine(drift, cols, InputSet::full(static_cast<int>(g.cols())));
}

}  // namespace

TEST_CASE("span solvability") {
    const auto a = span_solvability(nonholonomic(), vec({0, 0, 0}), vec({0, 0, 0.1}));
    CHECK(a.status == SolveStatus::Unsolvable);
    CHECK(a.residual == doctest::Approx(0.1));
    const auto b = span_solvability(nonholonomic(), vec({0, 0, 0}), vec({0.3, 0.4, 0}));
    CHECK(b.status == SolveStatus::Solvable);
    CHECK(b.u.isApprox(vec({0.3, 0.4})));
    CHECK(b.residual <= 1e-15);
    for (const Vec& p : {vec({0.1, 0.2, 0.3}), vec({-0.8, 0.0, 0.5})}) {
        const auto s = span_solvability(satellite(), p, vec({0, 0, 0.125}));
        CHECK(s.status == SolveStatus::Unsolvable);
        CHECK(std::abs(s.residual - 0.125) <= 1e-12);
    }
    CHECK_THROWS(span_solvability(disk_system(InputSet::ball(2, 1.0)), vec({0, 0}), vec({0, 0})));
}

TEST_CASE("residual classification has an inconclusive band") {
    const double tol = solve_tolerance(vec({0, 0}));
    CHECK(classify_residual(0.5 * tol, tol) == SolveStatus::Solvable);
    CHECK(classify_residual(10 * tol, tol) == SolveStatus::Inconclusive);
    CHECK(classify_residual(1000 * tol, tol) == SolveStatus::Unsolvable);
}

TEST_CASE("span solvability agrees with a rank oracle") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> dim(1, 4);
    int checked = 0;
    for (int i = 0; i < 300; ++i) {
        const int n = dim(rng) + 1, m = dim(rng);
        const int r = std::uniform_int_distribution<int>(0, std::min(n, m))(rng);
        const Mat gm = Mat::NullaryExpr(n, r, [&] { return g(rng); }) * Mat::NullaryExpr(r, m, [&] { return g(rng); });
        const auto sys = constant_system(Vec::NullaryExpr(n, [&] { return g(rng); }), gm);
        const Mat gu = sys.input_matrix(Vec::Zero(n));
        const Vec c = sys.drift(Vec::Zero(n));
        Eigen::JacobiSVD<Mat> svd(gu, Eigen::ComputeFullU);
        const auto& sv = svd.singularValues();
        int rank = 0;
        for (int k = 0; k < sv.size(); ++k) rank += sv[k] > 1e-10 * std::max(1.0, sv[0]);
        Vec z = c + gu * Vec::NullaryExpr(m, [&] { return g(rng); });
        if (i % 2 == 1) {
            if (rank == n) continue;
            z += std::uniform_real_distribution<double>(1e-3, 1.0)(rng) * svd.matrixU().col(n - 1);
        }
        // Oracle: distance from z - c to the column space spanned by the leading left singular vectors.
        const Mat u = svd.matrixU().leftCols(rank);
        const double truth = ((z - c) - u * (u.transpose() * (z - c))).norm();
        const auto res = span_solvability(sys, Vec::Zero(n), z);
        if (truth <= 1e-12) CHECK(res.status == SolveStatus::Solvable);
        if (truth >= 1e-3) CHECK(res.status == SolveStatus::Unsolvable);
        ++checked;
    }
    CHECK(checked > 200);
}

TEST_CASE("constrained solvability") {
    const System sphere = disk_system(InputSet::sphere(2, 1.0));
    const auto a = constrained_solvability(sphere, vec({1, 0}), vec({1, 0}));
    CHECK(a.status == SolveStatus::Unsolvable);
    CHECK(a.residual == doctest::Approx(1.0).epsilon(1e-9));
    const auto b = constrained_solvability(sphere, vec({1, 0}), vec({1, 1}));
    CHECK(b.status == SolveStatus::Solvable);
    CHECK(b.u.isApprox(vec({0, 1}), 1e-8));
    const System pts = testing::affine({"0", "0"}, {{"1", "0"}, {"0", "1"}}, InputSet::points({vec({0, 0})}));
    CHECK(constrained_solvability(pts, vec({0.3, 0.3}), vec({0, 0})).status == SolveStatus::Solvable);
}

TEST_CASE("solvability is monotone in the input set") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(-1.5, 1.5);
    const System small = disk_system(InputSet::ball(2, 0.5));
    const System large = disk_system(InputSet::ball(2, 1.0));
    for (int i = 0; i < 100; ++i) {
        const Vec p = vec({d(rng), d(rng)}), z = vec({d(rng), d(rng)});
        if (constrained_solvability(small, p, z).status == SolveStatus::Solvable) {
            CHECK(constrained_solvability(large, p, z).status == SolveStatus::Solvable);
        }
    }
}

TEST_CASE("perturbation obstruction on the unit-disk system") {
    const auto disk = testing::unit_disk();
    const auto sphere = check_theorem3(disk_system(InputSet::sphere(2, 1.0)), disk, pf("identity", {"x1", "x2"}));
    CHECK(sphere.outcome == Outcome::Violated);
    CHECK(sphere.residuals.min >= 0.999);
    const auto ball = check_theorem3(disk_system(InputSet::ball(2, 1.0)), disk, pf("identity", {"x1", "x2"}));
    CHECK(ball.outcome == Outcome::NotViolated);
    REQUIRE(ball.solution.has_value());
    CHECK(ball.solution->u.norm() <= 1e-12);
    // Denser sampling keeps the violation.
    SearchOptions dense;
    dense.density = 5;
    CHECK(check_theorem3(disk_system(InputSet::sphere(2, 1.0)), disk, pf("identity", {"x1", "x2"}), dense).outcome ==
          Outcome::Violated);
}

TEST_CASE("perturbation obstruction preconditions") {
    const auto disk = testing::unit_disk();
    const System sys = disk_system(InputSet::sphere(2, 1.0));
    CHECK_THROWS_AS(check_theorem3(sys, disk, pf("inward", {"-x1", "-x2"})), ObstructionError);
    const auto annulus = testing::box_set("0.0625 - (sqrt(x1^2 + x2^2) - 0.75)^2", 2, 1.5);
    const auto silent = check_theorem3(sys, annulus, pf("zero", {"0", "0"}));
    CHECK(silent.outcome == Outcome::Inconclusive);
    const auto slab = testing::box_set("1 - x2^2", 2, 2.0);
    CHECK_THROWS_AS(check_theorem3(sys, slab, pf("zero", {"0", "0"})), ObstructionError);
    const System nh = nonholonomic();
    const auto ball = testing::box_set("1 - x1^2 - x2^2 - x3^2", 3, 1.3, 16);
    CHECK(check_theorem3(nh, ball, pf("zero", {"0", "0", "0"})).outcome == Outcome::NotViolated);
}

TEST_CASE("neighbourhood families on the satellite") {
    const auto ball = testing::box_set("1 - x1^2 - x2^2 - x3^2", 3, 1.3, 16);
    for (Theorem t : {Theorem::Cor1, Theorem::T4, Theorem::T5}) {
        const auto v = check_neighborhood_family(satellite(), ball, pf("eps_e3", {"0", "0", "eps"}, "eps"), t);
        CHECK(v.outcome == Outcome::Violated);
        CHECK(v.ladder.size() == epsilon_ladder().size());
        for (const auto& r : v.ladder) {
            CHECK(std::abs(r.residuals.min - r.scale) <= 1e-12);
            REQUIRE(r.refined_min.has_value());
            CHECK(std::abs(*r.refined_min - r.scale) <= 1e-12);
        }
    }
}

TEST_CASE("neighbourhood families that are solvable") {
    const auto disk = testing::unit_disk(32);
    const System si = testing::affine({"0", "0"}, {{"1", "0"}, {"0", "1"}}, InputSet::ball(2, 1.0));
    const auto v = check_neighborhood_family(si, disk, pf("radial", {"eps*x1", "eps*x2"}, "eps"), Theorem::T5);
    CHECK(v.outcome == Outcome::NotViolated);
    const auto zero = check_neighborhood_family(si, disk, pf("zero", {"0*eps", "0"}, "eps"), Theorem::Cor1);
    CHECK(zero.outcome == Outcome::NotViolated);
    CHECK_THROWS_AS(check_neighborhood_family(si, disk, pf("bad", {"1 + eps", "0"}, "eps"), Theorem::Cor1), ObstructionError);
    // Sphere inputs: x + u = eps e1 is solvable on the circle |x - eps e1| = 1.
    const System sphere = disk_system(InputSet::sphere(2, 1.0));
    CHECK(check_neighborhood_family(sphere, disk, pf("e1", {"eps", "0"}, "eps"), Theorem::Cor1).outcome ==
          Outcome::NotViolated);
}

TEST_CASE("Brockett's condition") {
    const System nh = GeneralSystem(3, 2, parse_all({"u1", "u2", "x2*u1 - x1*u2"}), InputSet::full(2));
    const auto v = brockett_check(nh, Vec::Zero(3));
    CHECK(v.outcome == Outcome::Violated);
    CHECK(std::abs(std::abs(v.witness_direction[2]) - 1.0) <= 1e-12);
    for (const auto& r : v.ladder) CHECK(r.residuals.min >= 0.9 * r.scale);
    const System si = testing::affine({"0", "0"}, {{"1", "0"}, {"0", "1"}}, InputSet::full(2));
    CHECK(brockett_check(si, Vec::Zero(2)).outcome == Outcome::NotViolated);
    const System lin = testing::affine({"x2", "0"}, {{"0", "1"}}, InputSet::full(1));
    CHECK(brockett_check(lin, Vec::Zero(2)).outcome == Outcome::NotViolated);
}

TEST_CASE("candidate perturbations") {
    const auto disk = testing::unit_disk();
    const auto c = candidate_perturbations(disk);
    bool neg_grad = false, zero = false, eps_e1 = false;
    for (const auto& p : c) {
        if (p.name == "neg_grad") {
            neg_grad = true;
            CHECK(p.at()(vec({1, 0})).isApprox(vec({2, 0})));
        }
        zero = zero || p.name == "zero";
        eps_e1 = eps_e1 || (p.name == "eps_e1" && p.scale_param == "eps");
    }
    CHECK(neg_grad);
    CHECK(zero);
    CHECK(eps_e1);
}
