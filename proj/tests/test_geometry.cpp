#include <doctest.h>

#include <cmath>
#include <functional>
#include <queue>

#include "cbflab/geometry.hpp"
#include "support.hpp"

using namespace cbflab;
using testing::vec;

namespace {

// Independent 2D oracle: the union of closed cells has chi = components - holes.
// Included cells touch through vertices (8-neighbours); the complement is open, so
// its pieces connect only through shared edges (4-neighbours).
int brute_force_chi_2d(const std::string& h_text, double half, int res) {
    const Expression h = parse_expr(h_text);
    const double step = 2.0 * half / res;
    auto hv = [&](int i, int j) { return h.eval({{"x1", -half + i * step}, {"x2", -half + j * step}}); };
    const int w = res + 2;  // one padding ring of excluded cells
    std::vector<int> in(static_cast<std::size_t>(w * w), 0);
    for (int i = 0; i < res; ++i) {
        for (int j = 0; j < res; ++j) {
            in[static_cast<std::size_t>((i + 1) * w + j + 1)] =
                hv(i, j) >= 0 && hv(i + 1, j) >= 0 && hv(i, j + 1) >= 0 && hv(i + 1, j + 1) >= 0;
        }
    }
    auto count = [&](int value, bool diagonal) {
        std::vector<int> seen(in.size(), 0);
        int comps = 0;
        for (int s = 0; s < w * w; ++s) {
            if (in[static_cast<std::size_t>(s)] != value || seen[static_cast<std::size_t>(s)]) continue;
            ++comps;
            std::queue<int> q;
            q.push(s);
            seen[static_cast<std::size_t>(s)] = 1;
            while (!q.empty()) {
                const int c = q.front();
                q.pop();
                const int ci = c / w, cj = c % w;
                for (int di = -1; di <= 1; ++di) {
                    for (int dj = -1; dj <= 1; ++dj) {
                        if ((di == 0 && dj == 0) || (!diagonal && di != 0 && dj != 0)) continue;
                        const int ni = ci + di, nj = cj + dj;
                        if (ni < 0 || nj < 0 || ni >= w || nj >= w) continue;
                        const auto idx = static_cast<std::size_t>(ni * w + nj);
                        if (in[idx] == value && !seen[idx]) {
                            seen[idx] = 1;
                            q.push(ni * w + nj);
                        }
                    }
                }
            }
        }
        return comps;
    };
    return count(1, true) - (count(0, false) - 1);
}

}  // namespace

TEST_CASE("regular value check") {
    const auto disk = testing::box_set("1 - x1^2 - x2^2", 2, 2.0);
    const auto r = regular_value_check(disk);
    CHECK(r.passed);
    CHECK(r.min_grad_norm == doctest::Approx(2.0).epsilon(1e-8));
    const auto slab = testing::box_set("x1", 2, 2.0);
    CHECK(regular_value_check(slab).min_grad_norm == doctest::Approx(1.0));
    // Zero set is the single critical point at the origin; the grid hits it exactly.
    const auto point = testing::box_set("-x1^2 - x2^2", 2, 2.0);
    bool failed = false;
    try {
        failed = !regular_value_check(point).passed;
    } catch (const GeometryError&) {
        failed = true;
    }
    CHECK(failed);
    CHECK_THROWS_AS(regular_value_check(testing::box_set("-1 - x1^2", 2, 2.0)), GeometryError);
}

TEST_CASE("euler characteristics of the geometry fixtures") {
    CHECK(euler_characteristic(build_cubical_complex(testing::box_set("1 - x1^2 - x2^2", 2, 2.0))) == 1);
    CHECK(euler_characteristic(build_cubical_complex(testing::box_set("0.0625 - (sqrt(x1^2 + x2^2) - 0.75)^2", 2, 1.5))) == 0);
    CHECK(euler_characteristic(build_cubical_complex(testing::box_set("4*(x1^2 + x2^2 - 0.25)*(1 - x1^2 - x2^2)", 2, 1.5))) == 0);
    const auto ball = build_cubical_complex(testing::box_set("1 - x1^2 - x2^2 - x3^2", 3, 1.5, 32));
    CHECK(euler_characteristic(ball) == 1);
    CHECK(euler_characteristic(boundary_complex(ball)) == 2);
    CHECK(euler_characteristic(boundary_complex(build_cubical_complex(testing::unit_disk()))) == 0);
}

TEST_CASE("euler characteristic matches the brute-force 2D oracle") {
    const std::vector<std::pair<std::string, int>> sets{
        {"1 - x1^2 - x2^2", 1},
        {"0.0625 - (sqrt(x1^2 + x2^2) - 0.75)^2", 0},
        {"-((x1 - 0.5)^2 + x2^2 - 0.16)*((x1 + 0.5)^2 + x2^2 - 0.16)", 2},
        {"(1 - x1^2 - x2^2)*((x1 - 0.5)^2 + x2^2 - 0.04)*((x1 + 0.5)^2 + x2^2 - 0.04)", -1},
        {"1 - x2^2", 1},
    };
    for (const auto& [h, chi] : sets) {
        CAPTURE(h);
        for (int res : {32, 64, 128}) {
            const auto s = testing::box_set(h, 2, 1.5, res);
            const int got = euler_characteristic(build_cubical_complex(s, false));
            CHECK(got == brute_force_chi_2d(h, 1.5, res));
            CHECK(got == chi);
        }
    }
}

TEST_CASE("cubical complexes are closed and count cells consistently") {
    const auto k = build_cubical_complex(testing::unit_disk(16), false);
    // A closed 2D complex: every edge has 2 vertices and every square 4 edges.
    CHECK(k.count(2) == static_cast<long>(k.top_cell_count()));
    CHECK(k.count(1) >= 2 * k.count(2));
    CHECK(complex_counts_csv(k).find("euler,1") != std::string::npos);
    CHECK_THROWS_AS(build_cubical_complex(testing::box_set("1 - x1^2 - x2^2 - x3^2 - x4^2", 4, 1.5, 8)), GeometryError);
}

TEST_CASE("under-resolved sets are flagged") {
    // Two disks separated by a gap narrower than a coarse cell.
    const auto s = testing::box_set("-((x1 - 0.52)^2 + x2^2 - 0.25)*((x1 + 0.52)^2 + x2^2 - 0.25)", 2, 1.5, 6);
    bool flagged = false;
    try {
        build_cubical_complex(s);
    } catch (const GeometryError& e) {
        flagged = e.kind() == GeometryError::Kind::Underresolved;
    }
    CHECK(flagged);
}

TEST_CASE("boundary samples lie on the zero set") {
    for (const Vec& p : boundary_sample(testing::unit_disk(), 300)) {
        CHECK(std::abs(p.norm() - 1.0) <= 1e-9);
    }
    const auto half = testing::box_set("x1", 2, 2.0);
    const auto pts = boundary_sample(half, 50);
    CHECK(!pts.empty());
    for (const Vec& p : pts) CHECK(std::abs(p[0]) <= 1e-10);
    CHECK_THROWS_AS(boundary_sample(testing::box_set("-1 - x1^2", 2, 2.0), 10), GeometryError);
    const auto ball = testing::box_set("1 - x1^2 - x2^2 - x3^2", 3, 1.5, 24);
    const auto s = boundary_sample(ball, 200);
    CHECK(s.size() == 200);
    for (const Vec& p : s) {
        CHECK(std::abs(ball.h(p)) <= 1e-10);
        CHECK(ball.grad(p).norm() >= 1e-4);
    }
}

TEST_CASE("boundary classification") {
    const auto disk = testing::unit_disk();
    const auto pts = boundary_sample(disk, 200);
    const auto in = classify_boundary(disk, testing::field({"-x1", "-x2"}), pts);
    CHECK(in.summary == BoundarySummary::AllInward);
    for (const auto& c : in.points) CHECK(c.value == doctest::Approx(2.0).epsilon(1e-8));
    const auto rot = classify_boundary(disk, testing::field({"-x2", "x1"}), pts);
    CHECK(rot.summary == BoundarySummary::InwardOrTangent);
    CHECK(rot.tangent == pts.size());
    const auto out = classify_boundary(disk, testing::field({"x1", "x2"}), pts);
    CHECK(out.summary == BoundarySummary::SomeOutward);
    for (const auto& c : out.points) CHECK(c.value == doctest::Approx(-2.0).epsilon(1e-8));
}

TEST_CASE("classification is antisymmetric and scale invariant") {
    const auto disk = testing::unit_disk();
    const auto pts = boundary_sample(disk, 150);
    const auto x = testing::field({"-x1 + 0.7*x2^2", "-x2 + sin(3*x1)"});
    const auto a = classify_boundary(disk, x, pts);
    const auto b = classify_boundary(disk, x.scaled(-1.0), pts);
    const auto c = classify_boundary(disk, x.scaled(1e3), pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK((a.points[i].label == BoundaryLabel::Inward) == (b.points[i].label == BoundaryLabel::Outward));
        CHECK(a.points[i].label == c.points[i].label);
    }
}

TEST_CASE("compactness in the bounding box") {
    CHECK(check_compact(testing::unit_disk()).compact);
    const auto slab = check_compact(testing::box_set("1 - x2^2", 2, 2.0));
    CHECK_FALSE(slab.compact);
    CHECK(slab.max_face_value >= 0.0);
}

TEST_CASE("sampling helpers respect the level") {
    const auto disk = testing::unit_disk();
    for (const Vec& p : random_points(disk, 500, 4, -0.2)) CHECK(disk.h(p) >= -0.2);
    for (const Vec& p : grid_points(disk, 16)) CHECK(disk.h(p) >= 0.0);
    CHECK(random_points(disk, 10, 1) == random_points(disk, 10, 1));
    CHECK(points_csv({vec({1, 0})}, &disk).find("x1,x2,h") != std::string::npos);
}
