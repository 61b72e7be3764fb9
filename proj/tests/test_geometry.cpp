#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gascn/chamfer.hpp"
#include "gascn/grad_check.hpp"
#include "gascn/icp.hpp"
#include "gascn/kdtree.hpp"
#include "gascn/point_cloud.hpp"
#include "gascn/rng.hpp"
#include "gascn/rotation.hpp"
#include "test_helpers.hpp"

using namespace gascn;
using namespace gascn::geo;
using test_helpers::random_cloud;
using test_helpers::random_unit;

namespace {

// O(n*m) oracle with the same (distance, index) tie rule.
std::vector<std::uint32_t> brute_knn(const std::vector<Vec3>& cloud, const Vec3& q,
                                     std::size_t k) {
    std::vector<std::pair<double, std::uint32_t>> all(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        all[i] = {(cloud[i] - q).norm2(), std::uint32_t(i)};
    }
    std::sort(all.begin(), all.end());
    std::vector<std::uint32_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = all[i].second;
    return out;
}

double brute_chamfer(const PointCloud& a, const PointCloud& b, CdVariant variant) {
    auto dir = [&](const PointCloud& s, const PointCloud& d) {
        double acc = 0.0;
        for (const Vec3& p : s.points) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3& q : d.points) best = std::min(best, (p - q).norm2());
            acc += variant == CdVariant::Squared ? best : std::sqrt(best);
        }
        return acc / double(s.size());
    };
    return dir(a, b) + dir(b, a);
}

}  // namespace

TEST_CASE("knn_search basics", "[geometry]") {
    PointCloud cloud;
    cloud.points = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

    SECTION("coincident query, k=1") {
        PointCloud q;
        q.points = {{1, 0, 0}};
        auto idx = knn_search(cloud, q, 1);
        CHECK(idx[0][0] == 1);
    }

    SECTION("k = m returns every index sorted by distance") {
        PointCloud q;
        q.points = {{0.9, 0, 0}};
        auto idx = knn_search(cloud, q, 4);
        CHECK(idx[0] == std::vector<std::uint32_t>{1, 0, 2, 3});
    }

    SECTION("k too large errors") {
        PointCloud q;
        q.points = {{0, 0, 0}};
        CHECK_THROWS_AS(knn_search(cloud, q, 5), ShapeError);
    }
}

TEST_CASE("knn_search equals brute force on random instances", "[geometry][property]") {
    Rng rng = make_rng(31);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t m = 20 + uniform_index(rng, 480);
        PointCloud cloud = random_cloud(m, rng);
        const std::size_t k = 1 + uniform_index(rng, std::min<std::size_t>(m, 24));
        KdTree tree(cloud.points);
        std::vector<std::uint32_t> idx;
        std::vector<double> d2;
        for (int q = 0; q < 10; ++q) {
            const Vec3 query{uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6),
                             uniform(rng, -0.6, 0.6)};
            tree.knn(query, k, idx, d2);
            CHECK(idx == brute_knn(cloud.points, query, k));
        }
    }

    SECTION("duplicate points: ties break to the lowest index") {
        PointCloud cloud;
        cloud.points = {{0.5, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0.5, 0, 0}};
        KdTree tree(cloud.points);
        std::vector<std::uint32_t> idx;
        std::vector<double> d2;
        tree.knn({0, 0, 0}, 4, idx, d2);
        CHECK(idx == std::vector<std::uint32_t>{1, 2, 0, 3});
    }
}

TEST_CASE("meshgrid_square spans and counts", "[geometry]") {
    auto single = meshgrid_square(1, 0.1);
    REQUIRE(single.size() == 1);
    CHECK(single[0].norm() == 0.0);

    auto four = meshgrid_square(2, 0.1);
    REQUIRE(four.size() == 4);
    for (const Vec3& p : four) {
        CHECK(std::abs(p.x) == Approx(0.05));
        CHECK(std::abs(p.y) == Approx(0.05));
        CHECK(p.z == 0.0);
    }

    auto sixteen = meshgrid_square(4, 0.1);
    REQUIRE(sixteen.size() == 16);
    Vec3 centroid;
    for (const Vec3& p : sixteen) {
        centroid += p;
        CHECK(p.x >= -0.05 - 1e-15);
        CHECK(p.x <= 0.05 + 1e-15);
    }
    CHECK(centroid.norm() == Approx(0.0).margin(1e-12));

    CHECK_THROWS_AS(meshgrid_square(0, 0.1), ConfigError);
    CHECK_THROWS_AS(meshgrid_square(3, 0.0), ConfigError);
}

TEST_CASE("rotation_from_normal maps z onto n", "[geometry]") {
    SECTION("identity for +z") {
        auto r = rotation_from_normal({0, 0, 1});
        CHECK(r.orthogonality_defect() < 1e-12);
        const Vec3 z = r.rotate({0, 0, 1});
        CHECK((z - Vec3{0, 0, 1}).norm() < 1e-12);
    }

    SECTION("x-axis target") {
        auto r = rotation_from_normal({1, 0, 0});
        const Vec3 img = r.rotate({0, 0, 1});
        CHECK((img - Vec3{1, 0, 0}).norm() < 1e-12);
        // axis (0,1,0), angle pi/2
        const Vec3 y_img = r.rotate({0, 1, 0});
        CHECK((y_img - Vec3{0, 1, 0}).norm() < 1e-12);
    }

    SECTION("antipodal -z becomes a pi rotation about x") {
        auto r = rotation_from_normal({0, 0, -1});
        const Vec3 img = r.rotate({0, 0, 1});
        CHECK((img - Vec3{0, 0, -1}).norm() < 1e-12);
        CHECK(r.determinant() == Approx(1.0).margin(1e-12));
    }

    SECTION("non-unit input rejected") {
        CHECK_THROWS_AS(rotation_from_normal({0, 0, 2}), NumericError);
    }

    SECTION("random suite incl. near-antipodal") {
        Rng rng = make_rng(32);
        for (int i = 0; i < 2000; ++i) {
            Vec3 n = random_unit(rng);
            if (i % 20 == 0) {
                // within 1e-4 of the poles
                const double sign = (i % 40 == 0) ? 1.0 : -1.0;
                Vec3 t = random_unit(rng);
                t.z = 0.0;
                if (t.norm() < 1e-9) t = {1, 0, 0};
                t = t / t.norm();
                n = (Vec3{0, 0, sign} + t * 1e-4).normalized();
            }
            auto r = rotation_from_normal(n);
            CHECK(r.orthogonality_defect() < 1e-9);
            CHECK(r.determinant() == Approx(1.0).margin(1e-9));
            CHECK((r.rotate({0, 0, 1}) - n).norm() < 1e-9);
        }
    }
}

TEST_CASE("chamfer_distance values and oracle equality", "[geometry]") {
    PointCloud a, b;
    a.points = {{0, 0, 0}};
    b.points = {{3, 4, 0}};

    SECTION("single pair, unsquared") {
        CHECK(chamfer_distance(a, b) == Approx(10.0));
        CHECK(chamfer_distance(a, b, CdVariant::Squared) == Approx(50.0));
    }

    SECTION("identical clouds give zero and zero gradients") {
        Rng rng = make_rng(33);
        PointCloud c = random_cloud(30, rng);
        CHECK(chamfer_distance(c, c) == 0.0);
        auto res = chamfer_with_grads(c, c);
        CHECK(res.value == 0.0);
        for (const Vec3& g : res.grad_a) CHECK(g.norm() == 0.0);
        for (const Vec3& g : res.grad_b) CHECK(g.norm() == 0.0);
    }

    SECTION("empty set errors") {
        PointCloud empty;
        CHECK_THROWS_AS(chamfer_distance(a, empty), ShapeError);
    }

    SECTION("symmetry, non-negativity, oracle equality") {
        Rng rng = make_rng(34);
        for (int trial = 0; trial < 10; ++trial) {
            PointCloud s1 = random_cloud(10 + uniform_index(rng, 50), rng);
            PointCloud s2 = random_cloud(10 + uniform_index(rng, 50), rng);
            for (CdVariant v : {CdVariant::Unsquared, CdVariant::Squared}) {
                const double ab = chamfer_distance(s1, s2, v);
                CHECK(ab >= 0.0);
                CHECK(ab == Approx(chamfer_distance(s2, s1, v)).margin(1e-15));
                CHECK(ab == Approx(brute_chamfer(s1, s2, v)).margin(1e-12));
            }
        }
    }

    SECTION("gradients match finite differences away from ties") {
        Rng rng = make_rng(35);
        PointCloud s1 = random_cloud(12, rng);
        PointCloud s2 = random_cloud(15, rng);
        for (CdVariant v : {CdVariant::Unsquared, CdVariant::Squared}) {
            auto res = chamfer_with_grads(s1, s2, v);
            const double h = 1e-6;
            for (std::size_t i = 0; i < s1.size(); ++i) {
                for (int axis = 0; axis < 3; ++axis) {
                    PointCloud plus = s1, minus = s1;
                    auto bump = [&](PointCloud& c, double delta) {
                        Vec3& p = c.points[i];
                        if (axis == 0) p.x += delta;
                        if (axis == 1) p.y += delta;
                        if (axis == 2) p.z += delta;
                    };
                    bump(plus, h);
                    bump(minus, -h);
                    const double fd =
                        (chamfer_distance(plus, s2, v) - chamfer_distance(minus, s2, v)) /
                        (2 * h);
                    const double ad = res.grad_a[i][axis];
                    CHECK(ad::relative_error(ad, fd) < 1e-5);
                }
            }
        }
    }
}

TEST_CASE("nn_distance_field", "[geometry]") {
    Rng rng = make_rng(36);
    PointCloud gt = random_cloud(40, rng);

    SECTION("pred subset of gt is all zeros") {
        PointCloud pred;
        pred.points.assign(gt.points.begin(), gt.points.begin() + 10);
        for (double d : nn_distance_field(pred, gt)) CHECK(d == 0.0);
    }

    SECTION("single point at known distance") {
        PointCloud g2, pred;
        g2.points = {{0, 0, 0}, {10, 0, 0}};
        pred.points = {{0, 0, 2}};
        auto field = nn_distance_field(pred, g2);
        REQUIRE(field.size() == 1);
        CHECK(field[0] == Approx(2.0));
    }

    SECTION("mean of field equals the first chamfer term") {
        PointCloud pred = random_cloud(25, rng);
        auto field = nn_distance_field(pred, gt);
        const double mean =
            std::accumulate(field.begin(), field.end(), 0.0) / double(field.size());
        // first term only: brute force
        double term = 0.0;
        for (const Vec3& p : pred.points) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3& q : gt.points) best = std::min(best, (p - q).norm());
            term += best;
        }
        term /= double(pred.size());
        CHECK(mean == Approx(term).margin(1e-12));
    }
}

TEST_CASE("icp_register", "[geometry]") {
    Rng rng = make_rng(37);

    // structured, curved cloud: sphere-like shell
    PointCloud shell;
    for (int i = 0; i < 200; ++i) {
        shell.points.push_back(random_unit(rng) * 0.5);
    }

    SECTION("identical clouds converge immediately") {
        auto res = icp_register(shell, shell, 20, 1e-12);
        CHECK(res.mse_trace.size() == 1);
        CHECK(res.final_mse == 0.0);
        CHECK(res.transform.orthogonality_defect() < 1e-12);
        CHECK(res.transform.translation.norm() == 0.0);
    }

    SECTION("pure translation recovered") {
        PointCloud moved = shell;
        for (Vec3& p : moved.points) p += {0.1, 0, 0};
        auto res = icp_register(moved, shell, 100, 1e-14);
        CHECK((res.transform.translation + Vec3{0.1, 0, 0}).norm() < 1e-6);
        CHECK(res.final_mse < 1e-14);
    }

    SECTION("20 degree z-rotation with trimmed overlap recovered within 1 degree") {
        // target: full shell; source: 70% slice, rotated by 20 degrees
        PointCloud source;
        for (const Vec3& p : shell.points) {
            if (p.z < 0.2) source.points.push_back(p);  // trims roughly 30%
        }
        REQUIRE(source.size() > 50);
        const double angle = 20.0 * M_PI / 180.0;
        RigidTransform rot;
        rot.rotation = {{{std::cos(angle), -std::sin(angle), 0},
                         {std::sin(angle), std::cos(angle), 0},
                         {0, 0, 1}}};
        PointCloud rotated = rot.apply(source);
        auto res = icp_register(rotated, shell, 200, 1e-15);
        // recovered rotation should invert rot: angle of composition near 0
        const RigidTransform err = res.transform.compose(rot);
        const double trace = err.rotation[0][0] + err.rotation[1][1] + err.rotation[2][2];
        const double residual_angle = std::acos(std::clamp((trace - 1.0) / 2.0, -1.0, 1.0));
        CHECK(residual_angle < 1.0 * M_PI / 180.0);
    }

    SECTION("MSE trace is non-increasing") {
        PointCloud a = random_cloud(150, rng);
        PointCloud b = random_cloud(170, rng);
        auto res = icp_register(a, b, 60, 1e-15);
        for (std::size_t i = 1; i < res.mse_trace.size(); ++i) {
            CHECK(res.mse_trace[i] <= res.mse_trace[i - 1] + 1e-15);
        }
    }

    SECTION("degenerate input errors") {
        PointCloud line;
        for (int i = 0; i < 10; ++i) line.points.push_back({double(i), 0, 0});
        CHECK_THROWS_AS(icp_register(line, shell, 10, 1e-10), DegenerateError);
    }
}

TEST_CASE("normalize_cloud", "[geometry]") {
    Rng rng = make_rng(38);
    PointCloud cloud = random_cloud(60, rng, 2.0);

    auto norm = normalize_cloud(cloud);
    double max_r = 0.0;
    Vec3 centroid;
    for (const Vec3& p : norm.cloud.points) {
        centroid += p;
        max_r = std::max(max_r, p.norm());
    }
    CHECK(max_r == Approx(0.5).margin(1e-12));
    CHECK((centroid / 60.0).norm() < 1e-12);

    SECTION("idempotent") {
        auto again = normalize_cloud(norm.cloud);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            CHECK((again.cloud.points[i] - norm.cloud.points[i]).norm() < 1e-12);
        }
    }

    SECTION("invariant to similarity transform of the input") {
        PointCloud moved = cloud;
        for (Vec3& p : moved.points) p = p * 10.0 + Vec3{3, -2, 7};
        auto norm2 = normalize_cloud(moved);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            CHECK((norm2.cloud.points[i] - norm.cloud.points[i]).norm() < 1e-9);
        }
    }

    SECTION("inverse parameters recover the input") {
        auto restored = denormalize_cloud(norm.cloud, norm.params);
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            CHECK((restored.points[i] - cloud.points[i]).norm() < 1e-12);
        }
    }

    SECTION("coincident points error") {
        PointCloud flat;
        flat.points.assign(5, Vec3{1, 1, 1});
        CHECK_THROWS_AS(normalize_cloud(flat), DegenerateError);
    }
}
