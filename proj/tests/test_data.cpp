#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "gascn/data.hpp"
#include "gascn/rng.hpp"
#include "test_helpers.hpp"

using namespace gascn;
using namespace gascn::data;
using test_helpers::random_cloud;

namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
    const std::string dir = (fs::temp_directory_path() / name).string();
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gen_primitive surface properties", "[data]") {
    SECTION("unit sphere: every point at radius 0.5 after normalization") {
        auto cloud = gen_primitive("sphere", 1.0, 1.0, 1.0, 2000, 71);
        REQUIRE(cloud.size() == 2000);
        for (const auto& p : cloud.points) {
            CHECK(p.norm() == Approx(0.5).margin(1e-9));
        }
        cloud.validate("sphere");
    }

    SECTION("box: every point lies on exactly one face") {
        auto cloud = gen_primitive("box", 1.0, 0.6, 0.4, 1500, 72);
        geo::Vec3 lo{1e9, 1e9, 1e9}, hi{-1e9, -1e9, -1e9};
        for (const auto& p : cloud.points) {
            lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
            hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
        }
        for (const auto& p : cloud.points) {
            int on_faces = 0;
            if (std::abs(p.x - lo.x) < 1e-9 || std::abs(p.x - hi.x) < 1e-9) ++on_faces;
            if (std::abs(p.y - lo.y) < 1e-9 || std::abs(p.y - hi.y) < 1e-9) ++on_faces;
            if (std::abs(p.z - lo.z) < 1e-9 || std::abs(p.z - hi.z) < 1e-9) ++on_faces;
            CHECK(on_faces == 1);
        }
    }

    SECTION("sphere area uniformity by equal-area z bins (chi-square)") {
        auto cloud = gen_primitive("sphere", 1.0, 1.0, 1.0, 10000, 73);
        // equal-height z slabs have equal area on a sphere
        const int bins = 10;
        std::vector<double> counts(bins, 0.0);
        for (const auto& p : cloud.points) {
            int b = int((p.z + 0.5) / 1.0 * bins);
            b = std::clamp(b, 0, bins - 1);
            counts[b] += 1.0;
        }
        const double expected = 10000.0 / bins;
        double chi2 = 0.0;
        for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
        // 99th percentile of chi-square with 9 dof
        CHECK(chi2 < 21.666);
    }

    SECTION("all kinds produce valid normalized clouds") {
        for (const std::string kind : {"sphere", "box", "cylinder", "capsule", "lamp"}) {
            auto cloud = gen_primitive(kind, 1.0, 1.4, 0.9, 600, 74);
            cloud.validate(kind);
            double max_r = 0.0;
            geo::Vec3 centroid;
            for (const auto& p : cloud.points) {
                centroid += p;
                max_r = std::max(max_r, p.norm());
            }
            CHECK(max_r == Approx(0.5).margin(1e-9));
            CHECK((centroid / double(cloud.size())).norm() < 1e-9);
        }
    }

    SECTION("determinism and error cases") {
        auto c1 = gen_primitive("capsule", 1.0, 2.0, 1.0, 128, 75);
        auto c2 = gen_primitive("capsule", 1.0, 2.0, 1.0, 128, 75);
        for (std::size_t i = 0; i < c1.size(); ++i) {
            CHECK((c1.points[i] - c2.points[i]).norm() == 0.0);
        }
        CHECK_THROWS_AS(gen_primitive("pyramid", 1, 1, 1, 100, 1), ConfigError);
        CHECK_THROWS_AS(gen_primitive("box", -1, 1, 1, 100, 1), ConfigError);
        CHECK_THROWS_AS(gen_primitive("box", 1, 1, 1, 2, 1), ConfigError);
    }
}

TEST_CASE("simulate_partial_view", "[data]") {
    SECTION("single point survives") {
        geo::PointCloud one;
        one.points = {{0.1, 0.2, 0.3}};
        auto out = simulate_partial_view(one, {0, 0, -1}, 16);
        CHECK(out.size() == 1);
    }

    SECTION("output is always a subset of the input") {
        Rng rng = make_rng(76);
        auto cloud = gen_primitive("lamp", 1.0, 3.0, 1.2, 800, 77);
        for (int trial = 0; trial < 5; ++trial) {
            const geo::Vec3 dir = test_helpers::random_unit(rng);
            auto out = simulate_partial_view(cloud, dir, 32);
            CHECK(out.size() <= cloud.size());
            CHECK(out.size() > 0);
            std::set<std::array<double, 3>> input_set;
            for (const auto& p : cloud.points) input_set.insert({p.x, p.y, p.z});
            for (const auto& p : out.points) {
                CHECK(input_set.count({p.x, p.y, p.z}) == 1);
            }
        }
    }

    SECTION("sphere viewed along -z keeps mostly the front hemisphere") {
        auto sphere = gen_primitive("sphere", 1.0, 1.0, 1.0, 4000, 78);
        // camera above, looking down: view direction -z, so high-z points win
        auto out = simulate_partial_view(sphere, {0, 0, -1}, 24, 0.02);
        REQUIRE(out.size() > 100);
        CHECK(out.size() < sphere.size());
        std::size_t front = 0;
        for (const auto& p : out.points) {
            if (p.z >= -0.02) ++front;
        }
        CHECK(double(front) / double(out.size()) >= 0.95);
    }
}

TEST_CASE("clip_input", "[data]") {
    Rng rng = make_rng(79);
    auto cloud = random_cloud(50, rng);
    cloud.normals.assign(50, geo::Vec3{0, 0, 1});

    SECTION("under the limit: same multiset, permuted, fields follow") {
        auto out = clip_input(cloud, 100, std::uint64_t(5));
        REQUIRE(out.size() == 50);
        REQUIRE(out.normals.size() == 50);
        std::multiset<double> in_x, out_x;
        for (const auto& p : cloud.points) in_x.insert(p.x);
        for (const auto& p : out.points) out_x.insert(p.x);
        CHECK(in_x == out_x);
    }

    SECTION("over the limit: exactly max_points, all from the input") {
        geo::PointCloud big = random_cloud(5000, rng);
        auto out = clip_input(big, 3000, std::uint64_t(6));
        CHECK(out.size() == 3000);
        std::set<std::array<double, 3>> input_set;
        for (const auto& p : big.points) input_set.insert({p.x, p.y, p.z});
        for (const auto& p : out.points) CHECK(input_set.count({p.x, p.y, p.z}) == 1);
    }

    SECTION("same seed, same output") {
        auto a = clip_input(cloud, 20, std::uint64_t(9));
        auto b = clip_input(cloud, 20, std::uint64_t(9));
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK((a.points[i] - b.points[i]).norm() == 0.0);
        }
    }
}

TEST_CASE("ply round trips and errors", "[data]") {
    const std::string dir = temp_dir("gascn_ply_test");
    Rng rng = make_rng(80);

    SECTION("write -> read -> write is byte-identical (print precision)") {
        geo::PointCloud cloud = random_cloud(40, rng);
        cloud.normals.clear();
        const std::string p1 = dir + "/a.ply", p2 = dir + "/b.ply";
        write_ply(cloud, p1);
        auto loaded = read_ply(p1);
        write_ply(loaded, p2);
        CHECK(slurp(p1) == slurp(p2));
    }

    SECTION("normals and quality round trip") {
        auto cloud = gen_primitive("cylinder", 1.0, 2.0, 1.0, 64, 81);
        cloud.scalar_field.resize(cloud.size());
        for (std::size_t i = 0; i < cloud.size(); ++i) cloud.scalar_field[i] = double(i) * 0.5;
        const std::string p = dir + "/c.ply";
        write_ply(cloud, p);
        auto loaded = read_ply(p);
        REQUIRE(loaded.has_normals());
        REQUIRE(loaded.has_scalar_field());
        CHECK(loaded.scalar_field[3] == Approx(1.5));
        const std::string p2 = dir + "/d.ply";
        write_ply(loaded, p2);
        CHECK(slurp(p) == slurp(p2));
    }

    SECTION("binary little-endian vertices are readable") {
        const std::string p = dir + "/bin.ply";
        std::ofstream f(p, std::ios::binary);
        f << "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
             "property float x\nproperty float y\nproperty float z\nend_header\n";
        const float vals[6] = {1.5f, 2.5f, -3.0f, 0.25f, 0.5f, 1.0f};
        f.write(reinterpret_cast<const char*>(vals), sizeof(vals));
        f.close();
        auto cloud = read_ply(p);
        REQUIRE(cloud.size() == 2);
        CHECK(cloud.points[0].x == Approx(1.5));
        CHECK(cloud.points[1].z == Approx(1.0));
    }

    SECTION("distinct parse errors") {
        const std::string no_vertex = dir + "/nv.ply";
        std::ofstream(no_vertex) << "ply\nformat ascii 1.0\nelement face 0\nend_header\n";
        CHECK_THROWS_WITH(read_ply(no_vertex), Catch::Contains("element vertex"));

        const std::string bad_type = dir + "/bt.ply";
        std::ofstream(bad_type) << "ply\nformat ascii 1.0\nelement vertex 1\n"
                                   "property int x\nproperty float y\nproperty float z\n"
                                   "end_header\n1 2 3\n";
        CHECK_THROWS_WITH(read_ply(bad_type), Catch::Contains("non-float type"));

        const std::string truncated = dir + "/tr.ply";
        std::ofstream(truncated) << "ply\nformat ascii 1.0\nelement vertex 5\n"
                                    "property float x\nproperty float y\nproperty float z\n"
                                    "end_header\n0 0 0\n1 1 1\n";
        CHECK_THROWS_WITH(read_ply(truncated), Catch::Contains("truncated"));

        CHECK_THROWS_AS(read_ply(dir + "/missing.ply"), IoError);
    }
}

TEST_CASE("xyz round trips and errors", "[data]") {
    const std::string dir = temp_dir("gascn_xyz_test");

    SECTION("single origin point") {
        const std::string p = dir + "/one.xyz";
        std::ofstream(p) << "0 0 0\n";
        auto cloud = read_xyz(p);
        REQUIRE(cloud.size() == 1);
        CHECK(cloud.points[0].norm() == 0.0);
    }

    SECTION("round trip preserves values") {
        Rng rng = make_rng(82);
        geo::PointCloud cloud = random_cloud(30, rng);
        const std::string p1 = dir + "/a.xyz", p2 = dir + "/b.xyz";
        write_xyz(cloud, p1);
        write_xyz(read_xyz(p1), p2);
        CHECK(slurp(p1) == slurp(p2));
    }

    SECTION("non-numeric token errors with the line number") {
        const std::string p = dir + "/bad.xyz";
        std::ofstream(p) << "a b c\n";
        CHECK_THROWS_WITH(read_xyz(p), Catch::Contains("line 1"));
    }

    SECTION("blank lines are skipped") {
        const std::string p = dir + "/blank.xyz";
        std::ofstream(p) << "\n1 2 3\n\n4 5 6\n";
        CHECK(read_xyz(p).size() == 2);
    }
}

TEST_CASE("build_dataset", "[data][dataset]") {
    const std::string dir = temp_dir("gascn_dataset_test");
    GenSpec spec;
    spec.n_shapes = 20;
    spec.views_per_shape = 3;
    spec.gt_points = 256;
    spec.resolution = 32;
    spec.min_partial_points = 24;

    auto manifest = build_dataset(spec, dir, 123);

    SECTION("split sizes follow 80/10/10 by shape") {
        std::map<std::string, int> counts;
        for (const auto& inst : manifest.instances) counts[inst.split]++;
        CHECK(counts["train"] == 16);
        CHECK(counts["val"] == 2);
        CHECK(counts["test"] == 2);
    }

    SECTION("rebuild with the same seed is byte-identical") {
        const std::string dir2 = temp_dir("gascn_dataset_test2");
        build_dataset(spec, dir2, 123);
        CHECK(slurp(dir + "/manifest.json") == slurp(dir2 + "/manifest.json"));
        CHECK(slurp(dir + "/gt/shape_0000.ply") == slurp(dir2 + "/gt/shape_0000.ply"));
        CHECK(slurp(dir + "/partial/shape_0007_1.ply") ==
              slurp(dir2 + "/partial/shape_0007_1.ply"));
    }

    SECTION("manifest loads back and all files parse with enough points") {
        auto loaded = load_manifest(dir + "/manifest.json");
        CHECK(loaded.instances.size() == spec.n_shapes);
        auto train = load_split(loaded, dir, "train");
        CHECK(train.size() == 16 * spec.views_per_shape);
        for (const auto& inst : train) {
            CHECK(inst.partial.size() >= spec.min_partial_points);
            CHECK(inst.gt.size() == spec.gt_points);
            // partials are strict subsets of the ground-truth sampling
            std::set<std::array<double, 3>> gt_set;
            for (const auto& p : inst.gt.points) gt_set.insert({p.x, p.y, p.z});
            for (const auto& p : inst.partial.points) {
                CHECK(gt_set.count({p.x, p.y, p.z}) == 1);
            }
        }
    }

    SECTION("ground truths are normalize_cloud idempotent") {
        auto loaded = load_manifest(dir + "/manifest.json");
        auto val = load_split(loaded, dir, "val");
        for (const auto& inst : val) {
            auto renorm = geo::normalize_cloud(inst.gt);
            for (std::size_t i = 0; i < inst.gt.size(); ++i) {
                // PLY print precision bounds the comparison
                CHECK((renorm.cloud.points[i] - inst.gt.points[i]).norm() < 1e-6);
            }
        }
    }

    SECTION("missing parent directory errors") {
        const std::string orphan = dir + "/no_such_parent/data";
        CHECK_THROWS_AS(build_dataset(spec, orphan, 1), IoError);
    }
}
