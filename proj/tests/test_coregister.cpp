#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "asap/coregister.hpp"
#include "test_support.hpp"

#include <Eigen/Dense>
#include <numbers>
#include <set>

using namespace asap;
using asap::testing::blob_phantom;
using asap::testing::from_world_function;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const GridSpec& grid() {
    static const GridSpec g = GridSpec::centered({40, 40, 40}, {3, 3, 3});
    return g;
}

// Moving image such that moving(G x) = fixed(x).
Volume3D moved(const GridSpec& g, const RigidTransform& G, const std::function<double(const Eigen::Vector3d&)>& f) {
    const auto inv = invert(G.to_affine());
    return from_world_function(g, [&](const Eigen::Vector3d& p) { return f(inv.apply(p)); });
}

void check_close(const RigidTransform& got, const RigidTransform& want, double deg, double mm) {
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(got.rotations[i] - want.rotations[i]) / kDeg < deg);
        CHECK(std::abs(got.translations[i] - want.translations[i]) < mm);
    }
}

}  // namespace

TEST_CASE("self-registration returns the identity") {
    const auto fixed = from_world_function(grid(), blob_phantom);
    const auto r = register_rigid(fixed, fixed);
    check_close(r.transform, RigidTransform{}, 0.05, 0.05);
    // Interpolation at sub-voxel offsets can nudge NMI a hair either way.
    CHECK(r.metric == doctest::Approx(similarity(fixed, fixed)).epsilon(1e-4));
    CHECK(r.metric_per_level.size() == 3);
}

TEST_CASE("NMI of an image with itself exceeds NMI with anything else") {
    const auto a = from_world_function(grid(), blob_phantom);
    const double self = similarity(a, a);
    std::mt19937_64 rng(3);
    CHECK(self > similarity(a, testing::random_volume(grid(), rng, 0, 100)));
    const auto shifted = moved(grid(), RigidTransform{{0, 0, 0}, {4, 0, 0}}, blob_phantom);
    CHECK(self > similarity(a, shifted));
    CHECK(similarity(a, a, Metric::normalized_cross_correlation) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("known rigid motion is recovered") {
    const RigidTransform G{{0, 0, 5 * kDeg}, {3, 0, 0}};
    const auto fixed = from_world_function(grid(), blob_phantom);
    const auto moving = moved(grid(), G, blob_phantom);
    SUBCASE("NMI") { check_close(register_rigid(moving, fixed).transform, G, 0.5, 0.5); }
    SUBCASE("NCC") {
        RegistrationConfig cfg;
        cfg.metric = Metric::normalized_cross_correlation;
        check_close(register_rigid(moving, fixed, cfg).transform, G, 0.5, 0.5);
    }
    SUBCASE("masked metric region") {
        RegistrationConfig cfg;
        cfg.fixed_mask = BinaryMask::from_volume(
            from_world_function(grid(), [](const Eigen::Vector3d& p) { return p.norm() < 40 ? 1.0 : 0.0; }));
        check_close(register_rigid(moving, fixed, cfg).transform, G, 0.5, 0.5);
    }
    SUBCASE("inverted contrast with NMI") {
        const auto inv = moved(grid(), G, [](const Eigen::Vector3d& p) { return 200.0 - blob_phantom(p); });
        check_close(register_rigid(inv, fixed).transform, G, 0.5, 0.5);
    }
    SUBCASE("aligning moving onto fixed via the returned transform") {
        const auto r = register_rigid(moving, fixed);
        const auto back = resample(moving, fixed.grid(), r.transform.to_affine(), Interp::trilinear);
        CHECK(similarity(fixed, back) > similarity(fixed, moving));
    }
}

TEST_CASE("different grids and a large offset") {
    const RigidTransform G{{3 * kDeg, -4 * kDeg, 2 * kDeg}, {20, -15, 10}};
    const auto fixed = from_world_function(GridSpec::centered({48, 48, 40}, {2.5, 2.5, 3}), blob_phantom);
    const auto moving = moved(GridSpec::axis_aligned({30, 30, 20}, {4, 4, 6}, {-40, -75, -50}), G, blob_phantom);
    check_close(register_rigid(moving, fixed).transform, G, 0.5, 0.5);
}

TEST_CASE("determinism") {
    const RigidTransform G{{2 * kDeg, 0, -4 * kDeg}, {1, 2, -2}};
    const auto fixed = from_world_function(grid(), blob_phantom);
    const auto moving = moved(grid(), G, blob_phantom);
    const auto a = register_rigid(moving, fixed), b = register_rigid(moving, fixed);
    CHECK(a.transform.rotations == b.transform.rotations);
    CHECK(a.transform.translations == b.transform.translations);
    CHECK(a.metric == b.metric);
}

TEST_CASE("failures") {
    const auto fixed = from_world_function(grid(), blob_phantom);
    SUBCASE("constant moving image") {
        const Volume3D flat(grid(), std::vector<double>(grid().voxel_count(), 7.0));
        CHECK_THROWS_AS(register_rigid(flat, fixed), RegistrationFailure);
        CHECK_THROWS_AS(register_rigid(fixed, flat), RegistrationFailure);
    }
    SUBCASE("no overlap anywhere") {
        RegistrationConfig cfg;
        cfg.initial = RigidTransform{{0, 0, 0}, {5000, 0, 0}};
        try {
            register_rigid(fixed, fixed, cfg);
            FAIL("expected failure");
        } catch (const RegistrationFailure& e) {
            CHECK(e.best_so_far().matrix()(0, 3) == doctest::Approx(5000));
        }
    }
    SUBCASE("bad config") {
        RegistrationConfig cfg;
        cfg.histogram_bins = 4;
        CHECK_THROWS_AS(register_rigid(fixed, fixed, cfg), ParameterError);
        cfg = {};
        cfg.pyramid_levels = 0;
        CHECK_THROWS_AS(register_rigid(fixed, fixed, cfg), ParameterError);
    }
}

TEST_CASE("coregistration to a structural image") {
    const RigidTransform G{{0, 0, 4 * kDeg}, {2, -3, 1}};
    const auto structural = from_world_function(GridSpec::centered({48, 48, 48}, {2, 2, 2}), blob_phantom);
    const auto asl_grid = GridSpec::centered({24, 24, 16}, {4, 4, 6});
    const auto pd = moved(asl_grid, G, blob_phantom);
    const auto asl = moved(asl_grid, G, [](const Eigen::Vector3d& p) { return 0.01 * blob_phantom(p) + 0.3 * p.x(); });

    SUBCASE("PD-driven, ASL carried along in structural space") {
        const auto c = coregister_to_structural(asl, pd, structural, CoregMode::structural_space);
        check_close(c.transform, G, 0.5, 0.5);
        CHECK(c.working_grid.matches(structural.grid()));
        const auto direct = resample(asl, structural.grid(), c.transform.to_affine(), Interp::nearest);
        for (std::size_t i = 0; i < direct.size(); ++i) REQUIRE(c.asl[i] == direct[i]);
        std::set<double> allowed(asl.data().begin(), asl.data().end());
        allowed.insert(0.0);
        for (double v : c.asl.data()) REQUIRE(allowed.count(v) == 1);
    }
    SUBCASE("asl space keeps ASL untouched and pulls the structural over") {
        const auto c = coregister_to_structural(asl, pd, structural, CoregMode::asl_space);
        CHECK(c.working_grid.matches(asl_grid));
        for (std::size_t i = 0; i < asl.size(); ++i) REQUIRE(c.asl[i] == asl[i]);
        CHECK(c.structural.grid().matches(asl_grid));
        CHECK(similarity(c.structural, pd, Metric::normalized_cross_correlation) > 0.99);
    }
    SUBCASE("PD grid must match ASL") {
        const Volume3D bad(GridSpec::centered({24, 24, 15}, {4, 4, 6}));
        CHECK_THROWS_AS(coregister_to_structural(asl, bad, structural, CoregMode::asl_space), GeometryError);
    }
}

TEST_CASE("identity-posed inputs on a shared grid pass through") {
    const auto s = from_world_function(grid(), blob_phantom);
    const auto c = coregister_to_structural(s, std::nullopt, s, CoregMode::asl_space);
    check_close(c.transform, RigidTransform{}, 0.05, 0.05);
    // The outermost layer may fall just outside the field under a residual shift.
    for (int k = 1; k < 39; ++k)
        for (int j = 1; j < 39; ++j)
            for (int i = 1; i < 39; ++i) REQUIRE(std::abs(c.structural.at(i, j, k) - s.at(i, j, k)) < 0.5);
}

TEST_CASE("transform files") {
    testing::TempDir tmp;
    const auto t = RigidTransform{{0.1, -0.2, 0.3}, {4, 5, -6}}.to_affine();
    write_transform(tmp / "t.txt", t);
    const auto back = read_transform(tmp / "t.txt");
    CHECK(back.matrix() == t.matrix());
    {
        std::ofstream(tmp / "short.txt") << "1 0 0 0\n0 1 0 0\n0 0 1 0\n";
        std::ofstream(tmp / "junk.txt") << "1 0 0 0\n0 1 0 0\n0 0 1 x\n0 0 0 1\n";
        std::ofstream(tmp / "row.txt") << "1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 1 1\n";
    }
    CHECK_THROWS_AS(read_transform(tmp / "short.txt"), FormatError);
    CHECK_THROWS_AS(read_transform(tmp / "junk.txt"), FormatError);
    CHECK_THROWS_AS(read_transform(tmp / "row.txt"), GeometryError);
    CHECK_THROWS_AS(read_transform(tmp / "missing.txt"), IoError);
}
