#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "asap/normalize.hpp"
#include "test_support.hpp"

#include <Eigen/Dense>
#include <numbers>
#include <set>

using namespace asap;
using asap::testing::blob_phantom;
using asap::testing::from_world_function;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

NormalizeConfig config_for(const Volume3D& tpl) {
    NormalizeConfig cfg;
    cfg.template_image = tpl;
    return cfg;
}

Volume3D warped(const GridSpec& g, const AffineTransform& A) {
    const auto inv = invert(A);
    return from_world_function(g, [&](const Eigen::Vector3d& p) { return blob_phantom(inv.apply(p)); });
}

}  // namespace

TEST_CASE("affine parameter decomposition roundtrips") {
    AffineParams p;
    p.rotations = {0.1, -0.2, 0.3};
    p.translations = {4, -5, 6};
    p.scales = {1.1, 0.95, 1.05};
    p.shears = {0.02, -0.01, 0.03};
    const auto q = decompose_affine(compose_affine(p));
    for (int i = 0; i < 3; ++i) {
        CHECK(q.rotations[i] == doctest::Approx(p.rotations[i]).epsilon(1e-12));
        CHECK(q.translations[i] == doctest::Approx(p.translations[i]).epsilon(1e-12));
        CHECK(q.scales[i] == doctest::Approx(p.scales[i]).epsilon(1e-12));
        CHECK(q.shears[i] == doctest::Approx(p.shears[i]).epsilon(1e-10));
    }
    Eigen::Matrix4d refl = Eigen::Matrix4d::Identity();
    refl(0, 0) = -1;
    CHECK_THROWS_AS(decompose_affine(AffineTransform(refl)), GeometryError);
}

TEST_CASE("template equal to structural gives the identity") {
    const auto tpl = from_world_function(GridSpec::centered({36, 36, 36}, {3, 3, 3}), blob_phantom);
    const auto a = decompose_affine(register_affine(tpl, tpl, config_for(tpl)));
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(a.rotations[i]) / kDeg < 0.1);
        CHECK(std::abs(a.translations[i]) < 0.1);
        CHECK(std::abs(a.scales[i] - 1.0) < 0.01);
    }
}

TEST_CASE("known 12-DOF transform is recovered") {
    AffineParams truth;
    truth.rotations = {0, 0, 4 * kDeg};
    truth.translations = {5, 0, 0};
    truth.scales = {1.1, 0.95, 1.05};
    const auto G = compose_affine(truth);
    const auto tpl = from_world_function(GridSpec::centered({40, 40, 40}, {3, 3, 3}), blob_phantom);
    const auto structural = warped(GridSpec::centered({48, 48, 44}, {2.5, 2.5, 3}), G);
    const auto got = decompose_affine(register_affine(structural, tpl, config_for(tpl)));
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(got.scales[i] / truth.scales[i] - 1.0) < 0.02);
        CHECK(std::abs(got.rotations[i] - truth.rotations[i]) / kDeg < 0.5);
        CHECK(std::abs(got.translations[i] - truth.translations[i]) < 1.0);
    }
}

TEST_CASE("external affine bypasses estimation") {
    const auto tpl = from_world_function(GridSpec::centered({20, 20, 20}, {3, 3, 3}), blob_phantom);
    auto cfg = config_for(tpl);
    const auto ext = AffineTransform::translation(1, 2, 3);
    cfg.external_affine = ext;
    // A constant image would make registration fail, so success proves the bypass.
    const Volume3D flat(tpl.grid(), std::vector<double>(tpl.size(), 1.0));
    CHECK(register_affine(flat, tpl, cfg).matrix() == ext.matrix());
}

TEST_CASE("normalized grid") {
    SUBCASE("always the requested spacing") {
        for (const Vec3 sp : {Vec3{1, 1, 1}, Vec3{3, 3, 5}, Vec3{0.9, 1.3, 2.4}}) {
            const auto g = normalized_grid(GridSpec::centered({50, 60, 40}, sp), {2, 2, 2});
            for (double s : g.spacing()) CHECK(s == doctest::Approx(2.0).epsilon(1e-12));
        }
    }
    SUBCASE("field of view and center follow the template") {
        const auto t = GridSpec::axis_aligned({91, 109, 91}, {1, 1, 1}, {-45, -63, -36});
        const auto g = normalized_grid(t, {2, 2, 2});
        CHECK(g.dims() == Dims{46, 55, 46});
        const Eigen::Vector3d ct = t.world(45, 54, 45), cg = g.world(22.5, 27, 22.5);
        CHECK((ct - cg).norm() < 1e-9);
    }
    SUBCASE("matching spacing reuses the template grid") {
        const auto t = GridSpec::centered({30, 30, 30}, {2, 2, 2});
        CHECK(normalized_grid(t, {2, 2, 2}).affine() == t.affine());
    }
}

TEST_CASE("normalize_volume") {
    const auto tpl = from_world_function(GridSpec::centered({32, 32, 32}, {2, 2, 2}), blob_phantom);
    auto cfg = config_for(tpl);
    SUBCASE("identity on the template grid is a passthrough") {
        const auto out = normalize_volume(tpl, AffineTransform::identity(), cfg, Interp::trilinear);
        for (std::size_t i = 0; i < tpl.size(); ++i) REQUIRE(out[i] == tpl[i]);
    }
    SUBCASE("output spacing is 2 mm whatever the input") {
        const auto coarse = from_world_function(GridSpec::centered({20, 20, 12}, {3.5, 3.5, 6}), blob_phantom);
        const auto out = normalize_volume(coarse, AffineTransform::identity(), cfg, Interp::trilinear);
        for (double s : out.spacing()) CHECK(s == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("nearest keeps masks binary and agrees with thresholded trilinear") {
        const auto ball = from_world_function(tpl.grid(), [](const Eigen::Vector3d& p) {
            return (p - Eigen::Vector3d(3, -2, 1)).norm() < 18 ? 1.0 : 0.0;
        });
        const auto A = compose_affine({{0.05, 0.0, 0.1}, {2, 1, -1}, {1.05, 0.98, 1.0}, {0, 0, 0}});
        const auto nn = normalize_volume(ball, A, cfg, Interp::nearest);
        const auto tl = normalize_volume(ball, A, cfg, Interp::trilinear);
        std::size_t agree = 0;
        for (std::size_t i = 0; i < nn.size(); ++i) {
            REQUIRE((nn[i] == 0.0 || nn[i] == 1.0));
            agree += (tl[i] >= 0.5) == (nn[i] == 1.0);
        }
        CHECK(static_cast<double>(agree) / nn.size() >= 0.99);
    }
    SUBCASE("singular affine") {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m(2, 2) = 0;
        CHECK_THROWS_AS(normalize_volume(tpl, AffineTransform(m), cfg, Interp::trilinear), GeometryError);
    }
    SUBCASE("bad spacing") {
        cfg.output_spacing_mm = {2, 0, 2};
        CHECK_THROWS_AS(normalize_volume(tpl, AffineTransform::identity(), cfg, Interp::trilinear), ParameterError);
    }
}
