#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "asap/brainmask.hpp"
#include "asap/error.hpp"
#include "asap/nifti.hpp"
#include "test_support.hpp"

#include <random>

using namespace asap;

namespace {

struct HeadPhantom {
    Volume3D image;
    std::vector<std::uint8_t> brain;  // ground-truth ellipsoid
    std::vector<std::uint8_t> shell;  // skull
};

// Bright brain ellipsoid with a darker enclosed ventricle, a zero gap, then
// a dim skull shell, in zero background.
HeadPhantom head_phantom(double scale = 1.0) {
    const auto g = GridSpec::centered({48, 56, 44}, {2, 2, 2});
    HeadPhantom h{Volume3D(g), std::vector<std::uint8_t>(g.voxel_count()), std::vector<std::uint8_t>(g.voxel_count())};
    std::vector<double> v(g.voxel_count(), 0.0);
    const auto& d = g.dims();
    std::size_t idx = 0;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i, ++idx) {
                const Eigen::Vector3d p = g.world(i, j, k);
                const double r_brain = std::pow(p.x() / 34, 2) + std::pow(p.y() / 42, 2) + std::pow(p.z() / 30, 2);
                const double r_vent = std::pow(p.x() / 8, 2) + std::pow(p.y() / 12, 2) + std::pow(p.z() / 6, 2);
                const double r_skull = std::pow(p.x() / 44, 2) + std::pow(p.y() / 52, 2) + std::pow(p.z() / 40, 2);
                if (r_brain <= 1.0) {
                    h.brain[idx] = 1;
                    v[idx] = r_vent <= 1.0 ? 40.0 : 100.0 + 5.0 * std::sin(p.x() / 5.0);
                } else if (r_skull <= 1.0 && r_skull >= 0.8) {
                    h.shell[idx] = 1;
                    v[idx] = 30.0;
                }
                v[idx] *= scale;
            }
    h.image = Volume3D(g, std::move(v));
    return h;
}

struct LabelledPhantom {
    Volume3D image;
    BinaryMask mask;
    std::vector<int> labels;  // 0 csf, 1 gm, 2 wm inside the mask, -1 outside
};

LabelledPhantom three_populations(std::uint64_t seed) {
    const auto g = GridSpec::centered({30, 30, 30}, {2, 2, 2});
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> v(g.voxel_count(), 0.0);
    std::vector<std::uint8_t> m(g.voxel_count(), 0);
    std::vector<int> labels(g.voxel_count(), -1);
    const double means[3] = {30, 80, 130};
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto c = g.coords(i);
        if (c[0] < 2 || c[0] > 27) continue;  // background slab
        m[i] = 1;
        const int label = (c[1] + 2 * c[2]) % 7 < 2 ? 0 : ((c[1] * 3 + c[0]) % 5 < 3 ? 1 : 2);
        labels[i] = label;
        v[i] = means[label] + noise(rng);
    }
    return {Volume3D(g, std::move(v)), BinaryMask(g, std::move(m)), std::move(labels)};
}

int argmax3(double a, double b, double c) { return a >= b && a >= c ? 0 : (b >= c ? 1 : 2); }

}  // namespace

TEST_CASE("rough strip") {
    SUBCASE("uniform positive volume gives the full grid") {
        const auto g = GridSpec::centered({10, 9, 8}, {3, 3, 3});
        const auto m = rough_strip(Volume3D(g, std::vector<double>(g.voxel_count(), 7.0)), 0.5);
        CHECK(m.count() == g.voxel_count());
    }
    SUBCASE("sphere in zero background is recovered exactly") {
        const auto g = GridSpec::centered({32, 32, 32}, {2, 2, 2});
        const Eigen::Vector3d c(1.3, -2.1, 0.7);
        const double r = 19.0;
        const auto vol = testing::from_world_function(g, [&](const Eigen::Vector3d& p) {
            return (p - c).norm() <= r ? 100.0 : 0.0;
        });
        const auto m = rough_strip(vol, 0.3);
        std::size_t mismatches = 0, inside = 0;
        for (std::size_t i = 0; i < g.voxel_count(); ++i) {
            const auto ijk = g.coords(i);
            const bool expect = (g.world(ijk[0], ijk[1], ijk[2]) - c).norm() <= r;
            inside += expect;
            mismatches += expect != m[i];
        }
        CHECK(inside > 3000);
        CHECK(mismatches == 0);
    }
    SUBCASE("negative perfusion counts by magnitude") {
        const auto g = GridSpec::centered({8, 8, 8}, {3, 3, 3});
        std::vector<double> v(g.voxel_count(), 0.0);
        for (int k = 2; k < 6; ++k)
            for (int j = 2; j < 6; ++j)
                for (int i = 2; i < 6; ++i) v[g.index(i, j, k)] = ((i + j + k) % 2 ? 50.0 : -50.0);
        CHECK(rough_strip(Volume3D(g, v), 0.2).count() == 64);
    }
    SUBCASE("all-zero volume") {
        CHECK_THROWS_AS(rough_strip(Volume3D(GridSpec::centered({5, 5, 5}, {1, 1, 1})), 0.2), DegenerateInputError);
    }
    SUBCASE("invariant to positive scaling") {
        std::mt19937_64 rng(2);
        const auto g = GridSpec::centered({20, 20, 20}, {3, 3, 3});
        const auto base = testing::from_world_function(g, [](const Eigen::Vector3d& p) { return testing::blob_phantom(p * 1.5); });
        std::vector<double> scaled(base.size());
        for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = 3.7 * base[i];
        CHECK(rough_strip(base, 0.2) == rough_strip(base.with_data(scaled), 0.2));
    }
}

TEST_CASE("structural brain mask on a head phantom") {
    const auto h = head_phantom();
    const auto m = brain_mask_structural(h.image);
    std::size_t brain = 0, brain_hit = 0, shell = 0, shell_hit = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        brain += h.brain[i];
        brain_hit += h.brain[i] && m[i];
        shell += h.shell[i];
        shell_hit += h.shell[i] && m[i];
    }
    CHECK(static_cast<double>(brain_hit) >= 0.99 * brain);
    CHECK(static_cast<double>(shell_hit) <= 0.01 * shell);

    SUBCASE("masking the masked image is a fixed point") {
        CHECK(brain_mask_structural(apply_mask(h.image, m)) == m);
    }
    SUBCASE("scale invariant") {
        CHECK(brain_mask_structural(head_phantom(2.5).image) == m);
    }
    SUBCASE("deterministic") {
        CHECK(brain_mask_structural(h.image) == m);
    }
}

TEST_CASE("structural brain mask rejects a constant image") {
    const auto g = GridSpec::centered({8, 8, 8}, {2, 2, 2});
    CHECK_THROWS_AS(brain_mask_structural(Volume3D(g, std::vector<double>(g.voxel_count(), 5.0))),
                    DegenerateInputError);
}

TEST_CASE("segmentation of three separated populations") {
    const auto ph = three_populations(5);
    MixtureFit fit;
    const auto maps = segment_tissues(ph.image, ph.mask, {}, &fit);
    maps.validate();
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < ph.mask.size(); ++i) {
        const double s = maps.p_gm[i] + maps.p_wm[i] + maps.p_csf[i];
        if (!ph.mask[i]) {
            CHECK(s == 0.0);
            continue;
        }
        REQUIRE(std::abs(s - 1.0) <= 1e-9);
        ++total;
        correct += argmax3(maps.p_csf[i], maps.p_gm[i], maps.p_wm[i]) == ph.labels[i];
    }
    CHECK(static_cast<double>(correct) >= 0.999 * total);
    CHECK(fit.means[0] == doctest::Approx(30).epsilon(0.01));
    CHECK(fit.means[1] == doctest::Approx(80).epsilon(0.01));
    CHECK(fit.means[2] == doctest::Approx(130).epsilon(0.01));
}

TEST_CASE("T2 flag swaps CSF and WM") {
    const auto ph = three_populations(6);
    SegmentationConfig t1, t2;
    t2.contrast = StructuralContrast::t2w;
    const auto a = segment_tissues(ph.image, ph.mask, t1);
    const auto b = segment_tissues(ph.image, ph.mask, t2);
    for (std::size_t i = 0; i < ph.mask.size(); ++i) {
        CHECK(a.p_csf[i] == b.p_wm[i]);
        CHECK(a.p_wm[i] == b.p_csf[i]);
        CHECK(a.p_gm[i] == b.p_gm[i]);
    }
}

TEST_CASE("segmentation is invariant to affine intensity rescaling") {
    const auto ph = three_populations(7);
    const auto a = segment_tissues(ph.image, ph.mask);
    std::vector<double> r(ph.image.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = 0.37 * ph.image[i] + 250.0;
    const auto b = segment_tissues(ph.image.with_data(r), ph.mask);
    double worst = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i)
        worst = std::max({worst, std::abs(a.p_gm[i] - b.p_gm[i]), std::abs(a.p_wm[i] - b.p_wm[i]),
                          std::abs(a.p_csf[i] - b.p_csf[i])});
    CHECK(worst <= 1e-6);
}

TEST_CASE("segmentation determinism and convergence failure") {
    const auto ph = three_populations(8);
    const auto a = segment_tissues(ph.image, ph.mask);
    const auto b = segment_tissues(ph.image, ph.mask);
    for (std::size_t i = 0; i < ph.mask.size(); ++i) REQUIRE(a.p_gm[i] == b.p_gm[i]);

    // Overlapping populations need more than two EM steps.
    const auto g = ph.image.grid();
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 1);
    std::vector<double> v(g.voxel_count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 3) * 1.5 + n(rng);
    SegmentationConfig cfg;
    cfg.max_iter = 2;
    try {
        (void)segment_tissues(Volume3D(g, v), BinaryMask(g, std::vector<std::uint8_t>(v.size(), 1)), cfg);
        FAIL("expected non-convergence");
    } catch (const ConvergenceError& e) {
        CHECK(e.log_likelihood_trace().size() == 2);
    }
}

TEST_CASE("external tissue maps") {
    const auto g = GridSpec::centered({6, 6, 6}, {2, 2, 2});
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> gm(g.voxel_count()), wm(g.voxel_count()), csf(g.voxel_count());
    for (std::size_t i = 0; i < gm.size(); ++i) {
        gm[i] = u(rng);
        wm[i] = (1 - gm[i]) * u(rng);
        csf[i] = (1 - gm[i] - wm[i]) * u(rng);
    }
    SUBCASE("passthrough on the target grid") {
        const auto m = accept_tissue_volumes(Volume3D(g, gm), Volume3D(g, wm), Volume3D(g, csf), g);
        for (std::size_t i = 0; i < gm.size(); ++i) {
            CHECK(m.p_gm[i] == gm[i]);
            CHECK(m.p_wm[i] == wm[i]);
            CHECK(m.p_csf[i] == csf[i]);
        }
    }
    SUBCASE("ringing above 1 is clamped") {
        auto gm2 = gm, wm2 = wm, csf2 = csf;
        gm2[10] = 1.02;
        wm2[10] = 0.0;
        csf2[10] = 0.0;
        const auto m = accept_tissue_volumes(Volume3D(g, gm2), Volume3D(g, wm2), Volume3D(g, csf2), g);
        CHECK(m.p_gm[10] == 1.0);
    }
    SUBCASE("sum of 1.2 is rejected") {
        auto gm2 = gm, wm2 = wm, csf2 = csf;
        gm2[7] = 0.5;
        wm2[7] = 0.4;
        csf2[7] = 0.3;
        CHECK_THROWS_AS(accept_tissue_volumes(Volume3D(g, gm2), Volume3D(g, wm2), Volume3D(g, csf2), g),
                        ValidationError);
    }
    SUBCASE("loaded from files and resampled onto a coarser grid") {
        testing::TempDir dir;
        write_nifti(Volume3D(g, gm), dir / "gm.nii");
        write_nifti(Volume3D(g, wm), dir / "wm.nii");
        write_nifti(Volume3D(g, csf), dir / "csf.nii");
        const auto target = GridSpec::centered({3, 3, 3}, {4, 4, 4});
        const auto m = accept_external_tissue_maps({dir / "gm.nii", dir / "wm.nii", dir / "csf.nii"}, target);
        CHECK(m.grid().dims() == Dims{3, 3, 3});
        m.validate();
    }
}
