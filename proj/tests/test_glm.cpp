#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "asap/error.hpp"
#include "asap/glm.hpp"
#include "test_support.hpp"

#include <Eigen/Dense>
#include <fstream>

using namespace asap;

namespace {

std::vector<std::string> ids(std::size_t n) {
    std::vector<std::string> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back("s" + std::to_string(i));
    return v;
}

BinaryMask full(const GridSpec& g) { return BinaryMask(g, std::vector<std::uint8_t>(g.voxel_count(), 1)); }

// Subject maps from a subjects x voxels matrix.
std::vector<Volume3D> maps_from(const GridSpec& g, const Eigen::MatrixXd& y) {
    std::vector<Volume3D> out;
    for (Eigen::Index s = 0; s < y.rows(); ++s) {
        std::vector<double> v(g.voxel_count());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = y(s, static_cast<Eigen::Index>(i));
        out.emplace_back(g, std::move(v));
    }
    return out;
}

std::vector<int> balanced(int n1, int n2) {
    std::vector<int> g(n1, 1);
    g.insert(g.end(), n2, 2);
    return g;
}

}  // namespace

TEST_CASE("hand-computed OLS t on a 2-voxel, 6-subject dataset") {
    const auto g = GridSpec::centered({2, 1, 1}, {2, 2, 2});
    Eigen::MatrixXd y(6, 2);
    y << 3.1, 61.0, 4.7, 55.5, 5.2, 58.25, 2.0, 40.0, 2.9, 47.5, 3.3, 52.0;
    const auto maps = maps_from(g, y);
    SUBCASE("pooled two-sample t") {
        const auto s = fit_glm(maps, DesignMatrix::two_sample(ids(6), balanced(3, 3)), full(g));
        // Oracle values from an independent statistics package.
        CHECK(std::abs(s.t_values[0] - 2.159622099196068) < 1e-9);
        CHECK(std::abs(s.t_values[1] - 3.057281073101324) < 1e-9);
        CHECK(s.dof == 4);
    }
    SUBCASE("with an age covariate") {
        Eigen::MatrixXd age(6, 1);
        age << 34, 51, 47, 29, 62, 40;
        const auto d = DesignMatrix::two_sample(ids(6), balanced(3, 3), {"age"}, age);
        const auto s = fit_glm(maps, d, full(g));
        CHECK(std::abs(s.t_values[0] - 2.3162133882372937) < 1e-9);
        CHECK(std::abs(s.t_values[1] - 2.68879471386942) < 1e-9);
        CHECK(s.dof == 3);
    }
}

TEST_CASE("identical groups give t = 0") {
    const auto g = GridSpec::centered({5, 4, 3}, {2, 2, 2});
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(50, 10);
    Eigen::MatrixXd y(8, g.voxel_count());
    for (Eigen::Index v = 0; v < y.cols(); ++v)
        for (int s = 0; s < 4; ++s) y(s, v) = y(s + 4, v) = n(rng);
    const auto st = fit_glm(maps_from(g, y), DesignMatrix::two_sample(ids(8), balanced(4, 4)), full(g));
    for (double t : st.t_values.data()) CHECK(std::abs(t) < 1e-9);
}

TEST_CASE("zero-variance voxels and the mask") {
    const auto g = GridSpec::centered({3, 1, 1}, {2, 2, 2});
    Eigen::MatrixXd y(6, 3);
    y << 5, 1, 9, 5, 2, 9, 5, 3, 9, 5, 4, 8, 5, 5, 7, 5, 6, 9;
    std::vector<std::uint8_t> m{1, 1, 0};
    const auto st = fit_glm(maps_from(g, y), DesignMatrix::two_sample(ids(6), balanced(3, 3)), BinaryMask(g, m));
    CHECK(st.t_values[0] == 0.0);
    CHECK(st.t_values[1] != 0.0);
    CHECK(st.t_values[2] == 0.0);
}

TEST_CASE("matches per-voxel normal equations on random designs") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        const int n1 = 3 + trial % 4, n2 = 4 + trial % 3, ns = n1 + n2;
        const int nv = 20 + 4 * trial;
        const auto g = GridSpec::centered({nv, 1, 1}, {2, 2, 2});
        Eigen::MatrixXd cov(ns, 2), y(ns, nv);
        for (int s = 0; s < ns; ++s) {
            cov(s, 0) = 40 + 10 * n(rng);
            cov(s, 1) = n(rng);
            for (int v = 0; v < nv; ++v) y(s, v) = 50 + 8 * n(rng) + (s < n1 ? 3 : 0);
        }
        const auto d = DesignMatrix::two_sample(ids(ns), balanced(n1, n2), {"age", "z"}, cov);
        const auto st = fit_glm(maps_from(g, y), d, full(g));
        for (int v = 0; v < nv; ++v) {
            const Eigen::MatrixXd xtx = d.x.transpose() * d.x;
            const Eigen::VectorXd beta = xtx.ldlt().solve(d.x.transpose() * y.col(v));
            const Eigen::VectorXd r = y.col(v) - d.x * beta;
            const double s2 = r.squaredNorm() / (ns - 4);
            const double var = s2 * d.contrast.dot(xtx.ldlt().solve(d.contrast));
            const double t = d.contrast.dot(beta) / std::sqrt(var);
            REQUIRE(std::abs(st.t_values[v] - t) < 1e-9);
        }
    }
}

TEST_CASE("invariances") {
    const auto g = GridSpec::centered({30, 1, 1}, {2, 2, 2});
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 1);
    Eigen::MatrixXd cov(10, 1), y(10, 30);
    for (int s = 0; s < 10; ++s) {
        cov(s, 0) = 30 + 15 * n(rng);
        for (int v = 0; v < 30; ++v) y(s, v) = 60 + 5 * n(rng);
    }
    const auto d = DesignMatrix::two_sample(ids(10), balanced(5, 5), {"age"}, cov);
    const auto base = fit_glm(maps_from(g, y), d, full(g));
    SUBCASE("adding a constant to every map") {
        const Eigen::MatrixXd shifted = y.array() + 123.0;
        const auto s = fit_glm(maps_from(g, shifted), d, full(g));
        for (int v = 0; v < 30; ++v) CHECK(std::abs(s.t_values[v] - base.t_values[v]) < 1e-9);
    }
    SUBCASE("rescaling a covariate") {
        const auto d2 = DesignMatrix::two_sample(ids(10), balanced(5, 5), {"age"}, cov * 365.25);
        const auto s = fit_glm(maps_from(g, y), d2, full(g));
        for (int v = 0; v < 30; ++v) CHECK(std::abs(s.t_values[v] - base.t_values[v]) < 1e-9);
    }
}

TEST_CASE("design validation") {
    SUBCASE("constant covariate duplicates the group columns") {
        Eigen::MatrixXd c = Eigen::MatrixXd::Constant(6, 1, 3.0);
        CHECK_THROWS_AS(DesignMatrix::two_sample(ids(6), balanced(3, 3), {"k"}, c).validate(), DesignError);
    }
    SUBCASE("no residual dof") {
        CHECK_THROWS_AS(DesignMatrix::two_sample(ids(2), balanced(1, 1)).validate(), DesignError);
    }
    SUBCASE("bad group code") {
        CHECK_THROWS_AS(DesignMatrix::two_sample(ids(4), {1, 2, 3, 1}).validate(), DesignError);
    }
    SUBCASE("contrast length") {
        auto d = DesignMatrix::two_sample(ids(6), balanced(3, 3));
        d.contrast = Eigen::VectorXd::Ones(3);
        CHECK_THROWS_AS(d.validate(), DesignError);
    }
    SUBCASE("rank checked before any voxel") {
        const auto g = GridSpec::centered({2, 1, 1}, {2, 2, 2});
        Eigen::MatrixXd c = Eigen::MatrixXd::Constant(4, 1, 1.0);
        const auto d = DesignMatrix::two_sample(ids(4), balanced(2, 2), {"k"}, c);
        CHECK_THROWS_AS(fit_glm(maps_from(g, Eigen::MatrixXd::Zero(4, 2)), d, full(g)), DesignError);
    }
}

TEST_CASE("design CSV") {
    testing::TempDir tmp;
    const auto write = [&](const std::string& name, const std::string& body) {
        std::ofstream(tmp / name) << body;
        return tmp / name;
    };
    SUBCASE("labels and covariates") {
        const auto d = read_design_csv(write("d.csv", "subject_id,group,age,sex\na,patient,70,1\nb,control,65,0\n"
                                                      "c,patient,72,0\nd,control,68,1\ne,control,60,1\n"));
        CHECK(d.subjects() == 5);
        CHECK(d.groups == std::vector<int>{2, 1, 2, 1, 1});  // control < patient
        CHECK(d.covariate_names == std::vector<std::string>{"age", "sex"});
        CHECK(d.x(2, 2) == 72.0);
        CHECK(d.contrast.size() == 4);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(read_design_csv(write("h.csv", "id,group\na,1\n")), DesignError);
        CHECK_THROWS_AS(read_design_csv(write("n.csv", "subject_id,group,age\na,1,x\nb,2,3\nc,1,4\nd,2,5\n")),
                        DesignError);
        CHECK_THROWS_AS(read_design_csv(write("g.csv", "subject_id,group\na,1\nb,1\nc,1\n")), DesignError);
        CHECK_THROWS_AS(read_design_csv(write("u.csv", "subject_id,group\na,1\na,2\nc,1\nd,2\n")), DesignError);
        CHECK_THROWS_AS(read_design_csv(tmp / "missing.csv"), IoError);
    }
}

TEST_CASE("cluster thresholding") {
    const auto g = GridSpec::centered({40, 30, 20}, {2, 2, 2});
    std::vector<double> t(g.voxel_count(), 0.0);
    // 400-voxel block (10x8x5) and 100-voxel block (5x5x4), well apart.
    for (int k = 2; k < 7; ++k)
        for (int j = 2; j < 10; ++j)
            for (int i = 2; i < 12; ++i) t[g.index(i, j, k)] = 4.0 + 0.01 * i;
    for (int k = 10; k < 14; ++k)
        for (int j = 15; j < 20; ++j)
            for (int i = 25; i < 30; ++i) t[g.index(i, j, k)] = 5.0;
    StatMap s;
    s.t_values = Volume3D(g, t);
    s.cluster_labels = Volume3D(g);

    std::vector<ClusterInfo> info;
    const auto kept = threshold_clusters(s, 3.0, 300, &info);
    REQUIRE(info.size() == 1);
    CHECK(info[0].size == 400);
    CHECK(info[0].label == 1);
    CHECK(info[0].peak_t == doctest::Approx(4.11));
    CHECK(g.coords(info[0].peak_index)[0] == 11);
    CHECK(kept.cluster_labels.at(5, 5, 4) == 1.0);
    CHECK(kept.cluster_labels.at(27, 17, 12) == 0.0);

    const auto all = threshold_clusters(s, 3.0, 1, &info);
    CHECK(info.size() == 2);
    CHECK(all.cluster_labels.at(27, 17, 12) == 2.0);
    std::vector<std::uint8_t> set(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) set[i] = t[i] > 3.0;
    std::vector<int> plain;
    label_components(set, g.dims(), Connectivity::edge18, plain);
    for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(all.cluster_labels[i] == plain[i]);

    threshold_clusters(s, 10.0, 1, &info);
    CHECK(info.empty());
    CHECK_THROWS_AS(threshold_clusters(s, 3.0, 0), ParameterError);
}

TEST_CASE("18-connectivity joins edges but not corners") {
    const auto g = GridSpec::centered({4, 4, 4}, {2, 2, 2});
    std::vector<double> t(g.voxel_count(), 0.0);
    t[g.index(0, 0, 0)] = t[g.index(1, 1, 0)] = 5;  // edge neighbours
    t[g.index(3, 3, 3)] = t[g.index(2, 2, 2)] = 5;  // corner neighbours
    StatMap s{Volume3D(g, t), 4, Volume3D(g), std::nullopt};
    std::vector<ClusterInfo> info;
    threshold_clusters(s, 1.0, 1, &info);
    CHECK(info.size() == 3);
}

TEST_CASE("permutation max-T") {
    const auto g = GridSpec::centered({10, 10, 2}, {2, 2, 2});
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n(0, 1);
    Eigen::MatrixXd y(16, g.voxel_count());
    for (Eigen::Index s = 0; s < 16; ++s)
        for (Eigen::Index v = 0; v < y.cols(); ++v) y(s, v) = n(rng) + (s < 8 && v < 20 ? 3.5 : 0.0);
    const auto maps = maps_from(g, y);
    const auto d = DesignMatrix::two_sample(ids(16), balanced(8, 8));
    const auto obs = fit_glm(maps, d, full(g));
    const auto r = permutation_maxT(maps, d, full(g), 200, 42);
    CHECK_FALSE(r.warning.has_value());
    CHECK(r.max_t.size() == 200);
    SUBCASE("p is monotone in t") {
        for (std::size_t a = 0; a < obs.t_values.size(); ++a)
            for (std::size_t b = 0; b < obs.t_values.size(); ++b)
                if (obs.t_values[a] > obs.t_values[b]) REQUIRE(r.p_values[a] <= r.p_values[b]);
    }
    SUBCASE("p follows the counting rule") {
        std::size_t ge = 0;
        for (double m : r.max_t) ge += m >= obs.t_values[5];
        CHECK(r.p_values[5] == doctest::Approx((1.0 + ge) / 201.0).epsilon(1e-15));
    }
    SUBCASE("deterministic given the seed") {
        const auto again = permutation_maxT(maps, d, full(g), 200, 42);
        CHECK(again.max_t == r.max_t);
        const auto other = permutation_maxT(maps, d, full(g), 200, 43);
        CHECK(other.max_t != r.max_t);
    }
    SUBCASE("effect region is detected") {
        std::size_t hits = 0;
        for (Eigen::Index v = 0; v < 20; ++v) hits += r.p_values[v] < 0.05;
        CHECK(hits >= 18);
    }
    SUBCASE("argument checks") {
        CHECK_THROWS_AS(permutation_maxT(maps, d, full(g), 99, 1), ParameterError);
    }
}

TEST_CASE("too few distinct relabelings warns with the achievable count") {
    const auto g = GridSpec::centered({4, 1, 1}, {2, 2, 2});
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 1);
    Eigen::MatrixXd y(6, 4);
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = n(rng);
    const auto r = permutation_maxT(maps_from(g, y), DesignMatrix::two_sample(ids(6), balanced(3, 3)), full(g), 100, 5);
    CHECK(r.distinct_relabelings == 20);
    REQUIRE(r.warning.has_value());
    CHECK(r.warning->find("20") != std::string::npos);
    CHECK(binomial(24, 12) == 2704156);
}

TEST_CASE("mean CBF covariate and cluster table") {
    const auto g = GridSpec::centered({2, 1, 1}, {2, 2, 2});
    const std::vector<Volume3D> maps{Volume3D(g, std::vector<double>{10, 30}), Volume3D(g, std::vector<double>{4, 100})};
    std::vector<std::uint8_t> m{1, 0};
    CHECK(mean_in_mask(maps, BinaryMask(g, m)) == std::vector<double>{10, 4});
    CHECK(mean_in_mask(maps, full(g)) == std::vector<double>{20, 52});
    const auto d = DesignMatrix::two_sample(ids(2), balanced(1, 1)).with_covariate("mean_cbf", {20, 52});
    CHECK(d.x.cols() == 3);
    CHECK(d.contrast[2] == 0.0);

    testing::TempDir tmp;
    write_cluster_table(tmp / "c.tsv", {{1, 400, 4.11, 371}});
    std::ifstream in(tmp / "c.tsv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "label\tsize\tpeak_t\tpeak_voxel_index");
    CHECK(row == "1\t400\t4.11\t371");
}
