#include "registration.hpp"

#include "asap/optimize.hpp"
#include "asap/resample.hpp"
#include "asap/smooth.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

namespace asap::detail {

namespace {

// Samples are split into this many fixed chunks so sums are accumulated in
// the same order whatever the thread count.
constexpr int kChunks = 8;
constexpr std::size_t kParallelThreshold = 20000;

Volume3D downsample(const Volume3D& vol, int f) {
    if (f == 1) return vol;
    const auto& sp = vol.spacing();
    const auto blurred = smooth_gaussian(vol, {sp[0] * f, sp[1] * f, sp[2] * f});
    const auto& d = vol.dims();
    const Dims cd{(d[0] + f - 1) / f, (d[1] + f - 1) / f, (d[2] + f - 1) / f};
    Eigen::Matrix4d a = vol.affine();
    a.topLeftCorner<3, 3>() *= static_cast<double>(f);
    const GridSpec cg(cd, a);
    std::vector<double> out(cg.voxel_count());
    std::size_t idx = 0;
    for (int k = 0; k < cd[2]; ++k)
        for (int j = 0; j < cd[1]; ++j)
            for (int i = 0; i < cd[0]; ++i, ++idx) out[idx] = blurred.at(i * f, j * f, k * f);
    return Volume3D(cg, std::move(out), vol.units());
}

// Trilinear sample where the moving field of view is the voxel footprint:
// centers extended by half a voxel, with edge values clamped in that band.
inline bool sample_footprint(const Volume3D& v, const Eigen::Vector3d& q, double& out) {
    const auto& d = v.dims();
    Eigen::Vector3d c;
    for (int a = 0; a < 3; ++a) {
        if (q[a] < -0.5 || q[a] > d[a] - 0.5) return false;
        c[a] = std::clamp(q[a], 0.0, d[a] - 1.0);
    }
    return sample_trilinear(v, c.x(), c.y(), c.z(), out);
}

template <typename Fn>
void for_chunks(std::size_t n, Fn&& fn) {
    const auto range = [n](int c) { return std::pair{n * c / kChunks, n * (c + 1) / kChunks}; };
    if (n < kParallelThreshold) {
        for (int c = 0; c < kChunks; ++c) fn(c, range(c).first, range(c).second);
        return;
    }
    std::vector<std::jthread> pool;
    for (int c = 0; c < kChunks; ++c) pool.emplace_back([&, c] { fn(c, range(c).first, range(c).second); });
}

double entropy(const std::vector<double>& h, double total) {
    double e = 0.0;
    for (double v : h)
        if (v > 0.0) {
            const double p = v / total;
            e -= p * std::log(p);
        }
    return e;
}

}  // namespace

std::vector<PyramidLevel> build_pyramid(const Volume3D& moving, const Volume3D& fixed,
                                        const std::optional<BinaryMask>& fixed_mask, int levels) {
    std::vector<PyramidLevel> out;
    for (int l = levels - 1; l >= 0; --l) {
        const int f = 1 << l;
        PyramidLevel lv;
        lv.moving = downsample(moving, f);
        const auto fx = downsample(fixed, f);
        const auto& g = fx.grid();
        const auto& d = g.dims();
        std::size_t idx = 0;
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i, ++idx) {
                    if (fixed_mask && !(*fixed_mask)[fixed.grid().index(i * f, j * f, k * f)]) continue;
                    lv.points.push_back(g.world(i, j, k));
                    lv.fixed_values.push_back(fx[idx]);
                }
        if (lv.points.empty()) throw ParameterError("registration mask selects no voxels");
        const auto [fmin, fmax] = std::minmax_element(lv.fixed_values.begin(), lv.fixed_values.end());
        lv.fixed_min = *fmin;
        lv.fixed_max = *fmax;
        const auto md = lv.moving.data();
        const auto [mmin, mmax] = std::minmax_element(md.begin(), md.end());
        lv.moving_min = *mmin;
        lv.moving_max = *mmax;
        out.push_back(std::move(lv));
    }
    return out;
}

double evaluate_metric(const PyramidLevel& lv, const Eigen::Matrix4d& fixed_to_moving, Metric metric, int bins,
                       double min_overlap) {
    const Eigen::Matrix4d w = invert(AffineTransform(lv.moving.affine())).matrix() * fixed_to_moving;
    const Eigen::Matrix3d wl = w.topLeftCorner<3, 3>();
    const Eigen::Vector3d wt = w.topRightCorner<3, 1>();
    const std::size_t n = lv.points.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();

    std::array<std::size_t, kChunks> valid{};
    if (metric == Metric::normalized_cross_correlation) {
        std::array<std::array<double, 5>, kChunks> sums{};
        for_chunks(n, [&](int c, std::size_t lo, std::size_t hi) {
            auto& s = sums[c];
            for (std::size_t p = lo; p < hi; ++p) {
                double m;
                if (!sample_footprint(lv.moving, wl * lv.points[p] + wt, m)) continue;
                const double a = lv.fixed_values[p];
                ++valid[c];
                s[0] += a;
                s[1] += m;
                s[2] += a * a;
                s[3] += m * m;
                s[4] += a * m;
            }
        });
        std::array<double, 5> t{};
        std::size_t count = 0;
        for (int c = 0; c < kChunks; ++c) {
            count += valid[c];
            for (int q = 0; q < 5; ++q) t[q] += sums[c][q];
        }
        if (count < min_overlap * n || count < 2) return nan;
        const double cnt = static_cast<double>(count);
        const double va = t[2] - t[0] * t[0] / cnt, vb = t[3] - t[1] * t[1] / cnt;
        if (!(va > 0.0 && vb > 0.0)) return nan;
        return (t[4] - t[0] * t[1] / cnt) / std::sqrt(va * vb);
    }

    const double fr = lv.fixed_max - lv.fixed_min, mr = lv.moving_max - lv.moving_min;
    if (!(fr > 0.0 && mr > 0.0)) return nan;
    const double fs = (bins - 1) / fr, ms = (bins - 1) / mr;
    std::vector<std::vector<double>> hist(kChunks);
    for_chunks(n, [&](int c, std::size_t lo, std::size_t hi) {
        auto& h = hist[c];
        h.assign(static_cast<std::size_t>(bins) * bins, 0.0);
        for (std::size_t p = lo; p < hi; ++p) {
            double m;
            if (!sample_footprint(lv.moving, wl * lv.points[p] + wt, m)) continue;
            ++valid[c];
            const double bf = std::clamp((lv.fixed_values[p] - lv.fixed_min) * fs, 0.0, bins - 1.0);
            const double bm = std::clamp((m - lv.moving_min) * ms, 0.0, bins - 1.0);
            const int f0 = std::min(static_cast<int>(bf), bins - 2), m0 = std::min(static_cast<int>(bm), bins - 2);
            const double wf = bf - f0, wm = bm - m0;
            double* row0 = &h[static_cast<std::size_t>(f0) * bins + m0];
            double* row1 = row0 + bins;
            row0[0] += (1 - wf) * (1 - wm);
            row0[1] += (1 - wf) * wm;
            row1[0] += wf * (1 - wm);
            row1[1] += wf * wm;
        }
    });
    std::size_t count = 0;
    std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
    for (int c = 0; c < kChunks; ++c) {
        count += valid[c];
        for (std::size_t i = 0; i < joint.size(); ++i) joint[i] += hist[c][i];
    }
    if (count < min_overlap * n || count == 0) return nan;
    std::vector<double> ha(bins, 0.0), hb(bins, 0.0);
    for (int a = 0; a < bins; ++a)
        for (int b = 0; b < bins; ++b) {
            ha[a] += joint[static_cast<std::size_t>(a) * bins + b];
            hb[b] += joint[static_cast<std::size_t>(a) * bins + b];
        }
    const double total = static_cast<double>(count);
    const double hab = entropy(joint, total);
    if (!(hab > 0.0)) return nan;
    return (entropy(ha, total) + entropy(hb, total)) / hab;
}

Eigen::Vector3d positive_centroid(const Volume3D& v) {
    const auto& g = v.grid();
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double w = v[i];
        if (!(w > 0.0) || !std::isfinite(w)) continue;
        const auto c = g.coords(i);
        acc += w * Eigen::Vector3d(c[0], c[1], c[2]);
        total += w;
    }
    const auto& d = g.dims();
    const Eigen::Vector3d ijk = total > 0.0 ? Eigen::Vector3d(acc / total)
                                            : Eigen::Vector3d(0.5 * (d[0] - 1), 0.5 * (d[1] - 1), 0.5 * (d[2] - 1));
    return g.world(ijk.x(), ijk.y(), ijk.z());
}

void require_variance(const Volume3D& v, const char* which, const Eigen::Matrix4d& fallback) {
    double mean = 0.0;
    for (double x : v.data()) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v.data()) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    if (!(var > 1e-12 * std::max(1.0, mean * mean)))
        throw RegistrationFailure(std::string("registration failed: ") + which + " image has zero intensity variance",
                                  AffineTransform(fallback));
}

PyramidResult optimize_pyramid(const std::vector<PyramidLevel>& levels, const ParamMap& map,
                               const Eigen::VectorXd& x0, const Eigen::VectorXd& coarse_step,
                               const Eigen::VectorXd& tolerance, const std::vector<Eigen::VectorXd>& restarts,
                               const RegistrationConfig& cfg) {
    PyramidResult res;
    res.params = x0;
    const int nl = static_cast<int>(levels.size());
    for (int li = 0; li < nl; ++li) {
        const auto& lv = levels[li];
        const double shrink = std::ldexp(1.0, -li);
        const auto cost = [&](const Eigen::VectorXd& p) {
            const double m = evaluate_metric(lv, map(p), cfg.metric, cfg.histogram_bins, cfg.min_overlap_fraction);
            return std::isfinite(m) ? -m : std::numeric_limits<double>::infinity();
        };
        PowellOptions opt;
        opt.initial_step = coarse_step * shrink;
        opt.tolerance = tolerance * std::ldexp(1.0, nl - 1 - li);
        opt.max_iter = cfg.max_iter_per_level;

        std::vector<Eigen::VectorXd> starts{res.params};
        if (li == 0)
            for (const auto& r : restarts) starts.push_back(x0 + r);
        PowellResult best;
        best.value = std::numeric_limits<double>::max();
        for (const auto& s : starts) {
            auto r = powell_minimize(cost, s, opt);
            if (r.value < best.value) best = std::move(r);
        }
        if (!(best.value < std::numeric_limits<double>::max()))
            throw RegistrationFailure(li == 0 ? "registration failed: no start reached a valid metric at the coarsest "
                                                "level (insufficient overlap)"
                                              : "registration failed: metric became invalid during refinement",
                                      AffineTransform(map(res.params)));
        res.params = best.x;
        res.metric = -best.value;
        res.metric_per_level.push_back(res.metric);
    }
    return res;
}

Eigen::Matrix4d rigid_about(const Eigen::Vector3d& rot_deg, const Eigen::Vector3d& trans, const Eigen::Vector3d& c) {
    const double k = std::numbers::pi / 180.0;
    const Eigen::Matrix3d r = rotation_zyx(rot_deg.x() * k, rot_deg.y() * k, rot_deg.z() * k);
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = c + trans - r * c;
    return m;
}

}  // namespace asap::detail
