#include "asap/brainmask.hpp"

#include "asap/error.hpp"
#include "asap/nifti.hpp"
#include "asap/resample.hpp"
#include "asap/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace asap {

void TissueProbMaps::validate() const {
    require_same_grid(p_gm.grid(), p_wm.grid(), "GM vs WM probability map");
    require_same_grid(p_gm.grid(), p_csf.grid(), "GM vs CSF probability map");
    for (std::size_t i = 0; i < p_gm.size(); ++i) {
        const double g = p_gm[i], w = p_wm[i], c = p_csf[i];
        if (!(g >= 0 && g <= 1 && w >= 0 && w <= 1 && c >= 0 && c <= 1))
            throw ValidationError("tissue probability outside [0,1] at voxel " + std::to_string(i));
        if (g + w + c > 1.0 + 1e-6)
            throw ValidationError("tissue probabilities sum to " + std::to_string(g + w + c) + " at voxel " +
                                  std::to_string(i));
    }
}

BinaryMask rough_strip(const Volume3D& asl, double frac) {
    if (!(frac > 0.0 && frac < 1.0)) throw ParameterError("rough-strip fraction must lie in (0,1)");
    for (double v : asl.data())
        if (!std::isfinite(v)) throw ParameterError("rough_strip requires finite intensities");
    const double threshold = frac * robust_max(asl.data());
    if (!(threshold > 0.0)) throw DegenerateInputError("rough_strip: volume has no non-zero intensity");
    std::vector<std::uint8_t> m(asl.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(asl[i]) >= threshold;
    BinaryMask mask(asl.grid(), std::move(m));
    if (mask.empty()) throw DegenerateInputError("rough_strip produced an empty mask");
    return close(largest_component(mask));
}

double otsu_threshold(const std::vector<double>& samples) {
    if (samples.empty()) throw DegenerateInputError("Otsu threshold of an empty sample");
    const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) throw DegenerateInputError("Otsu threshold undefined: single intensity value");
    constexpr int kBins = 256;
    std::array<double, kBins> hist{};
    const double width = (hi - lo) / kBins;
    for (double v : samples) {
        const int b = std::min(kBins - 1, static_cast<int>((v - lo) / (hi - lo) * kBins));
        hist[b] += 1.0;
    }
    const double total = static_cast<double>(samples.size());
    double sum_all = 0.0;
    for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
    double w0 = 0.0, sum0 = 0.0, best = -1.0;
    int best_bin = 0;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += hist[b];
        sum0 += b * hist[b];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            best_bin = b;
        }
    }
    return lo + (best_bin + 1) * width;
}

BinaryMask brain_mask_structural(const Volume3D& structural) {
    std::vector<double> nonzero;
    for (double v : structural.data()) {
        if (!std::isfinite(v) || v < 0.0)
            throw ParameterError("structural brain mask requires finite non-negative intensities");
        if (v != 0.0) nonzero.push_back(v);
    }
    const double t = otsu_threshold(nonzero);
    std::vector<std::uint8_t> m(structural.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = structural[i] >= t;
    BinaryMask mask(structural.grid(), std::move(m));
    if (mask.empty()) throw DegenerateInputError("structural brain mask is empty");
    return fill_holes(close(largest_component(mask)));
}

namespace {

constexpr int K = 3;

struct Components {
    std::array<double, K> mean{}, var{}, weight{};
};

double log_gauss(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

// k-means++ seeding followed by Lloyd iterations; deterministic for a seed.
Components kmeans_init(const std::vector<double>& x, std::uint64_t seed, double var_floor) {
    std::mt19937_64 rng(seed);
    const std::size_t n = x.size();
    std::array<double, K> centers{};
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    centers[0] = x[pick(rng)];
    std::vector<double> d2(n);
    for (int c = 1; c < K; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int p = 0; p < c; ++p) best = std::min(best, (x[i] - centers[p]) * (x[i] - centers[p]));
            d2[i] = best;
            total += best;
        }
        if (!(total > 0.0)) throw DegenerateInputError("segmentation: masked intensities are constant");
        const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
        double acc = 0.0;
        std::size_t chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            acc += d2[i];
            if (acc >= target && d2[i] > 0.0) {
                chosen = i;
                break;
            }
        }
        centers[c] = x[chosen];
    }
    std::vector<int> assign(n, -1);
    for (int it = 0; it < 100; ++it) {
        std::sort(centers.begin(), centers.end());
        bool changed = false;
        std::array<double, K> sum{}, cnt{};
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            for (int c = 1; c < K; ++c)
                if (std::abs(x[i] - centers[c]) < std::abs(x[i] - centers[best])) best = c;
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
            sum[best] += x[i];
            cnt[best] += 1;
        }
        for (int c = 0; c < K; ++c)
            if (cnt[c] > 0) centers[c] = sum[c] / cnt[c];
        if (!changed) break;
    }
    Components comp;
    std::array<double, K> cnt{}, ss{};
    for (std::size_t i = 0; i < n; ++i) {
        const int c = assign[i];
        cnt[c] += 1;
        ss[c] += (x[i] - centers[c]) * (x[i] - centers[c]);
    }
    for (int c = 0; c < K; ++c) {
        comp.mean[c] = centers[c];
        comp.weight[c] = std::max(cnt[c], 1.0) / static_cast<double>(n);
        comp.var[c] = std::max(cnt[c] > 1 ? ss[c] / cnt[c] : 1.0, var_floor);
    }
    return comp;
}

}  // namespace

TissueProbMaps segment_tissues(const Volume3D& structural, const BinaryMask& mask, const SegmentationConfig& cfg,
                               MixtureFit* fit) {
    require_same_grid(structural.grid(), mask.grid(), "structural vs brain mask");
    if (cfg.max_iter < 1) throw ParameterError("segmentation max_iter must be >= 1");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            if (!std::isfinite(structural[i])) throw ParameterError("segmentation requires finite intensities");
            idx.push_back(i);
        }
    if (idx.size() < static_cast<std::size_t>(K)) throw DegenerateInputError("segmentation mask has fewer than 3 voxels");

    // Work on standardised intensities so the fit is invariant to affine
    // rescaling of the input.
    double mean = 0.0;
    for (auto i : idx) mean += structural[i];
    mean /= static_cast<double>(idx.size());
    double var = 0.0;
    for (auto i : idx) var += (structural[i] - mean) * (structural[i] - mean);
    var /= static_cast<double>(idx.size());
    if (!(var > 0.0)) throw DegenerateInputError("segmentation: masked intensities are constant");
    const double sd = std::sqrt(var);
    std::vector<double> x(idx.size());
    for (std::size_t n = 0; n < idx.size(); ++n) x[n] = (structural[idx[n]] - mean) / sd;

    constexpr double kVarFloor = 1e-6;
    Components c = kmeans_init(x, cfg.seed, kVarFloor);
    const std::size_t n = x.size();
    std::vector<double> resp(n * K);
    std::vector<double> trace;
    double prev_ll = -std::numeric_limits<double>::infinity();
    bool converged = false;
    int iter = 0;
    for (; iter < cfg.max_iter; ++iter) {
        // E-step
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::array<double, K> lp;
            double mx = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < K; ++k) {
                lp[k] = std::log(c.weight[k]) + log_gauss(x[i], c.mean[k], c.var[k]);
                mx = std::max(mx, lp[k]);
            }
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += std::exp(lp[k] - mx);
            const double lse = mx + std::log(s);
            ll += lse;
            for (int k = 0; k < K; ++k) resp[i * K + k] = std::exp(lp[k] - lse);
        }
        trace.push_back(ll - static_cast<double>(n) * std::log(sd));  // in original intensity units
        if ((ll - prev_ll) / static_cast<double>(n) < cfg.tolerance) {
            converged = true;
            break;
        }
        prev_ll = ll;
        // M-step
        for (int k = 0; k < K; ++k) {
            double nk = 0.0, sx = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                nk += resp[i * K + k];
                sx += resp[i * K + k] * x[i];
            }
            nk = std::max(nk, 1e-12);
            const double m = sx / nk;
            double sv = 0.0;
            for (std::size_t i = 0; i < n; ++i) sv += resp[i * K + k] * (x[i] - m) * (x[i] - m);
            c.mean[k] = m;
            c.var[k] = std::max(sv / nk, kVarFloor);
            c.weight[k] = nk / static_cast<double>(n);
        }
    }
    if (!converged)
        throw ConvergenceError("segmentation EM did not converge within " + std::to_string(cfg.max_iter) +
                                   " iterations",
                               trace);

    std::array<int, K> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) { return c.mean[a] < c.mean[b]; });
    if (fit) {
        for (int r = 0; r < K; ++r) {
            fit->means[r] = mean + sd * c.mean[order[r]];
            fit->variances[r] = var * c.var[order[r]];
            fit->weights[r] = c.weight[order[r]];
        }
        fit->log_likelihood_trace = trace;
        fit->iterations = iter + 1;
    }
    // Ascending mean: T1w -> CSF, GM, WM. T2w reverses.
    std::array<int, K> tissue_of_rank;  // rank -> 0 csf, 1 gm, 2 wm
    if (cfg.contrast == StructuralContrast::t1w)
        tissue_of_rank = {0, 1, 2};
    else
        tissue_of_rank = {2, 1, 0};

    std::array<std::vector<double>, K> maps;
    for (auto& m : maps) m.assign(structural.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < K; ++k) s += resp[i * K + k];
        for (int r = 0; r < K; ++r) maps[tissue_of_rank[r]][idx[i]] = resp[i * K + order[r]] / s;
    }
    const auto& g = structural.grid();
    return {Volume3D(g, std::move(maps[1]), "probability"), Volume3D(g, std::move(maps[2]), "probability"),
            Volume3D(g, std::move(maps[0]), "probability")};
}

TissueProbMaps accept_tissue_volumes(const Volume3D& gm, const Volume3D& wm, const Volume3D& csf,
                                     const GridSpec& target) {
    std::array<std::vector<double>, 3> maps;
    const Volume3D* src[3] = {&gm, &wm, &csf};
    for (int t = 0; t < 3; ++t) {
        const Volume3D r = src[t]->grid().matches(target, 1e-9) ? *src[t] : resample(*src[t], target, Interp::trilinear);
        maps[t].assign(r.data().begin(), r.data().end());
        for (auto& v : maps[t]) {
            if (!std::isfinite(v)) throw ValidationError("tissue map contains non-finite values");
            v = std::clamp(v, 0.0, 1.0);
        }
    }
    for (std::size_t i = 0; i < maps[0].size(); ++i) {
        const double s = maps[0][i] + maps[1][i] + maps[2][i];
        if (s > 1.0 + 1e-3)
            throw ValidationError("GM+WM+CSF = " + std::to_string(s) + " exceeds 1 at voxel " + std::to_string(i));
        if (s > 1.0)
            for (auto& m : maps) m[i] /= s;
    }
    TissueProbMaps out{Volume3D(target, std::move(maps[0]), "probability"),
                       Volume3D(target, std::move(maps[1]), "probability"),
                       Volume3D(target, std::move(maps[2]), "probability")};
    out.validate();
    return out;
}

TissueProbMaps accept_external_tissue_maps(const std::array<std::filesystem::path, 3>& paths,
                                           const GridSpec& target) {
    return accept_tissue_volumes(read_nifti(paths[0]), read_nifti(paths[1]), read_nifti(paths[2]), target);
}

}  // namespace asap
