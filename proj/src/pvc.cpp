#include "asap/pvc.hpp"

#include "asap/error.hpp"

#include <cmath>
#include <limits>

namespace asap {

void PvcConfig::validate() const {
    for (int k : kernel_dims)
        if (k < 1 || k % 2 == 0) throw ParameterError("PVC kernel dimensions must be odd and positive");
    if (!(wm_gm_ratio > 0.0)) throw ParameterError("PVC WM/GM ratio must be positive");
    if (!(condition_limit > 1.0)) throw ParameterError("PVC condition limit must exceed 1");
    if (!(min_valid_fraction > 0.0 && min_valid_fraction <= 1.0))
        throw ParameterError("PVC min_valid_fraction must lie in (0,1]");
}

namespace {

void check_inputs(const Volume3D& cbf, const TissueProbMaps& tissue, const BinaryMask& mask) {
    require_same_grid(cbf.grid(), tissue.p_gm.grid(), "CBF vs GM probability map");
    require_same_grid(cbf.grid(), tissue.p_wm.grid(), "CBF vs WM probability map");
    require_same_grid(cbf.grid(), mask.grid(), "CBF vs brain mask");
}

// Eigenvalue ratio of a symmetric 2x2 matrix; infinite when not positive definite.
double condition_2x2(double a, double b, double d) {
    const double tr = a + d;
    const double disc = std::sqrt(std::max(0.0, 0.25 * (a - d) * (a - d) + b * b));
    const double hi = 0.5 * tr + disc, lo = 0.5 * tr - disc;
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

}  // namespace

PvcResult pvc_pet(const Volume3D& cbf, const TissueProbMaps& tissue, const BinaryMask& mask, const PvcConfig& cfg) {
    cfg.validate();
    check_inputs(cbf, tissue, mask);
    std::vector<double> out(cbf.size(), 0.0);
    PvcDiagnostics diag;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!mask[i]) continue;
        ++diag.in_mask;
        const double denom = tissue.p_gm[i] + cfg.wm_gm_ratio * tissue.p_wm[i];
        if (denom < 0.1) {
            ++diag.low_support;
            continue;
        }
        out[i] = cbf[i] / denom;
        ++diag.solved;
    }
    return {cbf.with_data(std::move(out)), std::nullopt, diag};
}

PvcResult pvc_asllani(const Volume3D& cbf, const TissueProbMaps& tissue, const BinaryMask& mask,
                      const PvcConfig& cfg) {
    cfg.validate();
    check_inputs(cbf, tissue, mask);
    const auto& g = cbf.grid();
    const auto& d = g.dims();
    const int rx = cfg.kernel_dims[0] / 2, ry = cfg.kernel_dims[1] / 2, rz = cfg.kernel_dims[2] / 2;

    std::vector<double> gm(cbf.size(), 0.0), wm(cbf.size(), 0.0);
    PvcDiagnostics diag;
    const auto pg = tissue.p_gm.data(), pw = tissue.p_wm.data(), y = cbf.data();

    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const std::size_t c = g.index(i, j, k);
                if (!mask[c]) continue;
                ++diag.in_mask;
                double sgg = 0, sgw = 0, sww = 0, sgy = 0, swy = 0, tg = 0, tw = 0;
                int support = 0, in_grid = 0;
                for (int z = std::max(0, k - rz); z <= std::min(d[2] - 1, k + rz); ++z)
                    for (int v = std::max(0, j - ry); v <= std::min(d[1] - 1, j + ry); ++v)
                        for (int u = std::max(0, i - rx); u <= std::min(d[0] - 1, i + rx); ++u) {
                            const std::size_t n = g.index(u, v, z);
                            ++in_grid;
                            if (!mask[n]) continue;
                            ++support;
                            sgg += pg[n] * pg[n];
                            sgw += pg[n] * pw[n];
                            sww += pw[n] * pw[n];
                            sgy += pg[n] * y[n];
                            swy += pw[n] * y[n];
                            tg += pg[n];
                            tw += pw[n];
                        }
                // Support is judged against the part of the kernel inside the grid.
                const bool low = support < cfg.min_valid_fraction * in_grid;
                if (low) ++diag.low_support;

                double bg = 0.0, bw = 0.0;
                bool ok = false;
                if (!low && condition_2x2(sgg, sgw, sww) <= cfg.condition_limit) {
                    const double det = sgg * sww - sgw * sgw;
                    bg = (sww * sgy - sgw * swy) / det;
                    bw = (sgg * swy - sgw * sgy) / det;
                    ok = true;
                } else {
                    // Single-column fallback for the dominant tissue.
                    const double total = tg + tw;
                    if (total > 0.0 && tg >= 0.9 * total && sgg > 0.0) {
                        bg = sgy / sgg;
                        ok = true;
                    } else if (total > 0.0 && tw >= 0.9 * total && sww > 0.0) {
                        bw = swy / sww;
                        ok = true;
                    }
                }
                if (!ok) {
                    ++diag.rank_deficient;
                    continue;
                }
                ++diag.solved;
                if (cfg.clamp_negative && (bg < 0.0 || bw < 0.0)) {
                    ++diag.negative_clamped;
                    bg = std::max(bg, 0.0);
                    bw = std::max(bw, 0.0);
                }
                gm[c] = bg;
                wm[c] = bw;
            }
    return {cbf.with_data(std::move(gm)), cbf.with_data(std::move(wm)), diag};
}

}  // namespace asap
