#pragma once

#include "asap/mask.hpp"
#include "asap/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace asap {

/// Grey matter, white matter and CSF probabilities on one shared grid.
struct TissueProbMaps {
    Volume3D p_gm;
    Volume3D p_wm;
    Volume3D p_csf;

    const GridSpec& grid() const { return p_gm.grid(); }
    /// Throws ValidationError when a map leaves [0,1], the maps disagree on
    /// geometry, or the three sum above 1 + 1e-6.
    void validate() const;
};

enum class StructuralContrast { t1w, t2w };

struct SegmentationConfig {
    StructuralContrast contrast = StructuralContrast::t1w;
    int max_iter = 200;
    /// Stop once the log-likelihood gain per voxel falls below this.
    double tolerance = 1e-6;
    std::uint64_t seed = 42;
};

/// Threshold |intensity| at `frac` of the robust maximum, keep the largest
/// 6-connected component, close with a 3x3x3 cube.
BinaryMask rough_strip(const Volume3D& asl, double frac = 0.20);

/// Otsu threshold over the non-zero intensities, largest component, closing
/// and interior hole filling.
BinaryMask brain_mask_structural(const Volume3D& structural);

/// Otsu threshold of the given samples (256-bin histogram over their range).
/// Throws DegenerateInputError when all samples are equal.
double otsu_threshold(const std::vector<double>& samples);

/// Fitted three-class Gaussian mixture, components sorted by ascending mean
/// in the original intensity units.
struct MixtureFit {
    std::array<double, 3> means{};
    std::array<double, 3> variances{};
    std::array<double, 3> weights{};
    std::vector<double> log_likelihood_trace;
    int iterations = 0;
};

/// Three-class Gaussian mixture fitted by EM over the masked intensities.
/// Posteriors sum to 1 inside the mask and are 0 outside. The `fit` out
/// parameter, when given, receives the mixture parameters.
TissueProbMaps segment_tissues(const Volume3D& structural, const BinaryMask& mask,
                               const SegmentationConfig& cfg = {}, MixtureFit* fit = nullptr);

/// Builds tissue maps from already loaded probability volumes: resample
/// onto `target` (trilinear, shared world frame), clamp to [0,1] and check
/// that GM+WM+CSF <= 1 + 1e-3. Sums in (1, 1+1e-3] are scaled back to 1.
TissueProbMaps accept_tissue_volumes(const Volume3D& gm, const Volume3D& wm, const Volume3D& csf,
                                     const GridSpec& target);

/// File-based variant: paths in GM, WM, CSF order.
TissueProbMaps accept_external_tissue_maps(const std::array<std::filesystem::path, 3>& paths,
                                           const GridSpec& target);

}  // namespace asap
