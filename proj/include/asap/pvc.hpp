#pragma once

#include "asap/brainmask.hpp"
#include "asap/mask.hpp"
#include "asap/volume.hpp"

#include <array>
#include <cstddef>
#include <optional>

namespace asap {

struct PvcConfig {
    /// Regression neighbourhood in voxels; each entry odd.
    std::array<int, 3> kernel_dims{5, 5, 1};
    /// Global WM/GM perfusion ratio used by the PET-style correction.
    double wm_gm_ratio = 0.4;
    /// Largest accepted eigenvalue ratio of the 2x2 normal matrix.
    double condition_limit = 1e6;
    /// Minimum fraction of the kernel that must lie inside the mask.
    double min_valid_fraction = 0.5;
    bool clamp_negative = true;

    void validate() const;
};

struct PvcDiagnostics {
    std::size_t in_mask = 0;
    std::size_t solved = 0;
    /// Asllani: no usable two- or one-column solve; output set to 0.
    std::size_t rank_deficient = 0;
    /// Asllani: kernel support below min_valid_fraction. PET: tissue
    /// denominator below 0.1 (those voxels are not counted as solved).
    std::size_t low_support = 0;
    std::size_t negative_clamped = 0;
};

struct PvcResult {
    Volume3D cbf_gm;
    std::optional<Volume3D> cbf_wm;
    PvcDiagnostics diagnostics;
};

/// I_corr = I_uncorr / (P_GM + ratio * P_WM) inside the mask.
PvcResult pvc_pet(const Volume3D& cbf, const TissueProbMaps& tissue, const BinaryMask& mask, const PvcConfig& cfg = {});

/// Local linear regression of CBF on (P_GM, P_WM) over each voxel's kernel
/// neighbourhood, giving separate GM and WM perfusion maps.
PvcResult pvc_asllani(const Volume3D& cbf, const TissueProbMaps& tissue, const BinaryMask& mask,
                      const PvcConfig& cfg = {});

}  // namespace asap
