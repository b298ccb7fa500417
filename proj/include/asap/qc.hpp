#pragma once

#include "asap/mask.hpp"
#include "asap/pipeline.hpp"
#include "asap/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace asap {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // row-major RGB, top row first
};

/// 8-bit RGB PNG, zlib-compressed, no filtering.
void write_png(const std::filesystem::path& path, const RgbImage& img);

inline constexpr std::array<double, 3> kMosaicFractions{0.25, 0.50, 0.75};

/// round(fraction * (n - 1)).
int mosaic_slice_index(int n, double fraction);

/// Upper end of the overlay window: the 98th percentile of CBF inside
/// `mask` (or over the finite non-zero voxels when no mask is given).
double overlay_window(const Volume3D& cbf, const std::optional<BinaryMask>& mask);

/// 3x3 grid: rows axial, coronal, sagittal; columns at kMosaicFractions.
/// `underlay` must share the CBF grid. Each voxel becomes `zoom` x `zoom` pixels.
RgbImage render_mosaic(const Volume3D& cbf, const Volume3D& underlay, const std::optional<BinaryMask>& mask,
                       int zoom = 2);

/// Writes out_dir/index.html plus one mosaic PNG per subject with a
/// normalized CBF map. Paths in the report resolve against run.run_dir.
/// Throws IoError when out_dir cannot be written.
std::filesystem::path emit_qc_report(const RunReport& run, const std::filesystem::path& out_dir);

}  // namespace asap
