#pragma once

#include "asap/volume.hpp"

#include <array>
#include <vector>

namespace asap {

/// Separable Gaussian smoothing with per-axis FWHM in mm. The kernel is
/// sampled at integer voxel offsets out to ceil(4 sigma), renormalised to
/// unit sum, and applied with zero padding. FWHM 0 leaves an axis alone.
Volume3D smooth_gaussian(const Volume3D& vol, const std::array<double, 3>& fwhm_mm);

/// Same, processing the axes in the given order (results agree to rounding).
Volume3D smooth_gaussian(const Volume3D& vol, const std::array<double, 3>& fwhm_mm, const std::array<int, 3>& axis_order);

/// Unit-sum 1-D kernel for a sigma in voxels; {1} when sigma is 0.
std::vector<double> gaussian_kernel(double sigma_voxels);

/// sigma = FWHM / (2 sqrt(2 ln 2)).
double fwhm_to_sigma(double fwhm);

}  // namespace asap
