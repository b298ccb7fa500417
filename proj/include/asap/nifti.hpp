#pragma once

#include "asap/volume.hpp"

#include <filesystem>

namespace asap {

/// Reads a single-volume NIfTI-1 image (".nii", ".nii.gz", or an "ni1"
/// ".hdr"/".img" pair). Either byte order is accepted. Voxel values are
/// scaled by scl_slope/scl_inter when scl_slope != 0.
///
/// Geometry comes from the sform when sform_code > 0, otherwise the qform
/// when qform_code > 0, otherwise the diagonal pixdim.
///
/// Throws FormatError (naming the header field), UnsupportedDatatypeError,
/// or IoError.
Volume3D read_nifti(const std::filesystem::path& path);

/// Writes float32 single-file NIfTI-1. Paths ending in ".gz" are
/// gzip-compressed. sform_code = qform_code = 2; the qform holds the
/// closest rotation to the affine's linear block.
void write_nifti(const Volume3D& vol, const std::filesystem::path& path);

}  // namespace asap
