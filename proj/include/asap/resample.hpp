#pragma once

#include "asap/volume.hpp"

namespace asap {

enum class Interp { nearest, trilinear };

/// Pull-back resampling: each target voxel takes the value of `src` at
/// world_map(target world position). `world_map` maps target-world into
/// src-world. Samples outside the source field are 0.
Volume3D resample(const Volume3D& src, const GridSpec& target, const AffineTransform& world_map, Interp interp);

/// Resampling when both grids already share one world frame.
inline Volume3D resample(const Volume3D& src, const GridSpec& target, Interp interp) {
    return resample(src, target, AffineTransform::identity(), interp);
}

/// Voxel-to-voxel mapping from target indices to source indices.
Eigen::Matrix4d voxel_map(const GridSpec& src, const GridSpec& target, const AffineTransform& world_map);

/// Trilinear sample at fractional source indices. Returns false when the
/// point is outside the grid.
bool sample_trilinear(const Volume3D& src, double x, double y, double z, double& out);
bool sample_nearest(const Volume3D& src, double x, double y, double z, double& out);

}  // namespace asap
