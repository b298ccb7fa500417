#include "asap/volume.hpp"

#include "asap/error.hpp"

#include <cmath>

namespace asap {

GridSpec::GridSpec(Dims dims, const Eigen::Matrix4d& voxel_to_world) : dims_(dims), affine_(voxel_to_world) {
    for (int d : dims_)
        if (d <= 0) throw GeometryError("grid dimensions must be positive");
    AffineTransform check(voxel_to_world);  // validates bottom row and invertibility
    (void)check;
    for (int c = 0; c < 3; ++c) spacing_[c] = voxel_to_world.block<3, 1>(0, c).norm();
}

GridSpec GridSpec::axis_aligned(Dims dims, Vec3 spacing, Vec3 origin_mm) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int c = 0; c < 3; ++c) {
        if (!(spacing[c] > 0.0)) throw GeometryError("voxel spacing must be positive");
        m(c, c) = spacing[c];
        m(c, 3) = origin_mm[c];
    }
    return GridSpec(dims, m);
}

GridSpec GridSpec::centered(Dims dims, Vec3 spacing) {
    Vec3 origin;
    for (int c = 0; c < 3; ++c) origin[c] = -0.5 * (dims[c] - 1) * spacing[c];
    return axis_aligned(dims, spacing, origin);
}

bool GridSpec::matches(const GridSpec& other, double tol) const {
    if (dims_ != other.dims_) return false;
    return ((affine_ - other.affine_).cwiseAbs().maxCoeff() <= tol);
}

Volume3D::Volume3D(GridSpec grid, std::vector<double> data, std::string units)
    : grid_(std::move(grid)), data_(std::move(data)), units_(std::move(units)) {
    if (data_.size() != grid_.voxel_count())
        throw GeometryError("data length " + std::to_string(data_.size()) +
                            " does not match grid voxel count " +
                            std::to_string(grid_.voxel_count()));
}

Volume3D::Volume3D(GridSpec grid, std::string units)
    : grid_(std::move(grid)), data_(grid_.voxel_count(), 0.0), units_(std::move(units)) {}

Eigen::Vector3d center_of_mass(const Volume3D& vol) {
    const auto& g = vol.grid();
    const auto& d = g.dims();
    Eigen::Vector3d acc = Eigen::Vector3d::Zero();
    double total = 0.0;
    std::size_t idx = 0;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i, ++idx) {
                const double v = vol[idx];
                if (v == 0.0) continue;
                acc += v * Eigen::Vector3d(i, j, k);
                total += v;
            }
    if (!(total > 0.0)) throw DegenerateInputError("volume has no positive intensity mass");
    const Eigen::Vector3d ijk = acc / total;
    return g.world(ijk.x(), ijk.y(), ijk.z());
}

Volume3D set_origin(const Volume3D& vol, const Eigen::Vector3d& new_origin_world) {
    Eigen::Matrix4d m = vol.affine();
    m.topRightCorner<3, 1>() -= new_origin_world;
    return vol.with_grid(vol.grid().with_affine(m));
}

Volume3D set_origin_center_of_mass(const Volume3D& vol) {
    for (double v : vol.data())
        if (!std::isfinite(v) || v < 0.0)
            throw ParameterError("center-of-mass origin requires finite non-negative intensities");
    return set_origin(vol, center_of_mass(vol));
}

void require_same_grid(const GridSpec& a, const GridSpec& b, const std::string& what) {
    if (!a.matches(b)) throw GeometryError("grid mismatch: " + what);
}

}  // namespace asap
