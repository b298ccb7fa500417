#include "asap/resample.hpp"

#include "asap/error.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace asap {

namespace {

// Indices within this distance of an integer snap to it, so that identity
// mappings reproduce input values exactly despite rounding in the matrix
// products.
constexpr double kSnap = 1e-9;
constexpr double kEdge = 1e-6;

inline double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < kSnap ? r : v;
}

// Returns the lower corner and weight along one axis; false if outside.
inline bool axis_weights(double x, int n, int& i0, double& t) {
    if (x < -kEdge || x > (n - 1) + kEdge) return false;
    x = std::clamp(x, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<int>(std::floor(x));
    if (i0 >= n - 1) {
        i0 = n - 1;
        t = 0.0;
    } else {
        t = x - i0;
    }
    return true;
}

}  // namespace

Eigen::Matrix4d voxel_map(const GridSpec& src, const GridSpec& target, const AffineTransform& world_map) {
    const AffineTransform src_inv = invert(AffineTransform(src.affine()));
    return src_inv.matrix() * world_map.matrix() * target.affine();
}

bool sample_trilinear(const Volume3D& src, double x, double y, double z, double& out) {
    const auto& d = src.dims();
    int i0, j0, k0;
    double tx, ty, tz;
    if (!axis_weights(snap(x), d[0], i0, tx) || !axis_weights(snap(y), d[1], j0, ty) ||
        !axis_weights(snap(z), d[2], k0, tz))
        return false;
    const int i1 = tx > 0 ? i0 + 1 : i0;
    const int j1 = ty > 0 ? j0 + 1 : j0;
    const int k1 = tz > 0 ? k0 + 1 : k0;
    const auto& g = src.grid();
    const auto v = [&](int i, int j, int k) { return src[g.index(i, j, k)]; };
    if (tx == 0 && ty == 0 && tz == 0) {
        out = v(i0, j0, k0);
        return true;
    }
    const double c00 = v(i0, j0, k0) * (1 - tx) + v(i1, j0, k0) * tx;
    const double c10 = v(i0, j1, k0) * (1 - tx) + v(i1, j1, k0) * tx;
    const double c01 = v(i0, j0, k1) * (1 - tx) + v(i1, j0, k1) * tx;
    const double c11 = v(i0, j1, k1) * (1 - tx) + v(i1, j1, k1) * tx;
    const double c0 = c00 * (1 - ty) + c10 * ty;
    const double c1 = c01 * (1 - ty) + c11 * ty;
    out = c0 * (1 - tz) + c1 * tz;
    return true;
}

bool sample_nearest(const Volume3D& src, double x, double y, double z, double& out) {
    const int i = static_cast<int>(std::floor(x + 0.5 + kSnap));
    const int j = static_cast<int>(std::floor(y + 0.5 + kSnap));
    const int k = static_cast<int>(std::floor(z + 0.5 + kSnap));
    if (!src.grid().contains(i, j, k)) return false;
    out = src.at(i, j, k);
    return true;
}

Volume3D resample(const Volume3D& src, const GridSpec& target, const AffineTransform& world_map, Interp interp) {
    if (condition_number(world_map.matrix()) > 1e12) throw GeometryError("resampling map is singular");
    const Eigen::Matrix4d m = voxel_map(src.grid(), target, world_map);
    const auto& d = target.dims();
    std::vector<double> out(target.voxel_count(), 0.0);
    std::size_t idx = 0;
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j) {
            const Eigen::Vector3d row0 = m.block<3, 1>(0, 1) * j + m.block<3, 1>(0, 2) * k + m.block<3, 1>(0, 3);
            for (int i = 0; i < d[0]; ++i, ++idx) {
                const Eigen::Vector3d p = row0 + m.block<3, 1>(0, 0) * i;
                double v = 0.0;
                const bool inside = interp == Interp::nearest ? sample_nearest(src, p.x(), p.y(), p.z(), v)
                                                              : sample_trilinear(src, p.x(), p.y(), p.z(), v);
                out[idx] = inside ? v : 0.0;
            }
        }
    return Volume3D(target, std::move(out), src.units());
}

}  // namespace asap
