#pragma once

#include <Eigen/Core>
#include <array>

namespace asap {

/// A 4x4 homogeneous mapping, either world->world or voxel->world.
/// Always invertible with bottom row (0,0,0,1).
class AffineTransform {
public:
    AffineTransform() : m_(Eigen::Matrix4d::Identity()) {}
    /// Throws GeometryError when the bottom row is wrong or the matrix is
    /// (near-)singular.
    explicit AffineTransform(const Eigen::Matrix4d& m);

    static AffineTransform identity() { return {}; }
    static AffineTransform translation(double x, double y, double z);

    const Eigen::Matrix4d& matrix() const noexcept { return m_; }
    Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
        return m_.topLeftCorner<3, 3>() * p + m_.topRightCorner<3, 1>();
    }

private:
    Eigen::Matrix4d m_;
};

/// `a` after `b`: compose(a, b).apply(p) == a.apply(b.apply(p)).
AffineTransform compose(const AffineTransform& a, const AffineTransform& b);
AffineTransform invert(const AffineTransform& a);

/// Ratio of extreme singular values of the linear 3x3 block.
double condition_number(const Eigen::Matrix4d& m);

/// Rigid motion about the world origin. Rotation is Rz * Ry * Rx.
struct RigidTransform {
    std::array<double, 3> rotations{0, 0, 0};    // radians about x, y, z
    std::array<double, 3> translations{0, 0, 0}; // mm

    AffineTransform to_affine() const;

    /// Recovers the parameters of an orthonormal affine. Rotation angles are
    /// returned in (-pi, pi], with ry in [-pi/2, pi/2].
    static RigidTransform from_affine(const AffineTransform& a);
};

Eigen::Matrix3d rotation_zyx(double rx, double ry, double rz);

}  // namespace asap
