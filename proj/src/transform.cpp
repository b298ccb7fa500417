#include "asap/transform.hpp"

#include "asap/error.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace asap {

namespace {
constexpr double kMaxCondition = 1e12;
}

double condition_number(const Eigen::Matrix4d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m.topLeftCorner<3, 3>());
    const auto& s = svd.singularValues();
    if (!(s(2) > 0.0)) return std::numeric_limits<double>::infinity();
    return s(0) / s(2);
}

AffineTransform::AffineTransform(const Eigen::Matrix4d& m) : m_(m) {
    if (!m.allFinite()) throw GeometryError("affine contains non-finite entries");
    if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0)
        throw GeometryError("affine bottom row must be (0,0,0,1)");
    if (condition_number(m) > kMaxCondition)
        throw GeometryError("affine is singular or ill-conditioned");
}

AffineTransform AffineTransform::translation(double x, double y, double z) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m(0, 3) = x;
    m(1, 3) = y;
    m(2, 3) = z;
    return AffineTransform(m);
}

AffineTransform compose(const AffineTransform& a, const AffineTransform& b) {
    Eigen::Matrix4d m = a.matrix() * b.matrix();
    m.row(3) << 0, 0, 0, 1;
    return AffineTransform(m);
}

AffineTransform invert(const AffineTransform& a) {
    // Invert the linear block and the translation separately so the bottom
    // row stays exact.
    const Eigen::Matrix3d lin = a.matrix().topLeftCorner<3, 3>();
    const Eigen::Matrix3d inv = lin.inverse();
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = inv;
    m.topRightCorner<3, 1>() = -inv * a.matrix().topRightCorner<3, 1>();
    return AffineTransform(m);
}

Eigen::Matrix3d rotation_zyx(double rx, double ry, double rz) {
    const double cx = std::cos(rx), sx = std::sin(rx);
    const double cy = std::cos(ry), sy = std::sin(ry);
    const double cz = std::cos(rz), sz = std::sin(rz);
    Eigen::Matrix3d Rx, Ry, Rz;
    Rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
    Ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
    Rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
    return Rz * Ry * Rx;
}

AffineTransform RigidTransform::to_affine() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_zyx(rotations[0], rotations[1], rotations[2]);
    m(0, 3) = translations[0];
    m(1, 3) = translations[1];
    m(2, 3) = translations[2];
    return AffineTransform(m);
}

RigidTransform RigidTransform::from_affine(const AffineTransform& a) {
    const Eigen::Matrix4d& m = a.matrix();
    // R = Rz Ry Rx  =>  R(2,0) = -sin(ry), R(2,1) = cos(ry) sin(rx),
    // R(2,2) = cos(ry) cos(rx), R(1,0) = sin(rz) cos(ry), R(0,0) = cos(rz) cos(ry)
    RigidTransform t;
    const double sy = std::clamp(-m(2, 0), -1.0, 1.0);
    t.rotations[1] = std::asin(sy);
    if (std::abs(sy) < 1.0 - 1e-12) {
        t.rotations[0] = std::atan2(m(2, 1), m(2, 2));
        t.rotations[2] = std::atan2(m(1, 0), m(0, 0));
    } else {
        // Gimbal lock: only rz - rx (or rz + rx) is determined; pin rx = 0.
        t.rotations[0] = 0.0;
        t.rotations[2] = std::atan2(-m(0, 1), m(1, 1));
    }
    t.translations = {m(0, 3), m(1, 3), m(2, 3)};
    return t;
}

}  // namespace asap
