#include "asap/normalize.hpp"

#include "registration.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

namespace asap {

namespace {

Eigen::Matrix3d shear_matrix(double xy, double xz, double yz) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
    h(0, 1) = xy;
    h(0, 2) = xz;
    h(1, 2) = yz;
    return h;
}

// Parameters: rotations (deg), translation (mm), scale and shear (percent),
// all about `center`.
Eigen::Matrix4d affine_about(const Eigen::VectorXd& p, const Eigen::Vector3d& center) {
    const double k = std::numbers::pi / 180.0;
    const Eigen::Matrix3d lin = rotation_zyx(p[0] * k, p[1] * k, p[2] * k) *
                                Eigen::Vector3d(1 + p[6] / 100, 1 + p[7] / 100, 1 + p[8] / 100).asDiagonal() *
                                shear_matrix(p[9] / 100, p[10] / 100, p[11] / 100);
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = lin;
    m.topRightCorner<3, 1>() = center + p.segment<3>(3) - lin * center;
    return m;
}

}  // namespace

void NormalizeConfig::validate() const {
    for (double s : output_spacing_mm)
        if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("normalization output spacing must be positive");
    registration.validate();
}

AffineTransform register_affine(const Volume3D& structural, const Volume3D& template_image,
                                const NormalizeConfig& cfg) {
    cfg.validate();
    if (cfg.external_affine) return *cfg.external_affine;

    const auto rigid = register_rigid(structural, template_image, cfg.registration).transform;
    const Eigen::Vector3d c = detail::positive_centroid(template_image);
    const Eigen::Matrix3d r = rotation_zyx(rigid.rotations[0], rigid.rotations[1], rigid.rotations[2]);
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(12);
    for (int i = 0; i < 3; ++i) x0[i] = rigid.rotations[i] * 180.0 / std::numbers::pi;
    x0.segment<3>(3) = Eigen::Vector3d(rigid.translations[0], rigid.translations[1], rigid.translations[2]) +
                       r * c - c;

    const auto& rc = cfg.registration;
    const auto levels = detail::build_pyramid(structural, template_image, rc.fixed_mask, rc.pyramid_levels);
    const detail::ParamMap map = [c](const Eigen::VectorXd& p) { return affine_about(p, c); };
    const double coarse = std::ldexp(1.0, rc.pyramid_levels - 1);
    const Eigen::VectorXd step = Eigen::VectorXd::Constant(12, coarse);
    Eigen::VectorXd tol(12);
    tol << Eigen::Vector3d::Constant(rc.rotation_tolerance_deg), Eigen::Vector3d::Constant(rc.translation_tolerance_mm),
        Eigen::Vector3d::Constant(0.01), Eigen::Vector3d::Constant(0.01);
    const auto res = detail::optimize_pyramid(levels, map, x0, step, tol, {}, rc);
    return AffineTransform(map(res.params));
}

GridSpec normalized_grid(const GridSpec& t, const Vec3& spacing) {
    const auto& ts = t.spacing();
    bool same = true;
    for (int a = 0; a < 3; ++a) same = same && std::abs(ts[a] - spacing[a]) <= 1e-9 * ts[a];
    if (same) return t;
    Dims d;
    Eigen::Matrix3d lin;
    const auto& td = t.dims();
    for (int a = 0; a < 3; ++a) {
        d[a] = std::max(1, static_cast<int>(std::lround(td[a] * ts[a] / spacing[a])));
        lin.col(a) = t.affine().block<3, 1>(0, a) / ts[a] * spacing[a];
    }
    const Eigen::Vector3d center = t.world(0.5 * (td[0] - 1), 0.5 * (td[1] - 1), 0.5 * (td[2] - 1));
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = lin;
    m.topRightCorner<3, 1>() = center - lin * Eigen::Vector3d(0.5 * (d[0] - 1), 0.5 * (d[1] - 1), 0.5 * (d[2] - 1));
    return GridSpec(d, m);
}

Volume3D normalize_volume(const Volume3D& vol, const AffineTransform& template_to_subject, const NormalizeConfig& cfg,
                          Interp interp) {
    cfg.validate();
    return resample(vol, normalized_grid(cfg.template_image.grid(), cfg.output_spacing_mm), template_to_subject,
                    interp);
}

AffineParams decompose_affine(const AffineTransform& a) {
    const Eigen::Matrix3d lin = a.matrix().topLeftCorner<3, 3>();
    Eigen::HouseholderQR<Eigen::Matrix3d> qr(lin);
    Eigen::Matrix3d q = qr.householderQ();
    Eigen::Matrix3d u = qr.matrixQR().triangularView<Eigen::Upper>();
    // Make the triangular diagonal positive.
    for (int i = 0; i < 3; ++i)
        if (u(i, i) < 0) {
            u.row(i) *= -1;
            q.col(i) *= -1;
        }
    if (q.determinant() < 0) throw GeometryError("affine contains a reflection");
    AffineParams p;
    Eigen::Matrix4d rot = Eigen::Matrix4d::Identity();
    rot.topLeftCorner<3, 3>() = q;
    p.rotations = RigidTransform::from_affine(AffineTransform(rot)).rotations;
    for (int i = 0; i < 3; ++i) {
        p.scales[i] = u(i, i);
        p.translations[i] = a.matrix()(i, 3);
    }
    p.shears = {u(0, 1) / u(0, 0), u(0, 2) / u(0, 0), u(1, 2) / u(1, 1)};
    return p;
}

AffineTransform compose_affine(const AffineParams& p) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_zyx(p.rotations[0], p.rotations[1], p.rotations[2]) *
                              Eigen::Vector3d(p.scales[0], p.scales[1], p.scales[2]).asDiagonal() *
                              shear_matrix(p.shears[0], p.shears[1], p.shears[2]);
    for (int i = 0; i < 3; ++i) m(i, 3) = p.translations[i];
    return AffineTransform(m);
}

}  // namespace asap
