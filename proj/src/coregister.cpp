#include "asap/coregister.hpp"

#include "registration.hpp"

#include <Eigen/Dense>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace asap {

void RegistrationConfig::validate() const {
    if (histogram_bins < 8) throw ParameterError("histogram_bins must be at least 8");
    if (pyramid_levels < 1) throw ParameterError("pyramid_levels must be at least 1");
    if (max_iter_per_level < 1) throw ParameterError("max_iter_per_level must be at least 1");
    if (!(rotation_tolerance_deg > 0.0) || !(translation_tolerance_mm > 0.0))
        throw ParameterError("registration tolerances must be positive");
    if (!(min_overlap_fraction > 0.0 && min_overlap_fraction <= 1.0))
        throw ParameterError("min_overlap_fraction must lie in (0,1]");
}

RigidRegistration register_rigid(const Volume3D& moving, const Volume3D& fixed, const RegistrationConfig& cfg) {
    cfg.validate();
    if (cfg.fixed_mask) require_same_grid(cfg.fixed_mask->grid(), fixed.grid(), "registration mask vs fixed image");
    const Eigen::Vector3d center = detail::positive_centroid(fixed);

    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(6);
    if (cfg.initial) {
        const auto& in = *cfg.initial;
        const Eigen::Matrix3d r = rotation_zyx(in.rotations[0], in.rotations[1], in.rotations[2]);
        const Eigen::Vector3d t(in.translations[0], in.translations[1], in.translations[2]);
        for (int i = 0; i < 3; ++i) x0[i] = in.rotations[i] * 180.0 / std::numbers::pi;
        x0.tail(3) = t + r * center - center;
    } else {
        x0.tail(3) = detail::positive_centroid(moving) - center;
    }
    const detail::ParamMap map = [center](const Eigen::VectorXd& p) {
        return detail::rigid_about(p.head<3>(), p.tail<3>(), center);
    };
    detail::require_variance(moving, "moving", map(x0));
    detail::require_variance(fixed, "fixed", map(x0));

    const auto levels = detail::build_pyramid(moving, fixed, cfg.fixed_mask, cfg.pyramid_levels);
    Eigen::VectorXd step(6), tol(6);
    const double coarse = std::ldexp(1.0, cfg.pyramid_levels - 1);
    step << coarse, coarse, coarse, coarse, coarse, coarse;
    tol << cfg.rotation_tolerance_deg, cfg.rotation_tolerance_deg, cfg.rotation_tolerance_deg,
        cfg.translation_tolerance_mm, cfg.translation_tolerance_mm, cfg.translation_tolerance_mm;
    std::vector<Eigen::VectorXd> restarts(3, Eigen::VectorXd::Zero(6));
    restarts[0][2] = 6.0;
    restarts[1][2] = -6.0;
    restarts[2][0] = 6.0;
    restarts[2][1] = -6.0;

    const auto res = detail::optimize_pyramid(levels, map, x0, step, tol, restarts, cfg);
    const Eigen::Matrix4d m = map(res.params);
    RigidRegistration out;
    for (int i = 0; i < 3; ++i) {
        out.transform.rotations[i] = res.params[i] * std::numbers::pi / 180.0;
        out.transform.translations[i] = m(i, 3);
    }
    out.metric = res.metric;
    out.metric_per_level = res.metric_per_level;
    return out;
}

double similarity(const Volume3D& a, const Volume3D& b, Metric metric, int bins) {
    require_same_grid(a.grid(), b.grid(), "similarity operands");
    const auto levels = detail::build_pyramid(b, a, std::nullopt, 1);
    return detail::evaluate_metric(levels[0], Eigen::Matrix4d::Identity(), metric, bins, 0.0);
}

Coregistration coregister_to_structural(const Volume3D& asl, const std::optional<Volume3D>& pd,
                                        const Volume3D& structural, CoregMode mode, const RegistrationConfig& cfg) {
    if (pd) require_same_grid(pd->grid(), asl.grid(), "PD vs ASL");
    const auto reg = register_rigid(pd ? *pd : asl, structural, cfg);
    Coregistration c;
    c.mode = mode;
    c.transform = reg.transform;
    c.metric = reg.metric;
    if (mode == CoregMode::asl_space) {
        c.working_grid = asl.grid();
        c.asl = asl;
        c.pd = pd;
    } else {
        c.working_grid = structural.grid();
    }
    c.structural = structural_to_working(structural, c, Interp::trilinear);
    if (mode == CoregMode::structural_space) {
        c.asl = asl_to_working(asl, c, Interp::nearest);
        if (pd) c.pd = asl_to_working(*pd, c, Interp::nearest);
    }
    return c;
}

Volume3D structural_to_working(const Volume3D& vol, const Coregistration& c, Interp interp) {
    if (c.mode == CoregMode::asl_space)
        return resample(vol, c.working_grid, invert(c.transform.to_affine()), interp);
    return vol.grid().matches(c.working_grid) ? vol : resample(vol, c.working_grid, interp);
}

Volume3D asl_to_working(const Volume3D& vol, const Coregistration& c, Interp interp) {
    if (c.mode == CoregMode::structural_space) return resample(vol, c.working_grid, c.transform.to_affine(), interp);
    return vol.grid().matches(c.working_grid) ? vol : resample(vol, c.working_grid, interp);
}

void write_transform(const std::filesystem::path& path, const AffineTransform& t) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write transform file " + path.string());
    out << std::setprecision(17);
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) out << (c ? " " : "") << t.matrix()(r, c);
        out << '\n';
    }
    if (!out) throw IoError("failed writing transform file " + path.string());
}

AffineTransform read_transform(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read transform file " + path.string());
    std::vector<double> v;
    std::string tok;
    while (in >> tok) {
        std::size_t used = 0;
        double x = 0.0;
        try {
            x = std::stod(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size()) throw FormatError("matrix", "non-numeric entry '" + tok + "' in " + path.string());
        v.push_back(x);
    }
    if (v.size() != 16)
        throw FormatError("matrix", "expected 16 values, found " + std::to_string(v.size()) + " in " + path.string());
    Eigen::Matrix4d m;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m(r, c) = v[r * 4 + c];
    return AffineTransform(m);
}

}  // namespace asap
