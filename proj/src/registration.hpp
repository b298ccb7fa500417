#pragma once

// Shared machinery for rigid and affine registration: the image pyramid,
// the sampled similarity metric and the coarse-to-fine Powell driver.

#include "asap/coregister.hpp"

#include <Eigen/Core>
#include <functional>
#include <vector>

namespace asap::detail {

struct PyramidLevel {
    Volume3D moving;
    std::vector<Eigen::Vector3d> points;  // fixed-world sample positions
    std::vector<double> fixed_values;
    double fixed_min = 0.0, fixed_max = 0.0;
    double moving_min = 0.0, moving_max = 0.0;
};

std::vector<PyramidLevel> build_pyramid(const Volume3D& moving, const Volume3D& fixed,
                                        const std::optional<BinaryMask>& fixed_mask, int levels);

/// Metric (higher is better) for a fixed->moving world map; NaN when fewer
/// than `min_overlap` of the samples land inside the moving image.
double evaluate_metric(const PyramidLevel& level, const Eigen::Matrix4d& fixed_to_moving, Metric metric, int bins,
                       double min_overlap);

/// Intensity centroid with negative values ignored; the grid center when
/// there is no positive mass.
Eigen::Vector3d positive_centroid(const Volume3D& v);

/// Throws RegistrationFailure when either image has (near) zero variance.
void require_variance(const Volume3D& v, const char* which, const Eigen::Matrix4d& fallback);

using ParamMap = std::function<Eigen::Matrix4d(const Eigen::VectorXd&)>;

struct PyramidResult {
    Eigen::VectorXd params;
    double metric = 0.0;
    std::vector<double> metric_per_level;
};

/// Coarse-to-fine optimisation. `coarse_step` is the per-parameter step at
/// the coarsest level (halved at each finer one). Starts from x0 and from
/// each offset in `restarts` at the coarsest level and keeps the best.
PyramidResult optimize_pyramid(const std::vector<PyramidLevel>& levels, const ParamMap& map,
                               const Eigen::VectorXd& x0, const Eigen::VectorXd& coarse_step,
                               const Eigen::VectorXd& tolerance, const std::vector<Eigen::VectorXd>& restarts,
                               const RegistrationConfig& cfg);

/// Rotation (Rz Ry Rx, degrees) about `center` plus a translation.
Eigen::Matrix4d rigid_about(const Eigen::Vector3d& rot_deg, const Eigen::Vector3d& trans, const Eigen::Vector3d& center);

}  // namespace asap::detail
