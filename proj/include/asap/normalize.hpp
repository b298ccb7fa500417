#pragma once

#include "asap/coregister.hpp"
#include "asap/resample.hpp"
#include "asap/smooth.hpp"

#include <optional>

namespace asap {

struct NormalizeConfig {
    Volume3D template_image;
    Vec3 output_spacing_mm{2, 2, 2};
    RegistrationConfig registration;
    /// When set, estimation is skipped and this template->subject map is used.
    std::optional<AffineTransform> external_affine;

    void validate() const;
};

/// 12-parameter affine (template world -> structural world) maximising the
/// similarity metric, seeded by a rigid pre-alignment.
AffineTransform register_affine(const Volume3D& structural, const Volume3D& template_image,
                                const NormalizeConfig& cfg);

/// Template axes and field of view at the requested spacing, centered on
/// the template's center. Returns the template grid itself when the
/// spacing already matches.
GridSpec normalized_grid(const GridSpec& template_grid, const Vec3& spacing_mm);

/// Resamples `vol` (subject space) onto normalized_grid(template, output spacing)
/// through `template_to_subject`.
Volume3D normalize_volume(const Volume3D& vol, const AffineTransform& template_to_subject,
                          const NormalizeConfig& cfg, Interp interp);

/// Linear part written as R * S * H, R = Rz Ry Rx, S diagonal positive,
/// H unit upper triangular (shears xy, xz, yz); translation is the matrix's
/// last column.
struct AffineParams {
    std::array<double, 3> rotations{0, 0, 0};  // radians
    std::array<double, 3> translations{0, 0, 0};
    std::array<double, 3> scales{1, 1, 1};
    std::array<double, 3> shears{0, 0, 0};
};

AffineParams decompose_affine(const AffineTransform& a);
AffineTransform compose_affine(const AffineParams& p);

}  // namespace asap
