#pragma once

#include "asap/error.hpp"
#include "asap/mask.hpp"
#include "asap/resample.hpp"
#include "asap/transform.hpp"
#include "asap/volume.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace asap {

enum class Metric { normalized_mutual_information, normalized_cross_correlation };

struct RegistrationConfig {
    Metric metric = Metric::normalized_mutual_information;
    int pyramid_levels = 3;
    int histogram_bins = 64;
    int max_iter_per_level = 100;
    double rotation_tolerance_deg = 0.01;
    double translation_tolerance_mm = 0.01;
    /// Starting transform (fixed world -> moving world). Defaults to a pure
    /// translation aligning the intensity centroids.
    std::optional<RigidTransform> initial;
    /// Restricts metric sampling; must sit on the fixed grid.
    std::optional<BinaryMask> fixed_mask;
    double min_overlap_fraction = 0.25;

    void validate() const;
};

/// Raised when no usable metric value can be found; carries the best
/// transform seen so far.
class RegistrationFailure : public Error {
public:
    RegistrationFailure(const std::string& what, AffineTransform best) : Error(what), best_(best) {}
    const AffineTransform& best_so_far() const noexcept { return best_; }

private:
    AffineTransform best_;
};

struct RigidRegistration {
    /// Maps fixed-world points to moving-world points, so
    /// resample(moving, fixed.grid(), transform.to_affine(), ...) aligns moving onto fixed.
    RigidTransform transform;
    double metric = 0.0;  // final metric at the finest level (higher is better)
    std::vector<double> metric_per_level;
};

RigidRegistration register_rigid(const Volume3D& moving, const Volume3D& fixed, const RegistrationConfig& cfg = {});

/// Metric between two volumes on one grid. NMI = (H(A)+H(B))/H(A,B) with
/// linear Parzen binning; NCC is the Pearson correlation.
double similarity(const Volume3D& a, const Volume3D& b, Metric metric = Metric::normalized_mutual_information,
                  int bins = 64);

enum class CoregMode { asl_space, structural_space };

struct Coregistration {
    CoregMode mode = CoregMode::asl_space;
    /// structural world -> ASL world.
    RigidTransform transform;
    double metric = 0.0;
    /// The grid everything is expressed on after coregistration.
    GridSpec working_grid;
    Volume3D asl;
    std::optional<Volume3D> pd;
    Volume3D structural;
};

/// Registers the PD image (or the ASL image when no PD is given) to the
/// structural. In asl_space the structural is pulled onto the ASL grid
/// (trilinear); in structural_space ASL and PD go onto the structural grid
/// with nearest neighbour so original values are preserved.
Coregistration coregister_to_structural(const Volume3D& asl, const std::optional<Volume3D>& pd,
                                        const Volume3D& structural, CoregMode mode,
                                        const RegistrationConfig& cfg = {});

/// Moves a structural-grid volume into the coregistration's working grid.
Volume3D structural_to_working(const Volume3D& vol, const Coregistration& c, Interp interp);
/// Moves an ASL-grid volume into the coregistration's working grid.
Volume3D asl_to_working(const Volume3D& vol, const Coregistration& c, Interp interp);

/// Plain-text 4x4 row-major matrix, one row per line.
void write_transform(const std::filesystem::path& path, const AffineTransform& t);
AffineTransform read_transform(const std::filesystem::path& path);

}  // namespace asap
