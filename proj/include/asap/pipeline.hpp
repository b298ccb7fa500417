#pragma once

#include "asap/brainmask.hpp"
#include "asap/coregister.hpp"
#include "asap/pvc.hpp"
#include "asap/quantify.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace asap {

enum class Step { quantify, reorient, rough_strip, mask_segment, coregister, pvc, skull_strip_asl, normalize, smooth };

inline constexpr std::array<Step, 9> kAllSteps{Step::quantify,     Step::reorient,   Step::rough_strip,
                                               Step::mask_segment, Step::coregister, Step::pvc,
                                               Step::skull_strip_asl, Step::normalize, Step::smooth};

const char* step_name(Step s);
/// 1-based position in the fixed order.
int step_number(Step s);

enum class AslInputKind { difference, cbf };
enum class PvcMethod { none, pet, asllani };

struct SubjectRecord {
    std::string subject_id;
    std::filesystem::path asl_input;
    AslInputKind asl_kind = AslInputKind::difference;
    std::optional<std::filesystem::path> pd_image;
    std::filesystem::path structural;
    StructuralContrast structural_contrast = StructuralContrast::t1w;
    /// GM, WM, CSF on the structural grid.
    std::optional<std::array<std::filesystem::path, 3>> external_tissue_maps;
    /// World point that becomes the ASL origin instead of the PD centroid.
    std::optional<Vec3> origin_mm;
    /// Template -> structural affine; skips the normalization estimate.
    std::optional<std::filesystem::path> normalize_affine;
};

struct PipelineConfig {
    std::vector<SubjectRecord> subjects;
    std::array<bool, 9> steps{};

    AcquisitionParams acquisition = AcquisitionParams::pcasl_defaults();
    double rough_strip_fraction = 0.20;
    int segmentation_max_iter = 200;
    double segmentation_tolerance = 1e-6;
    CoregMode mode = CoregMode::asl_space;
    RegistrationConfig coregistration;
    PvcMethod pvc_method = PvcMethod::asllani;
    PvcConfig pvc;
    std::filesystem::path template_path;
    Vec3 output_spacing_mm{2, 2, 2};
    RegistrationConfig normalization;
    Vec3 smooth_fwhm_mm{8, 8, 8};

    std::filesystem::path output_root;
    std::optional<std::string> run_id;
    int threads = 1;
    std::uint64_t seed = 42;

    bool enabled(Step s) const { return steps[static_cast<std::size_t>(s)]; }
    void enable(Step s, bool on = true) { steps[static_cast<std::size_t>(s)] = on; }
};

struct ConfigIssue {
    std::string message;
    /// Set when the issue is a missing input of one subject only.
    std::optional<std::size_t> subject;
};

/// Parses the TOML-style config text. Relative paths resolve against
/// `base_dir`. Syntax errors, unknown keys and wrong value types are all
/// collected and thrown together as an AggregateError.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);

/// Invariant and file-existence checks. Returns every problem found.
std::vector<ConfigIssue> check_config(const PipelineConfig& cfg);

/// Parse + check; throws AggregateError listing all problems.
PipelineConfig validate_config(const std::filesystem::path& path);

nlohmann::ordered_json config_to_json(const PipelineConfig& cfg);

struct StepRecord {
    std::string name;
    int number = 0;
    std::string status;  // done, skipped
    std::string note;
    double seconds = 0.0;
    std::vector<std::string> outputs;  // relative to the run directory
};

struct SubjectReport {
    std::string subject_id;
    bool ok = false;
    std::optional<std::string> failed_step;
    std::string error;
    std::vector<StepRecord> steps;
    std::map<std::string, double> metrics;
    std::optional<PvcDiagnostics> pvc;
    std::optional<std::string> normalized_cbf;
    std::optional<std::string> normalized_mask;
    double seconds = 0.0;
};

struct RunReport {
    std::string run_id;
    std::filesystem::path run_dir;
    std::string started_at;
    double seconds = 0.0;
    nlohmann::ordered_json parameters;
    std::vector<SubjectReport> subjects;

    bool all_ok() const;
    /// 0 when every subject succeeded, 2 otherwise.
    int exit_code() const;
};

nlohmann::ordered_json report_to_json(const RunReport& r);
RunReport report_from_json(const nlohmann::json& j, const std::filesystem::path& run_dir);
/// Reads run_dir/run_report.json.
RunReport read_run_report(const std::filesystem::path& run_dir);

/// Runs every subject through the enabled steps. Throws AggregateError for
/// config problems and OverwriteError when the run directory exists; both
/// before any subject starts. Subject failures are recorded, not thrown.
/// Writes run_report.json and the QC report into the run directory.
RunReport run_pipeline(const PipelineConfig& cfg, std::ostream* log = nullptr);

}  // namespace asap
