// asap: command-line front end for the ASL pipeline.

#include "asap/error.hpp"
#include "asap/glm.hpp"
#include "asap/nifti.hpp"
#include "asap/pipeline.hpp"
#include "asap/qc.hpp"
#include "asap/roistats.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace asap;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kPartialFailure = 2;

void print_errors(const AggregateError& e) {
    std::cerr << e.messages().size() << " error(s):\n";
    for (const auto& m : e.messages()) std::cerr << "  " << m << '\n';
}

int cmd_validate(const fs::path& config) {
    try {
        const auto cfg = validate_config(config);
        int on = 0;
        for (Step s : kAllSteps) on += cfg.enabled(s);
        std::cout << "OK: " << cfg.subjects.size() << " subject(s), " << on << " step(s) enabled\n";
        return kOk;
    } catch (const AggregateError& e) {
        print_errors(e);
        return kConfigError;
    }
}

int cmd_run(const fs::path& config, const std::string& run_id, bool quiet) {
    PipelineConfig cfg;
    try {
        std::ifstream in(config);
        if (!in) throw AggregateError({"cannot read config file " + config.string()});
        std::stringstream ss;
        ss << in.rdbuf();
        cfg = parse_config(ss.str(), config.parent_path());
        if (!run_id.empty()) cfg.run_id = run_id;
    } catch (const AggregateError& e) {
        print_errors(e);
        return kConfigError;
    }
    RunReport report;
    try {
        report = run_pipeline(cfg, quiet ? nullptr : &std::cerr);
    } catch (const AggregateError& e) {
        print_errors(e);
        return kConfigError;
    } catch (const OverwriteError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    }
    for (const auto& s : report.subjects)
        std::cout << (s.ok ? "OK   " : "FAIL ") << s.subject_id
                  << (s.ok ? "" : " (" + s.failed_step.value_or("?") + ": " + s.error + ")") << '\n';
    std::cout << "run directory: " << report.run_dir.string() << '\n';
    return report.all_ok() ? kOk : kPartialFailure;
}

int cmd_roistats(const fs::path& maps, const fs::path& rois, const fs::path& out) {
    const auto batch = load_batch_lists(maps, rois);
    const auto table = roi_stats(batch.maps, batch.rois);
    for (const auto& w : table.warnings) std::cerr << "warning: " << w << '\n';
    if (fs::exists(out)) throw OverwriteError("refusing to overwrite " + out.string());
    write_roi_table(out, table.rows);
    std::cout << table.rows.size() << " row(s) written to " << out.string() << '\n';
    return kOk;
}

struct GlmArgs {
    fs::path design, maps, mask, out_dir;
    int perms = 0;
    std::uint64_t seed = 1;
    double t_threshold = 3.0;
    int min_cluster = 300;
    bool mean_covariate = false;
};

int cmd_glm(const GlmArgs& a) {
    auto design = read_design_csv(a.design);
    const auto paths = read_path_list(a.maps);
    if (paths.size() != design.subjects())
        throw DesignError("design has " + std::to_string(design.subjects()) + " subjects but the map list has " +
                          std::to_string(paths.size()) + " paths (maps are matched to design rows by order)");
    std::vector<Volume3D> maps;
    for (const auto& p : paths) maps.push_back(read_nifti(p));
    const auto mask = BinaryMask::from_volume(read_nifti(a.mask));
    if (a.mean_covariate) design = design.with_covariate("mean_cbf", mean_in_mask(maps, mask));

    fs::create_directories(a.out_dir);
    const auto target = [&](const char* name) {
        const auto p = a.out_dir / name;
        if (fs::exists(p)) throw OverwriteError("refusing to overwrite " + p.string());
        return p;
    };
    const auto stat = fit_glm(maps, design, mask);
    std::vector<ClusterInfo> clusters;
    const auto thr = threshold_clusters(stat, a.t_threshold, a.min_cluster, &clusters);
    write_nifti(stat.t_values, target("tstat.nii.gz"));
    write_nifti(thr.cluster_labels, target("clusters.nii.gz"));
    write_cluster_table(target("clusters.tsv"), clusters);
    std::cout << "dof " << stat.dof << ", " << clusters.size() << " cluster(s) with t > " << a.t_threshold
              << " and >= " << a.min_cluster << " voxels\n";
    if (a.perms > 0) {
        const auto perm = permutation_maxT(maps, design, mask, a.perms, a.seed);
        if (perm.warning) std::cerr << "warning: " << *perm.warning << '\n';
        write_nifti(perm.p_values, target("p_fwe.nii.gz"));
        std::ofstream mt(target("max_t.txt"));
        mt.precision(17);
        for (double t : perm.max_t) mt << t << '\n';
        std::size_t sig = 0;
        for (std::size_t i = 0; i < perm.p_values.size(); ++i) sig += mask[i] && perm.p_values[i] < 0.05;
        std::cout << sig << " voxel(s) with familywise p < 0.05 over " << a.perms << " permutations\n";
    }
    return kOk;
}

int cmd_report(const fs::path& run_dir) {
    const auto report = read_run_report(run_dir);
    std::cout << emit_qc_report(report, run_dir / "qc").string() << '\n';
    return report.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ASL perfusion processing pipeline"};
    app.require_subcommand(1);

    fs::path config;
    std::string run_id;
    bool quiet = false;
    auto* run = app.add_subcommand("run", "Process every subject in a config file");
    run->add_option("config", config, "Pipeline config")->required();
    run->add_option("--run-id", run_id, "Run directory name (default: timestamp)");
    run->add_flag("-q,--quiet", quiet, "No per-step progress on stderr");

    fs::path vconfig;
    auto* validate = app.add_subcommand("validate", "Check a config file and its inputs");
    validate->add_option("config", vconfig, "Pipeline config")->required();

    fs::path maps, rois, out;
    auto* roistats = app.add_subcommand("roistats", "Mean/median/max of maps over ROI masks");
    roistats->add_option("--maps", maps, "List file of CBF maps")->required();
    roistats->add_option("--rois", rois, "List file of ROI masks")->required();
    roistats->add_option("--out", out, "Output TSV")->required();

    GlmArgs g;
    auto* glm = app.add_subcommand("glm", "Voxelwise two-sample GLM");
    glm->add_option("--design", g.design, "Design CSV: subject_id,group[,covariates]")->required();
    glm->add_option("--maps", g.maps, "List file of normalized maps, one per design row")->required();
    glm->add_option("--mask", g.mask, "Analysis mask")->required();
    glm->add_option("--out-dir", g.out_dir, "Output directory")->required();
    glm->add_option("--perms", g.perms, "Permutations for max-T FWE (0 = off, otherwise >= 100)");
    glm->add_option("--seed", g.seed, "Permutation seed");
    glm->add_option("--t-threshold", g.t_threshold, "Cluster-forming t threshold")->capture_default_str();
    glm->add_option("--min-cluster", g.min_cluster, "Minimum cluster size in voxels")->capture_default_str();
    glm->add_flag("--mean-covariate", g.mean_covariate, "Add each map's in-mask mean as a covariate");

    fs::path run_dir;
    auto* report = app.add_subcommand("report", "Rebuild the QC report of a finished run");
    report->add_option("run_dir", run_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kConfigError;
    }

    try {
        if (*run) return cmd_run(config, run_id, quiet);
        if (*validate) return cmd_validate(vconfig);
        if (*roistats) return cmd_roistats(maps, rois, out);
        if (*glm) return cmd_glm(g);
        if (*report) return cmd_report(run_dir);
    } catch (const AggregateError& e) {
        print_errors(e);
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    }
    return kOk;
}
