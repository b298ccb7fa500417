#include "asap/pipeline.hpp"

#include "asap/error.hpp"
#include "asap/mask.hpp"
#include "asap/nifti.hpp"
#include "asap/normalize.hpp"
#include "asap/qc.hpp"
#include "asap/smooth.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace asap {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string local_time(const char* fmt) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, fmt);
    return os.str();
}

class Logger {
public:
    explicit Logger(std::ostream* out) : out_(out) {}
    void operator()(const std::string& msg) {
        if (!out_) return;
        std::lock_guard lock(m_);
        *out_ << msg << '\n';
    }

private:
    std::ostream* out_;
    std::mutex m_;
};

Volume3D positive_part(const Volume3D& v) {
    std::vector<double> d(v.data().begin(), v.data().end());
    for (auto& x : d) x = std::isfinite(x) && x > 0.0 ? x : 0.0;
    return v.with_data(std::move(d));
}

BinaryMask mask_of(const Volume3D& v) {
    std::vector<std::uint8_t> m(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] >= 0.5;
    return BinaryMask(v.grid(), std::move(m));
}

// Carries the state of one subject through the fixed step sequence.
class SubjectRun {
public:
    SubjectRun(const PipelineConfig& cfg, const SubjectRecord& s, const fs::path& run_dir,
               const std::optional<Volume3D>& tpl, SubjectReport& rep, Logger& log)
        : cfg_(cfg), s_(s), run_dir_(run_dir), tpl_(tpl), rep_(rep), log_(log) {}

    void run() {
        const auto t0 = Clock::now();
        rep_.subject_id = s_.subject_id;
        current_ = "load_inputs";
        try {
            fs::create_directory(run_dir_ / s_.subject_id);
            load();
            do_quantify();
            do_reorient();
            do_rough_strip();
            do_mask_segment();
            do_coregister();
            do_pvc();
            do_skull_strip();
            do_normalize();
            do_smooth();
            rep_.ok = true;
        } catch (const std::exception& e) {
            rep_.ok = false;
            rep_.failed_step = current_;
            rep_.error = e.what();
            log_("[" + s_.subject_id + "] FAILED at " + current_ + ": " + e.what());
        }
        rep_.seconds = seconds_since(t0);
    }

private:
    template <class F>
    void step(Step st, F&& body) {
        current_ = step_name(st);
        StepRecord rec;
        rec.name = current_;
        rec.number = step_number(st);
        if (!cfg_.enabled(st)) {
            rec.status = "skipped";
            rec.note = "disabled";
            rep_.steps.push_back(std::move(rec));
            return;
        }
        const auto t0 = Clock::now();
        rec.status = "done";
        body(rec);
        rec.seconds = seconds_since(t0);
        log_("[" + s_.subject_id + "] step " + std::to_string(rec.number) + " " + rec.name + " " + rec.status +
             " (" + std::to_string(rec.seconds) + " s)");
        rep_.steps.push_back(std::move(rec));
    }

    fs::path out_path(const StepRecord& rec, const std::string& suffix, const char* ext = ".nii.gz") const {
        std::ostringstream name;
        name << "step_" << std::setw(2) << std::setfill('0') << rec.number << '_' << rec.name;
        if (!suffix.empty()) name << '_' << suffix;
        name << ext;
        return fs::path(s_.subject_id) / name.str();
    }

    fs::path claim(const fs::path& rel) const {
        const auto full = run_dir_ / rel;
        if (fs::exists(full)) throw OverwriteError("refusing to overwrite " + full.string());
        return full;
    }

    std::string save(const Volume3D& v, StepRecord& rec, const std::string& suffix = "") {
        const auto rel = out_path(rec, suffix);
        write_nifti(v, claim(rel));
        rec.outputs.push_back(rel.generic_string());
        return rel.generic_string();
    }

    void save(const AffineTransform& t, StepRecord& rec, const std::string& suffix = "") {
        const auto rel = out_path(rec, suffix, ".tfm");
        write_transform(claim(rel), t);
        rec.outputs.push_back(rel.generic_string());
    }

    void load() {
        asl_ = read_nifti(s_.asl_input);
        if (s_.pd_image) {
            pd_ = read_nifti(*s_.pd_image);
            require_same_grid(asl_.grid(), pd_->grid(), "ASL and PD images of subject " + s_.subject_id);
        }
        structural_ = read_nifti(s_.structural);
        structural_input_grid_ = structural_.grid();
        if (s_.normalize_affine) normalize_affine_ = read_transform(*s_.normalize_affine);
    }

    void do_quantify() {
        step(Step::quantify, [&](StepRecord& rec) {
            if (s_.asl_kind == AslInputKind::cbf) {
                rec.status = "skipped";
                rec.note = "input is already CBF";
                cbf_ = asl_.with_units(kCbfUnits);
                return;
            }
            cbf_ = quantify(asl_, *pd_, cfg_.acquisition);
            save(cbf_, rec);
        });
        if (!cfg_.enabled(Step::quantify)) cbf_ = asl_.with_units(kCbfUnits);
    }

    void do_reorient() {
        step(Step::reorient, [&](StepRecord& rec) {
            const Eigen::Vector3d origin = s_.origin_mm
                                               ? Eigen::Vector3d((*s_.origin_mm)[0], (*s_.origin_mm)[1], (*s_.origin_mm)[2])
                                               : center_of_mass(positive_part(pd_ ? *pd_ : cbf_));
            cbf_ = set_origin(cbf_, origin);
            save(cbf_, rec, "cbf");
            if (pd_) {
                pd_ = set_origin(*pd_, origin);
                save(*pd_, rec, "pd");
            }
            structural_ = set_origin(structural_, center_of_mass(positive_part(structural_)));
            save(structural_, rec, "structural");
        });
    }

    void do_rough_strip() {
        step(Step::rough_strip, [&](StepRecord& rec) {
            rough_ = rough_strip(cbf_, cfg_.rough_strip_fraction);
            save(rough_->to_volume(), rec, "mask");
            cbf_ = apply_mask(cbf_, *rough_);
            save(cbf_, rec);
        });
    }

    void do_mask_segment() {
        step(Step::mask_segment, [&](StepRecord& rec) {
            brain_ = brain_mask_structural(structural_);
            save(brain_->to_volume(), rec, "brain_mask");
            if (s_.external_tissue_maps) {
                const auto& p = *s_.external_tissue_maps;
                // The maps live on the input structural grid; reorientation only moved its origin.
                auto t = accept_tissue_volumes(read_nifti(p[0]), read_nifti(p[1]), read_nifti(p[2]),
                                               structural_input_grid_);
                tissue_ = TissueProbMaps{t.p_gm.with_grid(structural_.grid()), t.p_wm.with_grid(structural_.grid()),
                                         t.p_csf.with_grid(structural_.grid())};
                rec.note = "external tissue maps; segmentation skipped";
            } else {
                SegmentationConfig seg;
                seg.contrast = s_.structural_contrast;
                seg.max_iter = cfg_.segmentation_max_iter;
                seg.tolerance = cfg_.segmentation_tolerance;
                seg.seed = cfg_.seed;
                MixtureFit fit;
                tissue_ = segment_tissues(structural_, *brain_, seg, &fit);
                rep_.metrics["segmentation_iterations"] = fit.iterations;
            }
            save(tissue_->p_gm, rec, "gm");
            save(tissue_->p_wm, rec, "wm");
            save(tissue_->p_csf, rec, "csf");
        });
    }

    void do_coregister() {
        step(Step::coregister, [&](StepRecord& rec) {
            coreg_ = coregister_to_structural(cbf_, pd_, structural_, cfg_.mode, cfg_.coregistration);
            rep_.metrics["coregistration_metric"] = coreg_.metric;
            save(coreg_.transform.to_affine(), rec);
            if (cfg_.mode == CoregMode::asl_space)
                save(coreg_.structural, rec, "structural");
            else
                save(asl_to_working(cbf_, coreg_, Interp::nearest), rec, "cbf");
        });
        if (!cfg_.enabled(Step::coregister)) {
            // Inputs are taken as already aligned in world space.
            coreg_.mode = cfg_.mode;
            coreg_.working_grid = cfg_.mode == CoregMode::asl_space ? cbf_.grid() : structural_.grid();
            coreg_.asl = cbf_;
            coreg_.pd = pd_;
            coreg_.structural = structural_to_working(structural_, coreg_, Interp::trilinear);
        }
        work_cbf_ = asl_to_working(cbf_, coreg_, Interp::nearest);
        if (brain_) brain_work_ = mask_of(structural_to_working(brain_->to_volume(), coreg_, Interp::nearest));
        if (rough_) rough_work_ = mask_of(asl_to_working(rough_->to_volume(), coreg_, Interp::nearest));
    }

    void do_pvc() {
        step(Step::pvc, [&](StepRecord& rec) {
            const TissueProbMaps t{structural_to_working(tissue_->p_gm, coreg_, Interp::trilinear),
                                   structural_to_working(tissue_->p_wm, coreg_, Interp::trilinear),
                                   structural_to_working(tissue_->p_csf, coreg_, Interp::trilinear)};
            const auto r = cfg_.pvc_method == PvcMethod::pet ? pvc_pet(work_cbf_, t, *brain_work_, cfg_.pvc)
                                                             : pvc_asllani(work_cbf_, t, *brain_work_, cfg_.pvc);
            rep_.pvc = r.diagnostics;
            pvc_gm_ = r.cbf_gm;
            save(r.cbf_gm, rec, "gm");
            if (r.cbf_wm) save(*r.cbf_wm, rec, "wm");
        });
    }

    void do_skull_strip() {
        step(Step::skull_strip_asl, [&](StepRecord& rec) {
            final_mask_ = intersect(*brain_work_, *rough_work_);
            work_cbf_ = apply_mask(work_cbf_, *final_mask_);
            save(final_mask_->to_volume(), rec, "mask");
            save(work_cbf_, rec);
        });
    }

    void do_normalize() {
        step(Step::normalize, [&](StepRecord& rec) {
            NormalizeConfig nc;
            nc.template_image = *tpl_;
            nc.output_spacing_mm = cfg_.output_spacing_mm;
            nc.registration = cfg_.normalization;
            nc.external_affine = normalize_affine_;
            const auto to_struct = register_affine(structural_, *tpl_, nc);
            if (normalize_affine_) rec.note = "external affine; estimation skipped";
            const auto p = decompose_affine(to_struct);
            for (int i = 0; i < 3; ++i) rep_.metrics["normalize_scale_" + std::string(1, "xyz"[i])] = p.scales[i];
            save(to_struct, rec);
            const auto to_work = coreg_.mode == CoregMode::asl_space ? compose(coreg_.transform.to_affine(), to_struct)
                                                                     : to_struct;
            norm_cbf_ = normalize_volume(work_cbf_, to_work, nc, Interp::trilinear);
            rep_.normalized_cbf = save(*norm_cbf_, rec, "cbf");
            save(normalize_volume(structural_, to_struct, nc, Interp::trilinear), rec, "structural");
            const auto& m = final_mask_ ? final_mask_ : brain_work_;
            if (m) rep_.normalized_mask = save(normalize_volume(m->to_volume(), to_work, nc, Interp::nearest), rec, "mask");
            if (pvc_gm_) {
                norm_pvc_ = normalize_volume(*pvc_gm_, to_work, nc, Interp::trilinear);
                save(*norm_pvc_, rec, "pvc_gm");
            }
        });
    }

    void do_smooth() {
        step(Step::smooth, [&](StepRecord& rec) {
            save(smooth_gaussian(*norm_cbf_, cfg_.smooth_fwhm_mm), rec, "cbf");
            if (norm_pvc_) save(smooth_gaussian(*norm_pvc_, cfg_.smooth_fwhm_mm), rec, "pvc_gm");
        });
    }

    const PipelineConfig& cfg_;
    const SubjectRecord& s_;
    fs::path run_dir_;
    const std::optional<Volume3D>& tpl_;
    SubjectReport& rep_;
    Logger& log_;
    std::string current_;

    Volume3D asl_, cbf_, structural_, work_cbf_;
    GridSpec structural_input_grid_;
    std::optional<Volume3D> pd_, pvc_gm_, norm_cbf_, norm_pvc_;
    std::optional<AffineTransform> normalize_affine_;
    std::optional<BinaryMask> rough_, brain_, brain_work_, rough_work_, final_mask_;
    std::optional<TissueProbMaps> tissue_;
    Coregistration coreg_;
};

nlohmann::ordered_json step_json(const StepRecord& s) {
    return {{"name", s.name}, {"number", s.number}, {"status", s.status},
            {"note", s.note}, {"seconds", s.seconds}, {"outputs", s.outputs}};
}

}  // namespace

bool RunReport::all_ok() const {
    return std::all_of(subjects.begin(), subjects.end(), [](const SubjectReport& s) { return s.ok; });
}

int RunReport::exit_code() const { return all_ok() ? 0 : 2; }

nlohmann::ordered_json report_to_json(const RunReport& r) {
    nlohmann::ordered_json j;
    j["run_id"] = r.run_id;
    j["started_at"] = r.started_at;
    j["seconds"] = r.seconds;
    j["all_ok"] = r.all_ok();
    j["parameters"] = r.parameters;
    j["subjects"] = nlohmann::ordered_json::array();
    for (const auto& s : r.subjects) {
        nlohmann::ordered_json e;
        e["subject_id"] = s.subject_id;
        e["ok"] = s.ok;
        e["failed_step"] = s.failed_step ? nlohmann::ordered_json(*s.failed_step) : nullptr;
        e["error"] = s.error;
        e["seconds"] = s.seconds;
        e["steps"] = nlohmann::ordered_json::array();
        for (const auto& st : s.steps) e["steps"].push_back(step_json(st));
        e["metrics"] = nlohmann::ordered_json::object();
        for (const auto& [k, v] : s.metrics) e["metrics"][k] = v;
        if (s.pvc)
            e["pvc_diagnostics"] = {{"in_mask", s.pvc->in_mask},
                                    {"solved", s.pvc->solved},
                                    {"rank_deficient", s.pvc->rank_deficient},
                                    {"low_support", s.pvc->low_support},
                                    {"negative_clamped", s.pvc->negative_clamped}};
        else
            e["pvc_diagnostics"] = nullptr;
        e["normalized_cbf"] = s.normalized_cbf ? nlohmann::ordered_json(*s.normalized_cbf) : nullptr;
        e["normalized_mask"] = s.normalized_mask ? nlohmann::ordered_json(*s.normalized_mask) : nullptr;
        j["subjects"].push_back(std::move(e));
    }
    return j;
}

RunReport report_from_json(const nlohmann::json& j, const fs::path& run_dir) {
    try {
        RunReport r;
        r.run_dir = run_dir;
        r.run_id = j.at("run_id").get<std::string>();
        r.started_at = j.value("started_at", "");
        r.seconds = j.value("seconds", 0.0);
        r.parameters = j.at("parameters");
        for (const auto& e : j.at("subjects")) {
            SubjectReport s;
            s.subject_id = e.at("subject_id").get<std::string>();
            s.ok = e.at("ok").get<bool>();
            if (!e.at("failed_step").is_null()) s.failed_step = e["failed_step"].get<std::string>();
            s.error = e.value("error", "");
            s.seconds = e.value("seconds", 0.0);
            for (const auto& st : e.at("steps")) {
                StepRecord rec;
                rec.name = st.at("name").get<std::string>();
                rec.number = st.at("number").get<int>();
                rec.status = st.at("status").get<std::string>();
                rec.note = st.value("note", "");
                rec.seconds = st.value("seconds", 0.0);
                rec.outputs = st.at("outputs").get<std::vector<std::string>>();
                s.steps.push_back(std::move(rec));
            }
            for (const auto& [k, v] : e.at("metrics").items()) s.metrics[k] = v.get<double>();
            if (const auto& p = e.at("pvc_diagnostics"); !p.is_null())
                s.pvc = PvcDiagnostics{p.at("in_mask"), p.at("solved"), p.at("rank_deficient"), p.at("low_support"),
                                       p.at("negative_clamped")};
            if (!e.at("normalized_cbf").is_null()) s.normalized_cbf = e["normalized_cbf"].get<std::string>();
            if (!e.at("normalized_mask").is_null()) s.normalized_mask = e["normalized_mask"].get<std::string>();
            r.subjects.push_back(std::move(s));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("run_report.json", e.what());
    }
}

RunReport read_run_report(const fs::path& run_dir) {
    const auto path = run_dir / "run_report.json";
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("run_report.json", e.what());
    }
    return report_from_json(j, run_dir);
}

RunReport run_pipeline(const PipelineConfig& cfg, std::ostream* log_stream) {
    const auto t0 = Clock::now();
    const auto issues = check_config(cfg);
    std::vector<std::string> fatal;
    std::map<std::size_t, std::string> missing;
    for (const auto& i : issues) {
        if (i.subject)
            missing[*i.subject] += (missing[*i.subject].empty() ? "" : "; ") + i.message;
        else
            fatal.push_back(i.message);
    }
    if (!fatal.empty()) throw AggregateError(std::move(fatal));

    RunReport report;
    report.run_id = cfg.run_id.value_or(local_time("%Y%m%d-%H%M%S"));
    report.started_at = local_time("%Y-%m-%dT%H:%M:%S%z");
    report.run_dir = cfg.output_root / report.run_id;
    report.parameters = config_to_json(cfg);
    report.parameters["run_id"] = report.run_id;

    std::optional<Volume3D> tpl;
    if (cfg.enabled(Step::normalize)) tpl = read_nifti(cfg.template_path);

    fs::create_directories(cfg.output_root);
    if (!fs::create_directory(report.run_dir))
        throw OverwriteError("run directory " + report.run_dir.string() +
                             " already exists; choose a different run_id");

    Logger log(log_stream);
    report.subjects.resize(cfg.subjects.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i; (i = next++) < cfg.subjects.size();) {
            auto& rep = report.subjects[i];
            if (auto it = missing.find(i); it != missing.end()) {
                rep.subject_id = cfg.subjects[i].subject_id;
                rep.failed_step = "load_inputs";
                rep.error = it->second;
                log("[" + rep.subject_id + "] FAILED at load_inputs: " + rep.error);
                continue;
            }
            SubjectRun(cfg, cfg.subjects[i], report.run_dir, tpl, rep, log).run();
        }
    };
    {
        const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), cfg.subjects.size());
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
        worker();
    }

    report.seconds = seconds_since(t0);
    std::ofstream(report.run_dir / "run_report.json") << report_to_json(report).dump(2) << '\n';
    const auto html = emit_qc_report(report, report.run_dir / "qc");
    log("QC report: " + html.string());
    return report;
}

}  // namespace asap
