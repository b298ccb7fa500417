#include "asap/error.hpp"
#include "asap/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace asap {

namespace fs = std::filesystem;

const char* step_name(Step s) {
    switch (s) {
        case Step::quantify: return "quantify";
        case Step::reorient: return "reorient";
        case Step::rough_strip: return "rough_strip";
        case Step::mask_segment: return "mask_segment";
        case Step::coregister: return "coregister";
        case Step::pvc: return "pvc";
        case Step::skull_strip_asl: return "skull_strip_asl";
        case Step::normalize: return "normalize";
        case Step::smooth: return "smooth";
    }
    return "?";
}

int step_number(Step s) { return static_cast<int>(s) + 1; }

namespace {

struct Value {
    enum class Kind { string, number, boolean, array } kind = Kind::string;
    std::string s;
    double n = 0.0;
    bool b = false;
    std::vector<Value> items;
};

struct Entry {
    std::string key;
    Value value;
    int line = 0;
};

struct Table {
    std::string name;  // "" for the root
    int line = 0;
    std::vector<Entry> entries;
};

std::string at_line(int line) { return "line " + std::to_string(line) + ": "; }

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// Drops a trailing comment, ignoring '#' inside quotes.
std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '\\' && quoted) {
            ++i;
        } else if (line[i] == '"') {
            quoted = !quoted;
        } else if (line[i] == '#' && !quoted) {
            return line.substr(0, i);
        }
    }
    return line;
}

class ValueParser {
public:
    explicit ValueParser(std::string_view text) : t_(text) {}

    Value parse() {
        Value v = value();
        skip_ws();
        if (p_ != t_.size()) throw std::runtime_error("unexpected trailing text '" + std::string(t_.substr(p_)) + "'");
        return v;
    }

private:
    void skip_ws() {
        while (p_ < t_.size() && (t_[p_] == ' ' || t_[p_] == '\t')) ++p_;
    }

    Value value() {
        skip_ws();
        if (p_ >= t_.size()) throw std::runtime_error("missing value");
        const char c = t_[p_];
        if (c == '"') return string();
        if (c == '[') return array();
        if (t_.substr(p_, 4) == "true") {
            p_ += 4;
            Value v;
            v.kind = Value::Kind::boolean;
            v.b = true;
            return v;
        }
        if (t_.substr(p_, 5) == "false") {
            p_ += 5;
            Value v;
            v.kind = Value::Kind::boolean;
            return v;
        }
        return number();
    }

    Value string() {
        ++p_;
        Value v;
        while (p_ < t_.size() && t_[p_] != '"') {
            char c = t_[p_++];
            if (c == '\\') {
                if (p_ >= t_.size()) break;
                const char e = t_[p_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: throw std::runtime_error(std::string("unknown escape '\\") + e + "'");
                }
            }
            v.s += c;
        }
        if (p_ >= t_.size()) throw std::runtime_error("unterminated string");
        ++p_;
        return v;
    }

    Value array() {
        ++p_;
        Value v;
        v.kind = Value::Kind::array;
        skip_ws();
        if (p_ < t_.size() && t_[p_] == ']') {
            ++p_;
            return v;
        }
        for (;;) {
            v.items.push_back(value());
            skip_ws();
            if (p_ >= t_.size()) throw std::runtime_error("unterminated array");
            if (t_[p_] == ']') {
                ++p_;
                return v;
            }
            if (t_[p_] != ',') throw std::runtime_error("expected ',' or ']' in array");
            ++p_;
            skip_ws();
            if (p_ < t_.size() && t_[p_] == ']') {
                ++p_;
                return v;
            }
        }
    }

    Value number() {
        std::size_t end = p_;
        while (end < t_.size() && std::string_view("+-.eE0123456789_").find(t_[end]) != std::string_view::npos) ++end;
        std::string digits;
        for (std::size_t i = p_; i < end; ++i)
            if (t_[i] != '_') digits += t_[i];
        if (!digits.empty() && digits[0] == '+') digits.erase(0, 1);
        Value v;
        v.kind = Value::Kind::number;
        const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v.n);
        if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size())
            throw std::runtime_error("cannot parse value '" + std::string(t_.substr(p_)) + "'");
        p_ = end;
        return v;
    }

    std::string_view t_;
    std::size_t p_ = 0;
};

std::vector<Table> parse_tables(const std::string& text, std::vector<std::string>& errors) {
    std::vector<Table> tables(1);
    std::set<std::string> seen_tables;
    std::set<std::string> keys_in_current;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const std::string s = trim(strip_comment(raw));
        if (s.empty()) continue;
        if (s.rfind("[[", 0) == 0) {
            if (s.size() < 4 || s.substr(s.size() - 2) != "]]") {
                errors.push_back(at_line(line) + "malformed table header '" + s + "'");
                continue;
            }
            tables.push_back({trim(s.substr(2, s.size() - 4)), line, {}});
            keys_in_current.clear();
            continue;
        }
        if (s[0] == '[') {
            if (s.back() != ']') {
                errors.push_back(at_line(line) + "malformed table header '" + s + "'");
                continue;
            }
            const std::string name = trim(s.substr(1, s.size() - 2));
            if (!seen_tables.insert(name).second) errors.push_back(at_line(line) + "duplicate table [" + name + "]");
            tables.push_back({name, line, {}});
            keys_in_current.clear();
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            errors.push_back(at_line(line) + "expected 'key = value', got '" + s + "'");
            continue;
        }
        const std::string key = trim(s.substr(0, eq));
        if (key.empty() || !std::all_of(key.begin(), key.end(), [](char c) {
                return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
            })) {
            errors.push_back(at_line(line) + "invalid key '" + key + "'");
            continue;
        }
        if (!keys_in_current.insert(key).second) {
            errors.push_back(at_line(line) + "duplicate key '" + key + "'");
            continue;
        }
        try {
            tables.back().entries.push_back({key, ValueParser(s.substr(eq + 1)).parse(), line});
        } catch (const std::exception& e) {
            errors.push_back(at_line(line) + "key '" + key + "': " + e.what());
        }
    }
    return tables;
}

// Typed access to one table's entries; anything not consumed is reported as
// an unknown key.
class Binder {
public:
    Binder(const Table& t, const fs::path& base, std::vector<std::string>& errors)
        : t_(t), base_(base), errors_(errors) {}

    ~Binder() {
        for (const auto& e : t_.entries)
            if (!used_.count(e.key))
                errors_.push_back(at_line(e.line) + "unknown key '" + e.key + "'" + where());
    }

    void str(const std::string& key, std::string& out) {
        if (const Entry* e = find(key, Value::Kind::string, "a string")) out = e->value.s;
    }
    void path(const std::string& key, fs::path& out) {
        if (const Entry* e = find(key, Value::Kind::string, "a string")) out = resolve(e->value.s);
    }
    void opt_path(const std::string& key, std::optional<fs::path>& out) {
        if (const Entry* e = find(key, Value::Kind::string, "a string")) out = resolve(e->value.s);
    }
    void boolean(const std::string& key, bool& out) {
        if (const Entry* e = find(key, Value::Kind::boolean, "true or false")) out = e->value.b;
    }
    void number(const std::string& key, double& out) {
        if (const Entry* e = find(key, Value::Kind::number, "a number")) out = e->value.n;
    }
    void opt_number(const std::string& key, std::optional<double>& out) {
        if (const Entry* e = find(key, Value::Kind::number, "a number")) out = e->value.n;
    }
    template <class Int>
    void integer(const std::string& key, Int& out) {
        if (const Entry* e = find(key, Value::Kind::number, "an integer")) {
            const double v = e->value.n;
            if (v != std::floor(v) || std::abs(v) > 9.0e15)
                errors_.push_back(at_line(e->line) + "key '" + key + "' must be an integer");
            else
                out = static_cast<Int>(v);
        }
    }
    // A scalar applies to all three axes.
    void vec3(const std::string& key, Vec3& out) {
        const Entry* e = get(key);
        if (!e) return;
        if (e->value.kind == Value::Kind::number) {
            out = {e->value.n, e->value.n, e->value.n};
            return;
        }
        if (auto v = numbers(*e, 3)) out = {(*v)[0], (*v)[1], (*v)[2]};
    }
    void opt_vec3(const std::string& key, std::optional<Vec3>& out) {
        const Entry* e = get(key);
        if (!e) return;
        if (auto v = numbers(*e, 3)) out = Vec3{(*v)[0], (*v)[1], (*v)[2]};
    }
    void int3(const std::string& key, std::array<int, 3>& out) {
        const Entry* e = get(key);
        if (!e) return;
        if (auto v = numbers(*e, 3)) {
            for (int i = 0; i < 3; ++i) {
                if ((*v)[i] != std::floor((*v)[i])) {
                    errors_.push_back(at_line(e->line) + "key '" + key + "' must hold integers");
                    return;
                }
                out[i] = static_cast<int>((*v)[i]);
            }
        }
    }
    void paths3(const std::string& key, std::optional<std::array<fs::path, 3>>& out) {
        const Entry* e = get(key);
        if (!e) return;
        const auto& items = e->value.items;
        if (e->value.kind != Value::Kind::array || items.size() != 3 ||
            !std::all_of(items.begin(), items.end(), [](const Value& v) { return v.kind == Value::Kind::string; })) {
            errors_.push_back(at_line(e->line) + "key '" + key + "' must be an array of 3 paths");
            return;
        }
        out = std::array<fs::path, 3>{resolve(items[0].s), resolve(items[1].s), resolve(items[2].s)};
    }
    // Maps a string value through `choices`.
    template <class E>
    void choice(const std::string& key, E& out, const std::vector<std::pair<std::string, E>>& choices) {
        const Entry* e = find(key, Value::Kind::string, "a string");
        if (!e) return;
        for (const auto& [name, value] : choices)
            if (name == e->value.s) {
                out = value;
                return;
            }
        std::string names;
        for (const auto& c : choices) names += (names.empty() ? "" : ", ") + c.first;
        errors_.push_back(at_line(e->line) + "key '" + key + "' must be one of " + names + " (got '" + e->value.s +
                          "')");
    }

    void ignore_rest() {
        for (const auto& e : t_.entries) used_.insert(e.key);
    }

private:
    std::string where() const { return t_.name.empty() ? "" : " in [" + t_.name + "]"; }

    const Entry* get(const std::string& key) {
        for (const auto& e : t_.entries)
            if (e.key == key) {
                used_.insert(key);
                return &e;
            }
        return nullptr;
    }

    const Entry* find(const std::string& key, Value::Kind kind, const char* expected) {
        const Entry* e = get(key);
        if (e && e->value.kind != kind) {
            errors_.push_back(at_line(e->line) + "key '" + key + "' must be " + expected);
            return nullptr;
        }
        return e;
    }

    std::optional<std::vector<double>> numbers(const Entry& e, std::size_t n) {
        const auto& items = e.value.items;
        if (e.value.kind != Value::Kind::array || items.size() != n ||
            !std::all_of(items.begin(), items.end(), [](const Value& v) { return v.kind == Value::Kind::number; })) {
            errors_.push_back(at_line(e.line) + "key '" + e.key + "' must be an array of " + std::to_string(n) +
                              " numbers");
            return std::nullopt;
        }
        std::vector<double> out;
        for (const auto& v : items) out.push_back(v.n);
        return out;
    }

    fs::path resolve(const std::string& s) const {
        const fs::path p(s);
        return p.is_absolute() || base_.empty() ? p : base_ / p;
    }

    const Table& t_;
    fs::path base_;
    std::vector<std::string>& errors_;
    std::set<std::string> used_;
};

void bind_registration(Binder& b, RegistrationConfig& r) {
    b.choice<Metric>("metric", r.metric,
                     {{"nmi", Metric::normalized_mutual_information}, {"ncc", Metric::normalized_cross_correlation}});
    b.integer("pyramid_levels", r.pyramid_levels);
    b.integer("histogram_bins", r.histogram_bins);
    b.integer("max_iter_per_level", r.max_iter_per_level);
    b.number("rotation_tolerance_deg", r.rotation_tolerance_deg);
    b.number("translation_tolerance_mm", r.translation_tolerance_mm);
    b.number("min_overlap_fraction", r.min_overlap_fraction);
}

void bind_subject(Binder& b, SubjectRecord& s) {
    b.str("id", s.subject_id);
    b.path("asl", s.asl_input);
    b.choice<AslInputKind>("asl_kind", s.asl_kind, {{"difference", AslInputKind::difference}, {"cbf", AslInputKind::cbf}});
    b.opt_path("pd", s.pd_image);
    b.path("structural", s.structural);
    b.choice<StructuralContrast>("structural_contrast", s.structural_contrast,
                                 {{"T1w", StructuralContrast::t1w}, {"T2w", StructuralContrast::t2w}});
    b.paths3("tissue_maps", s.external_tissue_maps);
    b.opt_vec3("origin_mm", s.origin_mm);
    b.opt_path("normalize_affine", s.normalize_affine);
}

}  // namespace

PipelineConfig parse_config(const std::string& text, const fs::path& base_dir) {
    std::vector<std::string> errors;
    const auto tables = parse_tables(text, errors);
    PipelineConfig cfg;
    // Per-modality defaults are applied before the explicit keys.
    for (const auto& t : tables)
        if (t.name == "quantify")
            for (const auto& e : t.entries)
                if (e.key == "modality" && e.value.kind == Value::Kind::string && e.value.s == "pasl")
                    cfg.acquisition = AcquisitionParams::pasl_defaults();

    for (const auto& t : tables) {
        Binder b(t, base_dir, errors);
        if (t.name.empty()) {
            b.path("output_root", cfg.output_root);
            std::string run_id;
            b.str("run_id", run_id);
            if (!run_id.empty()) cfg.run_id = run_id;
            b.integer("threads", cfg.threads);
            b.integer("seed", cfg.seed);
        } else if (t.name == "steps") {
            for (Step s : kAllSteps) b.boolean(step_name(s), cfg.steps[static_cast<std::size_t>(s)]);
        } else if (t.name == "quantify") {
            auto& a = cfg.acquisition;
            b.choice<Modality>("modality", a.modality, {{"pcasl", Modality::pcasl}, {"pasl", Modality::pasl}});
            b.number("post_label_delay_s", a.post_label_delay_s);
            b.opt_number("label_duration_s", a.label_duration_s);
            b.opt_number("inversion_time_s", a.inversion_time_s);
            b.opt_number("bolus_duration_s", a.bolus_duration_s);
            b.number("lambda_ml_per_g", a.lambda_ml_per_g);
            b.number("alpha", a.alpha);
            b.number("t1_blood_s", a.t1_blood_s);
            b.number("pd_threshold_fraction", a.pd_threshold_fraction);
            b.number("background_suppression_efficiency", a.background_suppression_efficiency);
            b.number("difference_divisor", a.difference_divisor);
        } else if (t.name == "rough_strip") {
            b.number("fraction", cfg.rough_strip_fraction);
        } else if (t.name == "mask_segment") {
            b.integer("max_iter", cfg.segmentation_max_iter);
            b.number("tolerance", cfg.segmentation_tolerance);
        } else if (t.name == "coregister") {
            b.choice<CoregMode>("mode", cfg.mode,
                                {{"asl_space", CoregMode::asl_space}, {"structural_space", CoregMode::structural_space}});
            bind_registration(b, cfg.coregistration);
        } else if (t.name == "pvc") {
            b.choice<PvcMethod>("method", cfg.pvc_method,
                                {{"none", PvcMethod::none}, {"pet", PvcMethod::pet}, {"asllani", PvcMethod::asllani}});
            b.int3("kernel", cfg.pvc.kernel_dims);
            b.number("wm_gm_ratio", cfg.pvc.wm_gm_ratio);
            b.number("condition_limit", cfg.pvc.condition_limit);
            b.number("min_valid_fraction", cfg.pvc.min_valid_fraction);
            b.boolean("clamp_negative", cfg.pvc.clamp_negative);
        } else if (t.name == "normalize") {
            b.path("template", cfg.template_path);
            b.vec3("output_spacing_mm", cfg.output_spacing_mm);
            bind_registration(b, cfg.normalization);
        } else if (t.name == "smooth") {
            b.vec3("fwhm_mm", cfg.smooth_fwhm_mm);
        } else if (t.name == "subject") {
            SubjectRecord s;
            bind_subject(b, s);
            if (s.subject_id.empty()) errors.push_back(at_line(t.line) + "[[subject]] needs an 'id'");
            if (s.asl_input.empty()) errors.push_back(at_line(t.line) + "[[subject]] needs an 'asl' path");
            if (s.structural.empty()) errors.push_back(at_line(t.line) + "[[subject]] needs a 'structural' path");
            cfg.subjects.push_back(std::move(s));
        } else {
            errors.push_back(at_line(t.line) + "unknown table [" + t.name + "]");
            b.ignore_rest();
        }
    }
    if (!errors.empty()) throw AggregateError(std::move(errors));
    return cfg;
}

std::vector<ConfigIssue> check_config(const PipelineConfig& cfg) {
    std::vector<ConfigIssue> issues;
    const auto fail = [&](std::string m) { issues.push_back({std::move(m), std::nullopt}); };
    const auto guarded = [&](const char* what, auto&& f) {
        try {
            f();
        } catch (const Error& e) {
            fail(std::string(what) + ": " + e.what());
        }
    };
    const auto on = [&](Step s) { return cfg.enabled(s); };

    if (cfg.subjects.empty()) fail("no [[subject]] entries");
    if (cfg.output_root.empty()) fail("output_root is not set");
    if (cfg.threads < 1) fail("threads must be >= 1 (got " + std::to_string(cfg.threads) + ")");
    if (cfg.run_id && !std::regex_match(*cfg.run_id, std::regex("[A-Za-z0-9._-]+")))
        fail("run_id '" + *cfg.run_id + "' is not filesystem-safe");
    if (std::none_of(cfg.steps.begin(), cfg.steps.end(), [](bool b) { return b; })) fail("no steps enabled");

    if (on(Step::quantify)) guarded("[quantify]", [&] { cfg.acquisition.validate(); });
    if (on(Step::rough_strip) && !(cfg.rough_strip_fraction > 0.0 && cfg.rough_strip_fraction < 1.0))
        fail("[rough_strip] fraction must lie in (0, 1)");
    if (on(Step::mask_segment) && (cfg.segmentation_max_iter < 1 || !(cfg.segmentation_tolerance > 0.0)))
        fail("[mask_segment] max_iter must be >= 1 and tolerance > 0");
    if (on(Step::coregister)) guarded("[coregister]", [&] { cfg.coregistration.validate(); });
    if (on(Step::pvc)) {
        if (cfg.pvc_method == PvcMethod::none) fail("pvc step is enabled but [pvc] method = none");
        if (!on(Step::mask_segment)) fail("pvc requires the mask_segment step");
        if (!on(Step::coregister)) fail("pvc requires the coregister step");
        if (cfg.mode != CoregMode::asl_space)
            fail("pvc is only available in asl_space mode ([coregister] mode = structural_space)");
        guarded("[pvc]", [&] { cfg.pvc.validate(); });
    }
    if (on(Step::skull_strip_asl)) {
        if (!on(Step::rough_strip)) fail("skull_strip_asl requires the rough_strip step");
        if (!on(Step::mask_segment)) fail("skull_strip_asl requires the mask_segment step");
    }
    if (on(Step::normalize)) {
        guarded("[normalize]", [&] { cfg.normalization.validate(); });
        for (double s : cfg.output_spacing_mm)
            if (!(s > 0.0) || !std::isfinite(s)) {
                fail("[normalize] output_spacing_mm must be positive");
                break;
            }
        if (cfg.template_path.empty())
            fail("[normalize] template is not set");
        else if (!fs::is_regular_file(cfg.template_path))
            fail("[normalize] template not found: " + cfg.template_path.string());
    }
    if (on(Step::smooth)) {
        if (!on(Step::normalize)) fail("smooth requires the normalize step");
        for (double f : cfg.smooth_fwhm_mm)
            if (!(f >= 0.0) || !std::isfinite(f)) {
                fail("[smooth] fwhm_mm must be finite and >= 0");
                break;
            }
    }

    std::set<std::string> ids;
    const std::regex safe("[A-Za-z0-9._-]+");
    for (std::size_t i = 0; i < cfg.subjects.size(); ++i) {
        const auto& s = cfg.subjects[i];
        const std::string who = "subject '" + s.subject_id + "'";
        if (!std::regex_match(s.subject_id, safe) || s.subject_id == "." || s.subject_id == "..")
            fail(who + ": id is not filesystem-safe");
        else if (s.subject_id == "qc")
            fail(who + ": id 'qc' is reserved");
        if (!ids.insert(s.subject_id).second) fail(who + ": duplicate id");
        if (s.asl_kind == AslInputKind::difference) {
            if (!on(Step::quantify)) fail(who + ": a difference-image input needs the quantify step");
            if (!s.pd_image) fail(who + ": a difference-image input needs a 'pd' image");
        }
        const auto need = [&](const fs::path& p, const char* what) {
            if (!p.empty() && !fs::is_regular_file(p))
                issues.push_back({who + ": " + what + " not found: " + p.string(), i});
        };
        need(s.asl_input, "asl");
        if (s.pd_image) need(*s.pd_image, "pd");
        need(s.structural, "structural");
        if (s.external_tissue_maps)
            for (const auto& p : *s.external_tissue_maps) need(p, "tissue map");
        if (s.normalize_affine) need(*s.normalize_affine, "normalize_affine");
    }
    return issues;
}

PipelineConfig validate_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw AggregateError({"cannot read config file " + path.string()});
    std::stringstream ss;
    ss << in.rdbuf();
    auto cfg = parse_config(ss.str(), path.parent_path());
    const auto issues = check_config(cfg);
    if (!issues.empty()) {
        std::vector<std::string> msgs;
        for (const auto& i : issues) msgs.push_back(i.message);
        throw AggregateError(std::move(msgs));
    }
    return cfg;
}

namespace {

nlohmann::ordered_json registration_json(const RegistrationConfig& r) {
    return {{"metric", r.metric == Metric::normalized_mutual_information ? "nmi" : "ncc"},
            {"pyramid_levels", r.pyramid_levels},
            {"histogram_bins", r.histogram_bins},
            {"max_iter_per_level", r.max_iter_per_level},
            {"rotation_tolerance_deg", r.rotation_tolerance_deg},
            {"translation_tolerance_mm", r.translation_tolerance_mm},
            {"min_overlap_fraction", r.min_overlap_fraction}};
}

template <class T>
nlohmann::ordered_json opt(const std::optional<T>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json();
}

}  // namespace

nlohmann::ordered_json config_to_json(const PipelineConfig& cfg) {
    nlohmann::ordered_json j;
    j["output_root"] = cfg.output_root.string();
    j["threads"] = cfg.threads;
    j["seed"] = cfg.seed;
    for (Step s : kAllSteps) j["steps"][step_name(s)] = cfg.enabled(s);
    const auto& a = cfg.acquisition;
    j["quantify"] = {{"modality", a.modality == Modality::pcasl ? "pcasl" : "pasl"},
                     {"post_label_delay_s", a.post_label_delay_s},
                     {"label_duration_s", opt(a.label_duration_s)},
                     {"inversion_time_s", opt(a.inversion_time_s)},
                     {"bolus_duration_s", opt(a.bolus_duration_s)},
                     {"lambda_ml_per_g", a.lambda_ml_per_g},
                     {"alpha", a.alpha},
                     {"t1_blood_s", a.t1_blood_s},
                     {"pd_threshold_fraction", a.pd_threshold_fraction},
                     {"background_suppression_efficiency", a.background_suppression_efficiency},
                     {"difference_divisor", a.difference_divisor}};
    j["rough_strip"] = {{"fraction", cfg.rough_strip_fraction}};
    j["mask_segment"] = {{"max_iter", cfg.segmentation_max_iter},
                         {"tolerance", cfg.segmentation_tolerance},
                         {"seed", cfg.seed}};
    j["coregister"] = registration_json(cfg.coregistration);
    j["coregister"]["mode"] = cfg.mode == CoregMode::asl_space ? "asl_space" : "structural_space";
    const char* methods[] = {"none", "pet", "asllani"};
    j["pvc"] = {{"method", methods[static_cast<int>(cfg.pvc_method)]},
                {"kernel", cfg.pvc.kernel_dims},
                {"wm_gm_ratio", cfg.pvc.wm_gm_ratio},
                {"condition_limit", cfg.pvc.condition_limit},
                {"min_valid_fraction", cfg.pvc.min_valid_fraction},
                {"clamp_negative", cfg.pvc.clamp_negative}};
    j["normalize"] = registration_json(cfg.normalization);
    j["normalize"]["template"] = cfg.template_path.string();
    j["normalize"]["output_spacing_mm"] = cfg.output_spacing_mm;
    j["smooth"] = {{"fwhm_mm", cfg.smooth_fwhm_mm}};
    j["subjects"] = nlohmann::ordered_json::array();
    for (const auto& s : cfg.subjects) {
        nlohmann::ordered_json e{{"id", s.subject_id},
                                 {"asl", s.asl_input.string()},
                                 {"asl_kind", s.asl_kind == AslInputKind::difference ? "difference" : "cbf"},
                                 {"pd", s.pd_image ? nlohmann::ordered_json(s.pd_image->string()) : nullptr},
                                 {"structural", s.structural.string()},
                                 {"structural_contrast", s.structural_contrast == StructuralContrast::t1w ? "T1w" : "T2w"}};
        if (s.external_tissue_maps)
            for (const auto& p : *s.external_tissue_maps) e["tissue_maps"].push_back(p.string());
        if (s.origin_mm) e["origin_mm"] = *s.origin_mm;
        if (s.normalize_affine) e["normalize_affine"] = s.normalize_affine->string();
        j["subjects"].push_back(std::move(e));
    }
    return j;
}

}  // namespace asap
