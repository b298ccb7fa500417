#include "asap/roistats.hpp"

#include "asap/error.hpp"
#include "asap/nifti.hpp"
#include "asap/stats.hpp"

#include <fstream>
#include <iomanip>
#include <map>

namespace asap {

RoiTable roi_stats(const std::vector<Named<Volume3D>>& maps, const std::vector<Named<BinaryMask>>& rois) {
    RoiTable out;
    for (const auto& m : maps)
        for (const auto& r : rois) {
            require_same_grid(m.value.grid(), r.value.grid(), "map '" + m.id + "' vs ROI '" + r.id + "'");
            std::vector<double> vals;
            for (std::size_t i = 0; i < r.value.size(); ++i)
                if (r.value[i]) vals.push_back(m.value[i]);
            if (vals.empty()) {
                out.warnings.push_back("ROI '" + r.id + "' is empty; no row for map '" + m.id + "'");
                continue;
            }
            RoiTableRow row{m.id, r.id};
            double sum = 0.0;
            row.max = vals.front();
            for (double v : vals) {
                sum += v;
                row.max = std::max(row.max, v);
            }
            row.voxel_count = vals.size();
            row.mean = sum / static_cast<double>(vals.size());
            row.median = median(std::move(vals));
            out.rows.push_back(std::move(row));
        }
    return out;
}

std::string volume_id(const std::filesystem::path& p) {
    std::string name = p.filename().string();
    for (const char* ext : {".nii.gz", ".nii", ".hdr", ".img.gz", ".img"}) {
        const std::string e = ext;
        if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0)
            return name.substr(0, name.size() - e.size());
    }
    return name;
}

std::vector<std::filesystem::path> read_path_list(const std::filesystem::path& list) {
    std::ifstream in(list);
    if (!in) throw IoError("cannot read list file " + list.string());
    std::vector<std::filesystem::path> out;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r");
        std::filesystem::path p = line.substr(b, e - b + 1);
        if (p.is_relative()) p = list.parent_path() / p;
        out.push_back(p);
    }
    return out;
}

BatchInputs load_batch_lists(const std::filesystem::path& map_list, const std::filesystem::path& roi_list) {
    BatchInputs out;
    std::vector<std::string> errors;
    std::vector<std::filesystem::path> map_paths, roi_paths;
    try {
        map_paths = read_path_list(map_list);
    } catch (const Error& e) {
        errors.push_back(e.what());
    }
    try {
        roi_paths = read_path_list(roi_list);
    } catch (const Error& e) {
        errors.push_back(e.what());
    }
    for (const auto& p : map_paths) try {
            out.maps.push_back({volume_id(p), read_nifti(p)});
        } catch (const Error& e) {
            errors.push_back(p.string() + ": " + e.what());
        }
    for (const auto& p : roi_paths) try {
            out.rois.push_back({volume_id(p), BinaryMask::from_volume(read_nifti(p))});
        } catch (const Error& e) {
            errors.push_back(p.string() + ": " + e.what());
        }
    if (!errors.empty()) throw AggregateError(std::move(errors));
    // Pipeline outputs share file names across subjects; prefix the parent
    // directory when a stem repeats.
    const auto disambiguate = [](auto& items, const std::vector<std::filesystem::path>& paths) {
        std::map<std::string, int> count;
        for (const auto& it : items) ++count[it.id];
        for (std::size_t i = 0; i < items.size(); ++i)
            if (count[items[i].id] > 1) items[i].id = paths[i].parent_path().filename().string() + "/" + items[i].id;
    };
    disambiguate(out.maps, map_paths);
    disambiguate(out.rois, roi_paths);
    return out;
}

void write_roi_table(const std::filesystem::path& path, const std::vector<RoiTableRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write ROI table " + path.string());
    out << "map_id\troi_id\tmean\tmedian\tmax\tvoxel_count\n" << std::setprecision(10);
    for (const auto& r : rows)
        out << r.map_id << '\t' << r.roi_id << '\t' << r.mean << '\t' << r.median << '\t' << r.max << '\t'
            << r.voxel_count << '\n';
    if (!out) throw IoError("failed writing ROI table " + path.string());
}

}  // namespace asap
