#pragma once

#include "asap/mask.hpp"
#include "asap/volume.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace asap {

template <typename T>
struct Named {
    std::string id;
    T value;
};

struct RoiTableRow {
    std::string map_id;
    std::string roi_id;
    double mean = 0.0;
    double median = 0.0;
    double max = 0.0;
    std::size_t voxel_count = 0;
};

struct RoiTable {
    std::vector<RoiTableRow> rows;
    std::vector<std::string> warnings;  // one per skipped empty ROI
};

/// One row per (map, roi) pair, maps outermost. Empty ROIs are skipped with
/// a warning. Throws GeometryError naming the pair on a grid mismatch.
RoiTable roi_stats(const std::vector<Named<Volume3D>>& maps, const std::vector<Named<BinaryMask>>& rois);

struct BatchInputs {
    std::vector<Named<Volume3D>> maps;
    std::vector<Named<BinaryMask>> rois;
};

/// Reads two list files (one path per line, '#' comments, blank lines
/// ignored; relative paths are taken relative to the list file) and loads
/// every entry. All failures are collected into one AggregateError. Ids are
/// file stems, prefixed with the parent directory name when a stem repeats.
BatchInputs load_batch_lists(const std::filesystem::path& map_list, const std::filesystem::path& roi_list);

/// Paths listed in a batch list file, resolved.
std::vector<std::filesystem::path> read_path_list(const std::filesystem::path& list);

/// File name without ".nii", ".nii.gz", ".hdr" or ".img".
std::string volume_id(const std::filesystem::path& p);

/// Tab-separated table with header map_id, roi_id, mean, median, max, voxel_count.
void write_roi_table(const std::filesystem::path& path, const std::vector<RoiTableRow>& rows);

}  // namespace asap
