#pragma once

#include "asap/volume.hpp"

#include <cstdint>
#include <vector>

namespace asap {

/// Per-voxel {0,1} labels on a grid.
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(GridSpec grid, std::vector<std::uint8_t> values);
    explicit BinaryMask(GridSpec grid);

    /// Any non-zero voxel is in the mask.
    static BinaryMask from_volume(const Volume3D& vol);

    const GridSpec& grid() const noexcept { return grid_; }
    const std::vector<std::uint8_t>& values() const noexcept { return values_; }
    bool operator[](std::size_t i) const noexcept { return values_[i] != 0; }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t count() const noexcept;
    bool empty() const noexcept { return count() == 0; }

    Volume3D to_volume() const;
    BinaryMask with_grid(GridSpec grid) const { return {std::move(grid), values_}; }

    friend bool operator==(const BinaryMask& a, const BinaryMask& b) { return a.values_ == b.values_; }

private:
    GridSpec grid_;
    std::vector<std::uint8_t> values_ = {0};
};

BinaryMask intersect(const BinaryMask& a, const BinaryMask& b);
Volume3D apply_mask(const Volume3D& vol, const BinaryMask& mask);

enum class Connectivity { face6 = 6, edge18 = 18, vertex26 = 26 };

/// Connected components of the set voxels. Labels start at 1 and are
/// numbered in order of each component's first voxel (linear index).
/// Returns the label count; `labels` is resized to the grid.
int label_components(const std::vector<std::uint8_t>& set, const Dims& dims, Connectivity conn,
                     std::vector<int>& labels);

BinaryMask largest_component(const BinaryMask& m, Connectivity conn = Connectivity::face6);

/// Dilation and erosion with a (2r+1)^3 cube.
BinaryMask dilate(const BinaryMask& m, int radius = 1);
BinaryMask erode(const BinaryMask& m, int radius = 1);

/// Dilation then erosion on a grid padded by `radius`, so the result always
/// contains the input, including at the grid boundary.
BinaryMask close(const BinaryMask& m, int radius = 1);

/// Sets background regions that are not 6-connected to the grid boundary.
BinaryMask fill_holes(const BinaryMask& m);

}  // namespace asap
