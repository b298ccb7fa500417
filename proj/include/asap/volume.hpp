#pragma once

#include "asap/transform.hpp"

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace asap {

using Dims = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

/// Geometry of a voxel grid: sizes, spacing and voxel-index -> world-mm map.
/// Spacing is always the column norms of the affine's linear block.
class GridSpec {
public:
    GridSpec() = default;
    GridSpec(Dims dims, const Eigen::Matrix4d& voxel_to_world);

    /// Axis-aligned grid with voxel (0,0,0) at `origin_mm`.
    static GridSpec axis_aligned(Dims dims, Vec3 spacing, Vec3 origin_mm = {0, 0, 0});
    /// Axis-aligned grid whose geometric center sits at the world origin.
    static GridSpec centered(Dims dims, Vec3 spacing);

    const Dims& dims() const noexcept { return dims_; }
    const Vec3& spacing() const noexcept { return spacing_; }
    const Eigen::Matrix4d& affine() const noexcept { return affine_; }
    std::size_t voxel_count() const noexcept {
        return static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
    }

    std::size_t index(int i, int j, int k) const noexcept {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims_[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_[1]) * k);
    }
    std::array<int, 3> coords(std::size_t idx) const noexcept {
        const auto nx = static_cast<std::size_t>(dims_[0]);
        const auto ny = static_cast<std::size_t>(dims_[1]);
        return {static_cast<int>(idx % nx), static_cast<int>((idx / nx) % ny),
                static_cast<int>(idx / (nx * ny))};
    }
    bool contains(int i, int j, int k) const noexcept {
        return i >= 0 && j >= 0 && k >= 0 && i < dims_[0] && j < dims_[1] && k < dims_[2];
    }
    Eigen::Vector3d world(double i, double j, double k) const {
        return affine_.topLeftCorner<3, 3>() * Eigen::Vector3d(i, j, k) +
               affine_.topRightCorner<3, 1>();
    }

    /// Same dims and affines agreeing within `tol` elementwise.
    bool matches(const GridSpec& other, double tol = 1e-4) const;

    GridSpec with_affine(const Eigen::Matrix4d& voxel_to_world) const {
        return GridSpec(dims_, voxel_to_world);
    }

private:
    Dims dims_{1, 1, 1};
    Vec3 spacing_{1, 1, 1};
    Eigen::Matrix4d affine_ = Eigen::Matrix4d::Identity();
};

/// Dense 3-D scalar image, x-fastest. Immutable once built.
class Volume3D {
public:
    Volume3D() = default;
    Volume3D(GridSpec grid, std::vector<double> data, std::string units = "arbitrary");
    /// Zero-filled volume.
    explicit Volume3D(GridSpec grid, std::string units = "arbitrary");

    const GridSpec& grid() const noexcept { return grid_; }
    const Dims& dims() const noexcept { return grid_.dims(); }
    const Vec3& spacing() const noexcept { return grid_.spacing(); }
    const Eigen::Matrix4d& affine() const noexcept { return grid_.affine(); }
    const std::string& units() const noexcept { return units_; }

    std::span<const double> data() const noexcept { return data_; }
    std::size_t size() const noexcept { return data_.size(); }
    double operator[](std::size_t idx) const noexcept { return data_[idx]; }
    double at(int i, int j, int k) const noexcept { return data_[grid_.index(i, j, k)]; }

    Volume3D with_data(std::vector<double> data) const { return {grid_, std::move(data), units_}; }
    Volume3D with_grid(GridSpec grid) const { return {std::move(grid), data_, units_}; }
    Volume3D with_units(std::string units) const { return {grid_, data_, std::move(units)}; }

private:
    GridSpec grid_;
    std::vector<double> data_ = {0.0};
    std::string units_ = "arbitrary";
};

/// Translates the affine so the intensity-weighted centroid maps to world
/// (0,0,0). Throws DegenerateInputError for all-zero input and
/// ParameterError for negative or non-finite voxels.
Volume3D set_origin_center_of_mass(const Volume3D& vol);

/// Translates the affine so the given world point becomes the origin.
Volume3D set_origin(const Volume3D& vol, const Eigen::Vector3d& new_origin_world);

/// Intensity-weighted centroid in world mm.
Eigen::Vector3d center_of_mass(const Volume3D& vol);

/// Throws GeometryError unless both grids agree.
void require_same_grid(const GridSpec& a, const GridSpec& b, const std::string& what);

}  // namespace asap
