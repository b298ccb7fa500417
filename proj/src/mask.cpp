#include "asap/mask.hpp"

#include "asap/error.hpp"

#include <algorithm>
#include <array>

namespace asap {

BinaryMask::BinaryMask(GridSpec grid, std::vector<std::uint8_t> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.voxel_count()) throw GeometryError("mask length does not match its grid");
    for (auto& v : values_) v = v ? 1 : 0;
}

BinaryMask::BinaryMask(GridSpec grid) : grid_(std::move(grid)), values_(grid_.voxel_count(), 0) {}

BinaryMask BinaryMask::from_volume(const Volume3D& vol) {
    std::vector<std::uint8_t> v(vol.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = vol[i] != 0.0 ? 1 : 0;
    return {vol.grid(), std::move(v)};
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

Volume3D BinaryMask::to_volume() const {
    return Volume3D(grid_, std::vector<double>(values_.begin(), values_.end()), "mask");
}

BinaryMask intersect(const BinaryMask& a, const BinaryMask& b) {
    require_same_grid(a.grid(), b.grid(), "mask intersection");
    std::vector<std::uint8_t> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] && b[i];
    return {a.grid(), std::move(v)};
}

Volume3D apply_mask(const Volume3D& vol, const BinaryMask& mask) {
    require_same_grid(vol.grid(), mask.grid(), "volume vs mask");
    std::vector<double> v(vol.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] ? vol[i] : 0.0;
    return vol.with_data(std::move(v));
}

namespace {

std::vector<std::array<int, 3>> neighbour_offsets(Connectivity conn) {
    std::vector<std::array<int, 3>> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int n = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (n == 0) continue;
                if (conn == Connectivity::face6 && n > 1) continue;
                if (conn == Connectivity::edge18 && n > 2) continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

}  // namespace

int label_components(const std::vector<std::uint8_t>& set, const Dims& dims, Connectivity conn,
                     std::vector<int>& labels) {
    const auto offsets = neighbour_offsets(conn);
    const std::size_t nx = dims[0], ny = dims[1];
    labels.assign(set.size(), 0);
    int next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < set.size(); ++seed) {
        if (!set[seed] || labels[seed]) continue;
        labels[seed] = ++next;
        stack.push_back(seed);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            const int i = static_cast<int>(cur % nx), j = static_cast<int>((cur / nx) % ny),
                      k = static_cast<int>(cur / (nx * ny));
            for (const auto& o : offsets) {
                const int a = i + o[0], b = j + o[1], c = k + o[2];
                if (a < 0 || b < 0 || c < 0 || a >= dims[0] || b >= dims[1] || c >= dims[2]) continue;
                const std::size_t n = a + nx * (b + ny * static_cast<std::size_t>(c));
                if (set[n] && !labels[n]) {
                    labels[n] = next;
                    stack.push_back(n);
                }
            }
        }
    }
    return next;
}

BinaryMask largest_component(const BinaryMask& m, Connectivity conn) {
    std::vector<int> labels;
    const int n = label_components(m.values(), m.grid().dims(), conn, labels);
    if (n <= 1) return m;
    std::vector<std::size_t> sizes(n + 1, 0);
    for (int l : labels) ++sizes[l];
    sizes[0] = 0;
    // Ties go to the lowest label.
    const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    std::vector<std::uint8_t> out(labels.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = labels[i] == best;
    return {m.grid(), std::move(out)};
}

namespace {

// Separable cube filter: max (dilate) or min (erode) along each axis.
std::vector<std::uint8_t> cube_filter(const std::vector<std::uint8_t>& in, const Dims& d, int r, bool dilate,
                                      std::uint8_t outside) {
    std::vector<std::uint8_t> cur = in, next(in.size());
    const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(d[0]),
                                            static_cast<std::size_t>(d[0]) * d[1]};
    for (int axis = 0; axis < 3; ++axis) {
        const int n = d[axis];
        std::size_t idx = 0;
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i, ++idx) {
                    const int pos = axis == 0 ? i : axis == 1 ? j : k;
                    std::uint8_t acc = dilate ? 0 : 1;
                    for (int o = -r; o <= r; ++o) {
                        const int q = pos + o;
                        const std::uint8_t v =
                            (q < 0 || q >= n) ? outside
                                              : cur[static_cast<std::size_t>(static_cast<long>(idx) +
                                                                             static_cast<long>(o) * static_cast<long>(stride[axis]))];
                        if (dilate && v) {
                            acc = 1;
                            break;
                        }
                        if (!dilate && !v) {
                            acc = 0;
                            break;
                        }
                    }
                    next[idx] = acc;
                }
        std::swap(cur, next);
    }
    return cur;
}

}  // namespace

BinaryMask dilate(const BinaryMask& m, int radius) {
    return {m.grid(), cube_filter(m.values(), m.grid().dims(), radius, true, 0)};
}

BinaryMask erode(const BinaryMask& m, int radius) {
    return {m.grid(), cube_filter(m.values(), m.grid().dims(), radius, false, 0)};
}

BinaryMask close(const BinaryMask& m, int radius) {
    const auto& d = m.grid().dims();
    const Dims pd{d[0] + 2 * radius, d[1] + 2 * radius, d[2] + 2 * radius};
    std::vector<std::uint8_t> padded(static_cast<std::size_t>(pd[0]) * pd[1] * pd[2], 0);
    const auto pidx = [&](int i, int j, int k) {
        return static_cast<std::size_t>(i) + static_cast<std::size_t>(pd[0]) * (j + static_cast<std::size_t>(pd[1]) * k);
    };
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                padded[pidx(i + radius, j + radius, k + radius)] = m.values()[m.grid().index(i, j, k)];
    const auto dil = cube_filter(padded, pd, radius, true, 0);
    const auto ero = cube_filter(dil, pd, radius, false, 0);
    std::vector<std::uint8_t> out(m.size());
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) out[m.grid().index(i, j, k)] = ero[pidx(i + radius, j + radius, k + radius)];
    return {m.grid(), std::move(out)};
}

BinaryMask fill_holes(const BinaryMask& m) {
    const auto& g = m.grid();
    const auto& d = g.dims();
    std::vector<std::uint8_t> background(m.size());
    for (std::size_t i = 0; i < background.size(); ++i) background[i] = !m[i];
    std::vector<int> labels;
    const int n = label_components(background, d, Connectivity::face6, labels);
    std::vector<std::uint8_t> touches_border(n + 1, 0);
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i) {
                const bool border = i == 0 || j == 0 || k == 0 || i == d[0] - 1 || j == d[1] - 1 || k == d[2] - 1;
                if (border) touches_border[labels[g.index(i, j, k)]] = 1;
            }
    std::vector<std::uint8_t> out(m.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] || (labels[i] > 0 && !touches_border[labels[i]]);
    return {g, std::move(out)};
}

}  // namespace asap
