#include "asap/stats.hpp"

#include <algorithm>
#include <cmath>

namespace asap {

double percentile(std::span<const double> values, double q) {
    if (values.empty()) return 0.0;
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double t = pos - static_cast<double>(lo);
    return v[lo] + (v[hi] - v[lo]) * t;
}

double robust_max(std::span<const double> values) {
    std::vector<double> mags;
    mags.reserve(values.size());
    for (double x : values)
        if (std::isfinite(x) && x != 0.0) mags.push_back(std::abs(x));
    return percentile(mags, 99.0);
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    const std::size_t n = values.size();
    auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    const double upper = *mid;
    if (n % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

}  // namespace asap
