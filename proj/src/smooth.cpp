#include "asap/smooth.hpp"

#include "asap/error.hpp"

#include <cmath>

namespace asap {

double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const int r = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int o = -r; o <= r; ++o) {
        k[o + r] = std::exp(-0.5 * (o * o) / (sigma * sigma));
        sum += k[o + r];
    }
    for (auto& v : k) v /= sum;
    return k;
}

namespace {

void convolve_axis(std::vector<double>& data, const Dims& d, int axis, const std::vector<double>& kernel) {
    if (kernel.size() == 1) return;
    const int r = static_cast<int>(kernel.size() / 2);
    const int n = d[axis];
    const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(d[0]), static_cast<std::size_t>(d[0]) * d[1]};
    const int a1 = axis == 0 ? 1 : 0;
    const int a2 = axis == 2 ? 1 : 2;
    std::vector<double> line(n), out(n);
    for (int q = 0; q < d[a2]; ++q)
        for (int p = 0; p < d[a1]; ++p) {
            const std::size_t base = p * stride[a1] + q * stride[a2];
            for (int t = 0; t < n; ++t) line[t] = data[base + t * stride[axis]];
            for (int t = 0; t < n; ++t) {
                double acc = 0.0;
                const int lo = std::max(-r, -t), hi = std::min(r, n - 1 - t);
                for (int o = lo; o <= hi; ++o) acc += kernel[o + r] * line[t + o];
                out[t] = acc;
            }
            for (int t = 0; t < n; ++t) data[base + t * stride[axis]] = out[t];
        }
}

}  // namespace

Volume3D smooth_gaussian(const Volume3D& vol, const std::array<double, 3>& fwhm_mm, const std::array<int, 3>& axis_order) {
    for (double f : fwhm_mm)
        if (!(f >= 0.0) || !std::isfinite(f)) throw ParameterError("smoothing FWHM must be finite and non-negative");
    std::vector<double> data(vol.data().begin(), vol.data().end());
    for (int axis : axis_order) {
        const double sigma = fwhm_to_sigma(fwhm_mm[axis]) / vol.spacing()[axis];
        convolve_axis(data, vol.dims(), axis, gaussian_kernel(sigma));
    }
    return vol.with_data(std::move(data));
}

Volume3D smooth_gaussian(const Volume3D& vol, const std::array<double, 3>& fwhm_mm) {
    return smooth_gaussian(vol, fwhm_mm, {0, 1, 2});
}

}  // namespace asap
