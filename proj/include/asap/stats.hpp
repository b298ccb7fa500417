#pragma once

#include <span>
#include <vector>

namespace asap {

/// Linear-interpolation percentile (q in [0,100]) of `values`; the input is
/// copied and partially sorted. Returns 0 for an empty input.
double percentile(std::span<const double> values, double q);

/// 99th percentile of |v| over the finite, non-zero voxels. Returns 0 when
/// there are none.
double robust_max(std::span<const double> values);

/// Median with the even-count rule (mean of the two middle values).
double median(std::vector<double> values);

}  // namespace asap
