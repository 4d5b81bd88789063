#pragma once

#include <cstddef>
#include <vector>

namespace kqs {

struct Peak {
  std::size_t index;
  double position;  // parabolic refinement around the grid maximum
  double height;
  double fwhm;      // NaN when the half-maximum crossing is hidden by a neighbour or height <= 0
};

struct PeakOptions {
  double min_prominence = 0.01;  // fraction of the global maximum
  std::size_t window = 3;        // moving-average width applied before the search
};

/// Strict local maxima of the smoothed curve whose prominence exceeds
/// `min_prominence * max(y)`. Widths are measured on the raw curve.
std::vector<Peak> find_peaks(const std::vector<double>& x, const std::vector<double>& y, PeakOptions options = {});

}  // namespace kqs
