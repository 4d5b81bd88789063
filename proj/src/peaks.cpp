#include "kqs/peaks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace kqs {

namespace {

std::vector<double> moving_average(const std::vector<double>& y, std::size_t window) {
  if (window <= 1) return y;
  const std::size_t half = window / 2;
  std::vector<double> out(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    const std::size_t lo = k >= half ? k - half : 0;
    const std::size_t hi = std::min(y.size() - 1, k + half);
    double sum = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) sum += y[j];
    out[k] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

// Height above the higher of the two bases reached before climbing above the peak.
double prominence(const std::vector<double>& y, std::size_t k) {
  double left_min = y[k];
  for (std::size_t j = k; j-- > 0;) {
    if (y[j] > y[k]) break;
    left_min = std::min(left_min, y[j]);
  }
  double right_min = y[k];
  for (std::size_t j = k + 1; j < y.size(); ++j) {
    if (y[j] > y[k]) break;
    right_min = std::min(right_min, y[j]);
  }
  return y[k] - std::max(left_min, right_min);
}

double half_width_crossing(const std::vector<double>& x, const std::vector<double>& y, std::size_t k, int dir) {
  if (!(y[k] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double half = 0.5 * y[k];
  auto j = static_cast<long>(k);
  const auto last = static_cast<long>(y.size()) - 1;
  while (true) {
    const long next = j + dir;
    if (next < 0 || next > last) return std::numeric_limits<double>::quiet_NaN();
    const auto uj = static_cast<std::size_t>(j);
    const auto un = static_cast<std::size_t>(next);
    if (y[un] > y[uj]) return std::numeric_limits<double>::quiet_NaN();  // rose again before halving
    if (y[un] <= half) {
      const double t = (y[uj] - half) / (y[uj] - y[un]);
      return x[uj] + t * (x[un] - x[uj]);
    }
    j = next;
  }
}

}  // namespace

std::vector<Peak> find_peaks(const std::vector<double>& x, const std::vector<double>& y, PeakOptions options) {
  if (x.size() != y.size()) throw std::invalid_argument("find_peaks: x and y differ in length");
  std::vector<Peak> peaks;
  if (y.size() < 3) return peaks;

  const std::vector<double> smooth = moving_average(y, options.window);
  const double global_max = *std::max_element(smooth.begin(), smooth.end());
  if (!(global_max > 0.0)) return peaks;
  const double threshold = options.min_prominence * global_max;

  for (std::size_t start = 1; start + 1 < smooth.size(); ++start) {
    if (!(smooth[start] > smooth[start - 1])) continue;
    // Flat tops (peak exactly between two grid points) count once, at their middle.
    std::size_t end = start;
    while (end + 1 < smooth.size() && smooth[end + 1] == smooth[start]) ++end;
    if (end + 1 >= smooth.size() || !(smooth[end + 1] < smooth[start])) continue;
    const std::size_t k = start + (end - start) / 2;
    if (prominence(smooth, k) < threshold) continue;

    // The raw maximum may sit one point away from the smoothed one.
    std::size_t top = k;
    if (y[k - 1] > y[top]) top = k - 1;
    if (y[k + 1] > y[top]) top = k + 1;

    double position = x[top];
    if (top > 0 && top + 1 < y.size()) {
      const double denom = y[top - 1] - 2.0 * y[top] + y[top + 1];
      if (denom < 0.0) {
        const double offset = 0.5 * (y[top - 1] - y[top + 1]) / denom;
        position += std::clamp(offset, -0.5, 0.5) * (x[top + 1] - x[top]);
      }
    }
    const double left = half_width_crossing(x, y, top, -1);
    const double right = half_width_crossing(x, y, top, +1);
    peaks.push_back({top, position, y[top], right - left});
  }
  return peaks;
}

}  // namespace kqs
