#include <doctest.h>

#include <cmath>

#include "kqs/keldysh_steady.hpp"
#include "kqs/peaks.hpp"

using namespace kqs;

namespace {

std::vector<double> lorentzian(const std::vector<double>& x, double centre, double fwhm) {
  std::vector<double> y;
  const double hw = 0.5 * fwhm;
  for (double v : x) y.push_back(hw * hw / ((v - centre) * (v - centre) + hw * hw));
  return y;
}

}  // namespace

TEST_CASE("single Lorentzian") {
  const FreqGrid grid(-3.0, 3.0, 1201, 0.02);
  const auto x = grid.points();
  const auto peaks = find_peaks(x, lorentzian(x, 0.3, 0.2));
  REQUIRE(peaks.size() == 1);
  CHECK(std::abs(peaks[0].position - 0.3) <= grid.spacing());
  CHECK(std::abs(peaks[0].fwhm - 0.2) <= grid.spacing());
  CHECK(peaks[0].height == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("two peaks, shoulder suppression and flat tops") {
  const FreqGrid grid(-3.0, 3.0, 601, 0.02);
  const auto x = grid.points();
  auto y = lorentzian(x, -1.0, 0.1);
  const auto y2 = lorentzian(x, 1.0, 0.3);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += 0.5 * y2[k];
  const auto peaks = find_peaks(x, y);
  REQUIRE(peaks.size() == 2);
  CHECK(peaks[0].position < peaks[1].position);

  // A ripple below the prominence threshold is not a peak.
  auto rippled = lorentzian(x, 0.0, 0.5);
  rippled[500] += 0.001;
  CHECK(find_peaks(x, rippled).size() == 1);

  // Plateau exactly between grid points counts once.
  std::vector<double> plateau(x.size(), 0.0);
  plateau[300] = plateau[301] = 1.0;
  plateau[299] = plateau[302] = 0.4;
  const auto p = find_peaks(x, plateau, {0.01, 1});
  CHECK(p.size() == 1);

  // A local maximum below zero has no half-maximum width.
  auto dip = lorentzian(x, -1.5, 0.2);
  for (std::size_t k = 0; k < x.size(); ++k) dip[k] += -0.6 * std::exp(-4.0 * x[k] * x[k]) + 0.3 * std::exp(-100.0 * x[k] * x[k]);
  const auto below = find_peaks(x, dip, {0.01, 1});
  bool saw_negative = false;
  for (const auto& q : below)
    if (q.height <= 0.0) {
      saw_negative = true;
      CHECK(std::isnan(q.fwhm));
    }
  CHECK(saw_negative);

  CHECK(find_peaks({0.0, 1.0}, {0.0, 1.0}).empty());
  CHECK_THROWS_AS(find_peaks({0.0, 1.0}, {0.0}), std::invalid_argument);
}

TEST_CASE("ideal chain peak count does not exceed the number of levels") {
  const std::size_t n = 20;
  const auto h = build_chain(n, 0.0, 1.0, Boundary::periodic);
  const auto grid = FreqGrid::with_default_eta(-1.5, 1.5, 3001);
  const auto a = spectral_weight(ideal_greens(h, InverseTemperature::infinite(), grid));
  const auto peaks = find_peaks(grid.points(), a.diagonal(0));
  CHECK(peaks.size() >= 2);
  CHECK(peaks.size() <= n);
}
