#pragma once

// Noise environments of single qubits: ohmic bosonic baths (dephasing),
// discrete two-level-system baths (relaxation) and the wide-band limit.

#include <cstdint>
#include <utility>
#include <vector>

#include "kqs/lattice.hpp"
#include "kqs/types.hpp"

namespace kqs {

/// Ohmic bath with exponential cutoff, J(w) = alpha * w * exp(-|w| / cutoff).
class OhmicBath {
public:
  OhmicBath(double alpha, double cutoff, double temperature);

  double alpha() const { return alpha_; }
  double cutoff() const { return cutoff_; }
  double temperature() const { return temperature_; }
  InverseTemperature beta() const { return InverseTemperature::from_temperature(temperature_); }

  /// S(0) = 2 alpha T.
  double zero_frequency_noise() const { return 2.0 * alpha_ * temperature_; }

  /// Closed-form D^+(w) = int dv/2pi J(v) / (w - v + i0).
  Complex retarded_correlator(double omega) const;

private:
  double alpha_;
  double cutoff_;
  double temperature_;
};

double spectral_function(const OhmicBath& bath, double omega);

/// S(w) = J(w) coth(beta w / 2), with the analytic limit at w = 0.
double power_spectral_density(const OhmicBath& bath, double omega);

/// Bath correlators D^{+,-,K}(w) on the grid as 1x1 matrices. D^+ is obtained
/// from a grid Hilbert transform of J; values in the outer 5% of the grid are
/// affected by truncation.
FreqGreens boson_correlators(const OhmicBath& bath, const FreqGrid& grid, Diagnostics* diag = nullptr);

/// Principal value  P int dv f(v) / (w - v)  of the piecewise-linear interpolant
/// of `values` on `grid`, evaluated at an arbitrary `omega`.
double principal_value_transform(const FreqGrid& grid, const std::vector<double>& values, double omega);

struct TlsLevel {
  double energy;
  double coupling;
};

/// Two-level systems coupled to one qubit. The low-temperature reduction
/// requires T_B <= min(energy) / 10.
class TlsBath {
public:
  TlsBath(std::vector<TlsLevel> levels, double temperature);

  const std::vector<TlsLevel>& levels() const { return levels_; }
  double temperature() const { return temperature_; }
  double total_weight() const;  // sum |g_s|^2

private:
  std::vector<TlsLevel> levels_;
  double temperature_;
};

struct WideBandBath {
  explicit WideBandBath(double rate_) : rate(rate_) {
    if (rate < 0.0) throw std::invalid_argument("WideBandBath: rate must be nonnegative");
  }
  double rate;
};

/// Lorentzian-smeared J(w) = 2 pi sum_s |g_s|^2 delta(w - e_s).
double tls_spectral_density(const TlsBath& bath, double omega, double smearing);

/// Exact band average (1/W) int_band J(w) dw of the smeared TLS spectral density.
double tls_band_average(const TlsBath& bath, std::pair<double, double> band, double smearing);

/// Draws `n_tls` levels uniformly over `band` (one level per equal sub-interval,
/// jittered by the seeded generator) with equal couplings chosen so that the
/// smeared J averaged over the band equals `target_rate`.
TlsBath sample_tls_bath(double target_rate, std::size_t n_tls, std::pair<double, double> band,
                        std::uint64_t seed, double smearing, double temperature = 0.0);

}  // namespace kqs
