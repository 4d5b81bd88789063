#include "kqs/baths.hpp"

#include <algorithm>
#include <random>
#include <string>

namespace kqs {

namespace {

// e^a E1(a) + e^-a Ei(a) for a > 0, the principal-value transform of a
// symmetric exponential in units of its decay length.
double symmetric_exponential_pv(double a) {
  if (a == 0.0) return 0.0;
  if (a > 40.0) {
    const double inv2 = 1.0 / (a * a);
    return 2.0 / a * (1.0 + inv2 * (2.0 + inv2 * (24.0 + inv2 * (720.0 + inv2 * 40320.0))));
  }
  const double e1 = -std::expint(-a);
  return std::exp(a) * e1 + std::exp(-a) * std::expint(a);
}

}  // namespace

OhmicBath::OhmicBath(double alpha, double cutoff, double temperature)
    : alpha_(alpha), cutoff_(cutoff), temperature_(temperature) {
  if (alpha_ < 0.0) throw std::invalid_argument("OhmicBath: alpha must be nonnegative");
  if (!(cutoff_ > 0.0)) throw std::invalid_argument("OhmicBath: cutoff must be positive");
  if (temperature_ < 0.0) throw std::invalid_argument("OhmicBath: temperature must be nonnegative");
}

double spectral_function(const OhmicBath& bath, double omega) {
  return bath.alpha() * omega * std::exp(-std::abs(omega) / bath.cutoff());
}

double power_spectral_density(const OhmicBath& bath, double omega) {
  const double t = bath.temperature();
  if (t == 0.0) return std::abs(spectral_function(bath, omega));
  const double x = 0.5 * omega / t;
  if (std::abs(x) < 1e-6) {
    // w coth(w / 2T) = 2T (1 + x^2 / 3 + ...)
    return 2.0 * bath.alpha() * t * (1.0 + x * x / 3.0) * std::exp(-std::abs(omega) / bath.cutoff());
  }
  return spectral_function(bath, omega) / std::tanh(x);
}

Complex OhmicBath::retarded_correlator(double omega) const {
  const double a = std::abs(omega) / cutoff_;
  const double k = (omega < 0.0 ? -1.0 : 1.0) * symmetric_exponential_pv(a);
  const double pv = alpha_ * (-2.0 * cutoff_ + omega * k);
  return {pv / (2.0 * kPi), -0.5 * spectral_function(*this, omega)};
}

double principal_value_transform(const FreqGrid& grid, const std::vector<double>& values, double omega) {
  if (values.size() != grid.size()) throw std::invalid_argument("principal_value_transform: size mismatch");
  const double h = grid.spacing();
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    const double a = grid[k];
    const double b = grid[k + 1];
    const double slope = (values[k + 1] - values[k]) / h;
    const double at_omega = values[k] + slope * (omega - a);
    const double da = std::abs(omega - a);
    const double db = std::abs(omega - b);
    // Logarithms of a zero distance cancel between the two segments sharing
    // the node, both carrying the same interpolated value.
    const double log_a = da > 0.0 ? std::log(da) : 0.0;
    const double log_b = db > 0.0 ? std::log(db) : 0.0;
    total += at_omega * (log_a - log_b) - slope * h;
  }
  return total;
}

FreqGreens boson_correlators(const OhmicBath& bath, const FreqGrid& grid, Diagnostics* diag) {
  const double reach = 5.0 * bath.cutoff();
  if (grid.omega_max() < reach || grid.omega_min() > -reach) {
    warn_to(diag, "boson_correlators: grid does not span +-5 cutoff; Hilbert transform is truncated");
  }
  std::vector<double> j(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) j[k] = spectral_function(bath, grid[k]);

  FreqGreens out{grid, {}, {}, {}};
  out.retarded.reserve(grid.size());
  out.advanced.reserve(grid.size());
  out.keldysh.reserve(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double w = grid[k];
    const double re = bath.alpha() == 0.0 ? 0.0 : principal_value_transform(grid, j, w) / (2.0 * kPi);
    const Complex dr{re, -0.5 * j[k]};
    out.retarded.push_back(CMatrix::Constant(1, 1, dr));
    out.advanced.push_back(CMatrix::Constant(1, 1, std::conj(dr)));
    out.keldysh.push_back(CMatrix::Constant(1, 1, Complex(0.0, -power_spectral_density(bath, w))));
  }
  return out;
}

TlsBath::TlsBath(std::vector<TlsLevel> levels, double temperature)
    : levels_(std::move(levels)), temperature_(temperature) {
  if (temperature_ < 0.0) throw std::invalid_argument("TlsBath: temperature must be nonnegative");
  for (const auto& level : levels_) {
    if (!(level.energy > 0.0)) throw std::invalid_argument("TlsBath: level energies must be positive");
    if (temperature_ > level.energy / 10.0) {
      throw std::invalid_argument("TlsBath: temperature " + std::to_string(temperature_) +
                                  " violates T_B <= energy/10 for level at " + std::to_string(level.energy));
    }
  }
}

double TlsBath::total_weight() const {
  double sum = 0.0;
  for (const auto& level : levels_) sum += level.coupling * level.coupling;
  return sum;
}

double tls_spectral_density(const TlsBath& bath, double omega, double smearing) {
  if (!(smearing > 0.0)) throw std::invalid_argument("tls_spectral_density: smearing must be positive");
  double sum = 0.0;
  for (const auto& level : bath.levels()) {
    const double d = omega - level.energy;
    sum += 2.0 * level.coupling * level.coupling * smearing / (d * d + smearing * smearing);
  }
  return sum;
}

double tls_band_average(const TlsBath& bath, std::pair<double, double> band, double smearing) {
  const auto [lo, hi] = band;
  const double width = hi - lo;
  if (width <= 0.0) return tls_spectral_density(bath, lo, smearing);
  double sum = 0.0;
  for (const auto& level : bath.levels()) {
    const double g2 = level.coupling * level.coupling;
    sum += 2.0 * g2 * (std::atan((hi - level.energy) / smearing) - std::atan((lo - level.energy) / smearing));
  }
  return sum / width;
}

TlsBath sample_tls_bath(double target_rate, std::size_t n_tls, std::pair<double, double> band,
                        std::uint64_t seed, double smearing, double temperature) {
  if (n_tls == 0) throw std::invalid_argument("sample_tls_bath: n_tls must be >= 1");
  if (band.second < band.first) throw std::invalid_argument("sample_tls_bath: empty band");
  if (!(smearing > 0.0)) throw std::invalid_argument("sample_tls_bath: smearing must be positive");
  if (target_rate < 0.0) throw std::invalid_argument("sample_tls_bath: target rate must be nonnegative");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double width = band.second - band.first;
  std::vector<TlsLevel> levels(n_tls);
  for (std::size_t s = 0; s < n_tls; ++s) {
    const double u = unit(rng);
    levels[s] = {band.first + width * (static_cast<double>(s) + u) / static_cast<double>(n_tls), 1.0};
  }
  const TlsBath unit_bath(levels, 0.0);
  const double g = std::sqrt(target_rate / tls_band_average(unit_bath, band, smearing));
  for (auto& level : levels) level.coupling = g;
  return TlsBath(std::move(levels), temperature);
}

}  // namespace kqs
