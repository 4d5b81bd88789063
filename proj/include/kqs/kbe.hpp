#pragma once

// Kadanoff-Baym equations on the real-time two-branch contour for a
// non-interacting initial state, plus the closed-form Markov solution.

#include <cstddef>
#include <variant>
#include <vector>

#include "kqs/baths.hpp"
#include "kqs/lattice.hpp"
#include "kqs/types.hpp"

namespace kqs {

/// rho(0) ~ exp(-beta H_ini).
class InitialState {
public:
  InitialState(CMatrix ini_matrix, InverseTemperature beta);

  /// Site `excited` occupied, every other site empty (beta -> infinity).
  static InitialState single_excitation(std::size_t n_sites, std::size_t excited);
  /// All sites empty.
  static InitialState vacuum(std::size_t n_sites);

  const CMatrix& ini_matrix() const { return ini_; }
  InverseTemperature beta() const { return beta_; }
  std::size_t n_sites() const { return static_cast<std::size_t>(ini_.rows()); }

  /// One-particle density matrix f(H_ini).
  CMatrix occupation() const;
  /// G^K(0,0) = -i [1 - 2 f(H_ini)].
  CMatrix initial_keldysh() const;

private:
  CMatrix ini_;
  InverseTemperature beta_;
};

/// Time-local self-energy Sigma^{+-} = -+ i Gamma/2 delta(t-t'), Sigma^K = -i Gamma delta(t-t').
struct MarkovSelfEnergy {
  RVector rates;
};

MarkovSelfEnergy markov_self_energy(const std::vector<double>& rates);

/// Memory kernel of free TLS in their ground state:
///   Sigma^+_ii(t,t') = -i theta(t-t') sum_s |g_s|^2 exp(-i e_s (t-t')),
///   Sigma^K = Sigma^+ - Sigma^-.
struct TlsMemoryKernel {
  std::vector<std::vector<TlsLevel>> levels;  // per site

  Complex retarded(std::size_t site, double tau) const;
  Complex keldysh(std::size_t site, double tau) const;
};

TlsMemoryKernel tls_memory_self_energy(const std::vector<TlsBath>& baths);

using KbeSelfEnergy = std::variant<MarkovSelfEnergy, TlsMemoryKernel>;

/// Lower-triangular two-time functions saved every `stride` steps, plus the
/// equal-time Keldysh function at every step.
class TwoTimeGreens {
public:
  TwoTimeGreens(double dt, std::size_t stride, std::size_t n_steps, std::size_t n_sites);

  double dt() const { return dt_; }
  std::size_t stride() const { return stride_; }
  std::size_t n_steps() const { return n_steps_; }
  std::size_t n_saved() const { return retarded_.size(); }
  double saved_time(std::size_t a) const { return static_cast<double>(a * stride_) * dt_; }

  /// Saved-grid accessors; upper-triangle values come from the conjugation identities.
  CMatrix retarded(std::size_t a, std::size_t b) const;
  CMatrix advanced(std::size_t a, std::size_t b) const;
  CMatrix keldysh(std::size_t a, std::size_t b) const;

  const CMatrix& equal_time_keldysh(std::size_t step) const { return diagonal_[step]; }

  // Filled by the integrator.
  void save_row(std::vector<CMatrix> retarded_row, std::vector<CMatrix> keldysh_row);
  void push_diagonal(CMatrix k) { diagonal_.push_back(std::move(k)); }

private:
  double dt_;
  std::size_t stride_;
  std::size_t n_steps_;
  std::size_t n_sites_;
  std::vector<std::vector<CMatrix>> retarded_;
  std::vector<std::vector<CMatrix>> keldysh_;
  std::vector<CMatrix> diagonal_;
};

struct KbeOptions {
  std::size_t save_stride = 1;
  double stability_limit = 0.05;  // dt * max(|H|, rates, TLS energies) must not exceed this
};

/// Largest dt accepted by kbe_integrate for this problem.
double kbe_step_limit(const HoppingHamiltonian& h, const KbeSelfEnergy& sigma, KbeOptions options = {});

/// Heun predictor-corrector on every t' ray with trapezoidal memory integrals.
/// TLS kernels are sums of exponentials, so the memory trapezoid sums are
/// accumulated recursively and only the current time row is kept in memory.
TwoTimeGreens kbe_integrate(const HoppingHamiltonian& h, const KbeSelfEnergy& sigma, const InitialState& ini,
                            double t_max, double dt, KbeOptions options = {});

/// Closed form for time-local rates with [H, Gamma] = 0, valid for t >= t' >= 0.
CMatrix analytic_gk(const HoppingHamiltonian& h, const std::vector<double>& rates, const InitialState& ini, double t,
                    double t_prime);

struct Occupations {
  std::vector<double> times;
  std::vector<std::vector<double>> per_site;  // [site][step]
  std::vector<double> total;
};

/// n_i(t) = (1 + Im G^K_ii(t,t)) / 2.
Occupations occupations(const TwoTimeGreens& g);

/// Equal-time kinetic function from the spectral weight of the Markov problem,
///   G^K(t,t) = -i { Q - E(t) [Q - F(H_ini)] E(t)^dagger },  Q = int dw/2pi A(w) F_tls(w),
/// with E(t) = exp(-i H t - Gamma t / 2) and Q evaluated by quadrature on `grid`.
CMatrix equal_time_kinetic(const HoppingHamiltonian& h, const std::vector<double>& rates, const InitialState& ini,
                           double t, const FreqGrid& grid, InverseTemperature beta_tls);

}  // namespace kqs
