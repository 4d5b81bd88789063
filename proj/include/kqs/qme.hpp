#pragma once

// Master-equation reference engine on the spin (qubit) representation:
// Jordan-Wigner operators, Lindblad and Bloch-Redfield generators, quantum
// regression correlators and spin-side Green's functions.

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Sparse>

#include "kqs/baths.hpp"
#include "kqs/kbe.hpp"
#include "kqs/lattice.hpp"
#include "kqs/types.hpp"

namespace kqs {

/// 2^N x 2^N spin-space operator. Basis index bit (N-1-i) holds qubit i, so
/// qubit 0 is the most significant bit; bit value 1 means "excited/occupied".
using SpinOperator = Eigen::SparseMatrix<Complex>;

inline constexpr std::size_t kMaxJwSites = 12;
inline constexpr std::size_t kMaxMasterSites = 8;
inline constexpr std::size_t kMaxSectorDim = 4096;
inline constexpr std::size_t kMaxTlsSpins = 16;

SpinOperator sigma_minus(std::size_t site, std::size_t n_sites);
SpinOperator sigma_z(std::size_t site, std::size_t n_sites);
SpinOperator number_operator(std::size_t site, std::size_t n_sites);

/// c_i = prod_{j<i} (-sigma^z_j) sigma^-_i.
SpinOperator jw_fermion(std::size_t site, std::size_t n_sites);

/// H_q = sum_ij t_ij c_i^dagger c_j.
SpinOperator spin_hamiltonian(const HoppingHamiltonian& h);

/// Linear map rho -> sum_k X_k rho Y_k, stored in a basis whose states carry a
/// definite particle number. Every generator here conserves the coherence order
/// q = N(ket) - N(bra), so it splits into independent dense sectors.
class Superoperator {
public:
  struct Term {
    CMatrix left;
    CMatrix right;
  };

  std::size_t n_sites() const { return n_sites_; }
  std::size_t dim() const { return static_cast<std::size_t>(basis_.cols()); }
  const CMatrix& basis() const { return basis_; }
  const std::vector<int>& particle_number() const { return number_; }
  const std::vector<Term>& terms() const { return terms_; }

  /// Operators and states move between the computational and working basis.
  CMatrix to_working(const CMatrix& op) const { return basis_.adjoint() * op * basis_; }
  CMatrix to_computational(const CMatrix& op) const { return basis_ * op * basis_.adjoint(); }

  /// L(rho) for rho given in the computational basis.
  CMatrix apply(const CMatrix& rho) const;

  /// Index pairs (a, b) of the working basis with N_a - N_b = q.
  std::vector<std::pair<int, int>> sector_basis(int q) const;
  /// Dense generator restricted to coherence order q.
  CMatrix sector_matrix(int q) const;

protected:
  Superoperator() = default;
  void set_basis(CMatrix basis, std::vector<int> number, std::size_t n_sites);
  void add_term(CMatrix left, CMatrix right) { terms_.push_back({std::move(left), std::move(right)}); }
  /// Secular filter: drop couplings rho_ab <- rho_cd whose Bohr frequencies differ by more than `window`.
  void set_secular(RVector energies, double window) {
    energies_ = std::move(energies);
    secular_window_ = window;
  }

private:
  std::size_t n_sites_ = 0;
  CMatrix basis_;
  std::vector<int> number_;
  std::vector<Term> terms_;
  RVector energies_;
  double secular_window_ = -1.0;
};

/// drho/dt = -i[H, rho] + sum_n Gamma_2*,n / 2 (sz rho sz - rho) + sum_n Gamma_1,n D[sigma^-_n] rho.
class LindbladGenerator : public Superoperator {
public:
  LindbladGenerator(const HoppingHamiltonian& h, std::vector<double> gamma1, std::vector<double> gamma2star);

  const CMatrix& hamiltonian() const { return hamiltonian_; }
  const std::vector<double>& gamma1() const { return gamma1_; }
  const std::vector<double>& gamma2star() const { return gamma2star_; }

private:
  CMatrix hamiltonian_;
  std::vector<double> gamma1_;
  std::vector<double> gamma2star_;
};

/// Noise spectrum seen by qubit n through the coupling n_n X_n. For an ohmic
/// bath this is C(w) = [S(w) + J(w)] / 2 (emission for w > 0); a flat C equal
/// to c reproduces Lindblad dephasing with Gamma_2* = c / 2.
using NoiseSpectrum = std::function<double(double)>;

NoiseSpectrum ohmic_noise_spectrum(const OhmicBath& bath);

struct RedfieldOptions {
  bool secular = false;
  double secular_window = 1e-9;
};

/// Redfield tensor in the eigenbasis of the spin Hamiltonian,
///   drho/dt = -i[H, rho] - sum_n [A_n, Lambda_n rho - rho Lambda_n^dagger],
///   (Lambda_n)_ab = (A_n)_ab C_n(E_b - E_a) / 2,  A_n = sigma^+_n sigma^-_n.
/// The principal-value (Lamb shift) part of the one-sided bath integral is omitted.
class BlochRedfieldGenerator : public Superoperator {
public:
  BlochRedfieldGenerator(const HoppingHamiltonian& h, const std::vector<NoiseSpectrum>& spectra,
                         RedfieldOptions options = {});

  const RVector& energies() const { return energies_; }

private:
  RVector energies_;
};

BlochRedfieldGenerator bloch_redfield_generator(const HoppingHamiltonian& h, const std::vector<OhmicBath>& baths,
                                                RedfieldOptions options = {});

/// Rejects anything that is not a unit-trace positive semidefinite hermitian matrix.
void validate_density_matrix(const CMatrix& rho, double tol = 1e-10);

/// rho(t) = exp(L t) rho0, exponentiating each coherence-order sector.
CMatrix lindblad_evolve(const Superoperator& gen, const CMatrix& rho0, double t);

/// rho at t = 0, dt, ..., n_steps * dt with one propagator per sector reused every step.
std::vector<CMatrix> lindblad_trajectory(const Superoperator& gen, const CMatrix& rho0, double dt,
                                         std::size_t n_steps);

/// Qubit occupations tr(n_i rho) along a trajectory.
Occupations spin_occupations(const std::vector<CMatrix>& rhos, double dt);

/// exp(-beta H_q) / Z in the computational basis.
CMatrix thermal_state(const HoppingHamiltonian& h, InverseTemperature beta);

/// Steady state by evolving `rho0` for `warmup_time`; warns when |L rho| stays above `tol`.
CMatrix steady_state(const Superoperator& gen, const CMatrix& rho0, double warmup_time, Diagnostics* diag = nullptr,
                     double tol = 1e-8);

/// Verification utility: solves L rho = 0, tr rho = 1 in the number-diagonal sector.
CMatrix steady_state_nullspace(const Superoperator& gen);

struct RegressionResult {
  std::vector<double> tau;
  std::vector<Complex> forward;   // <A(t+tau) B(t)> = tr{ A e^{L tau} [B rho] }
  std::vector<Complex> backward;  // <A(t) B(t+tau)> = tr{ B e^{L tau} [rho A] }
};

RegressionResult regression_correlator(const Superoperator& gen, const CMatrix& rho, const CMatrix& a,
                                       const CMatrix& b, const std::vector<double>& tau_grid);

/// Spin-side Green's functions of the pair (n, n') in the stationary state.
struct QmeGreens {
  FreqGrid grid;
  std::size_t site_n = 0;
  std::size_t site_m = 0;
  std::vector<Complex> retarded;  // G^+_{nn'}(w)
  std::vector<Complex> advanced;  // G^-_{nn'}(w) = conj G^+_{n'n}(w)
  std::vector<Complex> keldysh;   // G^K_{nn'}(w)
  std::vector<Complex> spectral;  // A_{nn'}(w) = i (G^+ - G^-)
  double steady_residual = 0.0;
};

struct QmeGreensOptions {
  double warmup_time = 0.0;      // must be >= 10 / min(positive rate) when rates are known
  double min_rate = 0.0;         // smallest positive rate, for the warmup check; 0 skips it
  const CMatrix* initial_state = nullptr;  // default: vacuum
};

/// G^>(tau) = -i<c_n(tau) c_n'^dagger>, G^<(tau) = i<c_n'^dagger c_n(tau)> by regression;
/// the one-sided transform uses the damping exp(-eta tau) with the grid's eta,
/// evaluated exactly as a resolvent on the q = +1 sector.
QmeGreens qme_greens(const Superoperator& gen, std::size_t site_n, std::size_t site_m, const FreqGrid& grid,
                     QmeGreensOptions options = {}, Diagnostics* diag = nullptr);

/// Single-excitation dynamics of qubits plus their TLS, n_i(t) at t = k dt.
Occupations exact_tls_evolve(const HoppingHamiltonian& h, const std::vector<TlsBath>& baths, const InitialState& ini,
                             double dt, std::size_t n_steps);

}  // namespace kqs
