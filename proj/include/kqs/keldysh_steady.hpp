#pragma once

// Steady-state (adiabatic contour) self-energies and the frequency-domain
// Dyson equation.
//
// Sign convention used throughout: the retarded self-energy is written as
//   Sigma^+(w) = Delta(w) - i Gamma(w) / 2,
// so that Gamma(w) = -2 Im Sigma^+(w) >= 0 is the rate function (the spectral
// FWHM of an isolated level) and G^+ keeps its poles in the lower half plane.

#include <variant>
#include <vector>

#include "kqs/baths.hpp"
#include "kqs/lattice.hpp"
#include "kqs/types.hpp"

namespace kqs {

/// Self-energy diagonal in the local qubit basis; only the diagonals are stored.
struct SelfEnergy {
  FreqGrid grid;
  std::vector<CVector> retarded;
  std::vector<CVector> advanced;
  std::vector<CVector> keldysh;

  std::size_t dim() const { return retarded.empty() ? 0 : static_cast<std::size_t>(retarded.front().size()); }
  CMatrix retarded_matrix(std::size_t k) const { return retarded[k].asDiagonal(); }
  CMatrix advanced_matrix(std::size_t k) const { return advanced[k].asDiagonal(); }
  CMatrix keldysh_matrix(std::size_t k) const { return keldysh[k].asDiagonal(); }

  static SelfEnergy zero(const FreqGrid& grid, std::size_t n_sites);
};

/// Per-site rate Gamma_ii(w) and energy shift Delta_ii(w), indexed [site][grid point].
struct RateFunction {
  FreqGrid grid;
  std::vector<std::vector<double>> gamma;
  std::vector<std::vector<double>> shift;

  /// Sigma^+_ii(w_k) = Delta - i Gamma / 2.
  Complex retarded(std::size_t site, std::size_t k) const { return {shift[site][k], -0.5 * gamma[site][k]}; }
};

/// Born self-energy of ohmic dephasing baths, built by trapezoidal convolution
/// of the broadened ideal on-site Green's functions with the bath correlators.
/// `beta_sys` sets the initial equilibrium of the simulator entering G0^K.
SelfEnergy dephasing_self_energy(const HoppingHamiltonian& h, const std::vector<OhmicBath>& baths,
                                 InverseTemperature beta_sys, const FreqGrid& grid,
                                 Diagnostics* diag = nullptr);

/// Eigenbasis closed form
///   Gamma_ii(w) = 1/2 sum_k |U_ik|^2 [ S_i(w - e_k) + F(e_k) J_i(w - e_k) ],
/// together with the matching energy shift.
RateFunction dephasing_rate_function(const HoppingHamiltonian& h, const std::vector<OhmicBath>& baths,
                                     InverseTemperature beta_sys, const FreqGrid& grid);

using RelaxationBath = std::variant<TlsBath, WideBandBath>;

/// Embedding self-energy of TLS (or wide-band) relaxation baths. TLS deltas are
/// Lorentzian-smeared with half-width `smearing`; a non-positive value selects
/// the default of two grid spacings.
SelfEnergy tls_embedding_self_energy(const std::vector<RelaxationBath>& baths, const FreqGrid& grid,
                                     double smearing = 0.0);

/// G^{+-} = [(G0^{+-})^{-1} - Sigma^{+-}]^{-1} and
/// G^K = G^+ [ (G0^+)^{-1} G0^K (G0^-)^{-1} + Sigma^K ] G^-.
/// The first bracket term is the finite-eta image of the initial correlations;
/// it vanishes as eta -> 0 and makes Sigma = 0 return G0 exactly.
FreqGreens dyson_solve(const FreqGreens& g0, const SelfEnergy& sigma);

/// A(w) = i [G^+(w) - G^-(w)] for every grid point.
struct SpectralWeight {
  FreqGrid grid;
  std::vector<CMatrix> values;

  std::vector<double> diagonal(std::size_t site) const;
  std::vector<Complex> element(std::size_t i, std::size_t j) const;
};

SpectralWeight spectral_weight(const FreqGreens& g);

RateFunction extract_rates(const SelfEnergy& sigma);

/// Trapezoidal integral of A_ii(w) dw / 2pi.
double spectral_sum(const SpectralWeight& a, std::size_t site);

}  // namespace kqs
