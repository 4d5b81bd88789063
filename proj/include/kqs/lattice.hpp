#pragma once

// Non-interacting fermionic system: hopping Hamiltonians, their eigenbasis,
// and the ideal (noise-free) Keldysh Green's functions on a frequency grid.

#include <cstddef>
#include <vector>

#include "kqs/types.hpp"

namespace kqs {

enum class Boundary { periodic, open };

/// Hermitian single-particle matrix t_ij of a fermionic lattice.
class HoppingHamiltonian {
public:
  HoppingHamiltonian(CMatrix matrix, Boundary boundary);

  std::size_t n_sites() const { return static_cast<std::size_t>(matrix_.rows()); }
  const CMatrix& matrix() const { return matrix_; }
  Boundary boundary() const { return boundary_; }

private:
  CMatrix matrix_;
  Boundary boundary_;
};

/// Nearest-neighbour chain with on-site energy `onsite` and hopping amplitude
/// `hopping`; neighbouring sites couple with hopping/2.
HoppingHamiltonian build_chain(std::size_t n_sites, double onsite, double hopping, Boundary boundary);

struct EigenDecomposition {
  RVector energies;  // ascending
  CMatrix transform; // columns are eigenvectors: H = U diag(energies) U^dagger
};

EigenDecomposition diagonalize(const HoppingHamiltonian& h);
EigenDecomposition diagonalize_hermitian(const CMatrix& m);

/// Uniform frequency grid. `eta` replaces the infinitesimal +-i0.
class FreqGrid {
public:
  FreqGrid(double omega_min, double omega_max, std::size_t n_points, double eta);
  /// Grid with the default broadening eta = 4 * spacing.
  static FreqGrid with_default_eta(double omega_min, double omega_max, std::size_t n_points);

  double omega_min() const { return omega_min_; }
  double omega_max() const { return omega_max_; }
  std::size_t size() const { return n_points_; }
  double eta() const { return eta_; }
  double spacing() const { return (omega_max_ - omega_min_) / static_cast<double>(n_points_ - 1); }
  double operator[](std::size_t k) const { return omega_min_ + spacing() * static_cast<double>(k); }
  std::vector<double> points() const;

  bool operator==(const FreqGrid& other) const = default;

private:
  double omega_min_;
  double omega_max_;
  std::size_t n_points_;
  double eta_;
};

/// Retarded, advanced and Keldysh components sampled on a frequency grid.
struct FreqGreens {
  FreqGrid grid;
  std::vector<CMatrix> retarded;
  std::vector<CMatrix> advanced;
  std::vector<CMatrix> keldysh;

  std::size_t dim() const { return retarded.empty() ? 0 : static_cast<std::size_t>(retarded.front().rows()); }
};

/// G0^{+-}(w) = [(w +- i eta) - H]^{-1},  G0^K = (G0^+ - G0^-) (1 - 2 f(w)).
FreqGreens ideal_greens(const HoppingHamiltonian& h, InverseTemperature beta, const FreqGrid& grid);

/// Diagonal element G0_ii^{+}(w) through the eigenbasis sum  sum_k |U_ik|^2 / (w - e_k + i eta).
Complex ideal_retarded_onsite(const EigenDecomposition& eig, std::size_t site, double omega, double eta);

}  // namespace kqs
