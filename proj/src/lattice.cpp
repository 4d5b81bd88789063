#include "kqs/lattice.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>

namespace kqs {

namespace {

constexpr double kHermitianTol = 1e-12;

void require_hermitian(const CMatrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("hamiltonian must be square");
  if (m.rows() == 0) throw std::invalid_argument("hamiltonian must have at least one site");
  const double dev = max_abs(m - m.adjoint());
  if (dev > kHermitianTol) {
    throw std::invalid_argument("hamiltonian is not hermitian (max deviation " + std::to_string(dev) + ")");
  }
}

// Fix the phase of an eigenvector: first component above threshold becomes real positive.
void normalize_phase(Eigen::Ref<CVector> v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > 1e-10) {
      v *= std::conj(v[i]) / std::abs(v[i]);
      return;
    }
  }
}

bool lexicographic_less(const CVector& a, const CVector& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::abs(a[i].real() - b[i].real()) > 1e-9) return a[i].real() < b[i].real();
    if (std::abs(a[i].imag() - b[i].imag()) > 1e-9) return a[i].imag() < b[i].imag();
  }
  return false;
}

}  // namespace

HoppingHamiltonian::HoppingHamiltonian(CMatrix matrix, Boundary boundary)
    : matrix_(std::move(matrix)), boundary_(boundary) {
  require_hermitian(matrix_);
}

HoppingHamiltonian build_chain(std::size_t n_sites, double onsite, double hopping, Boundary boundary) {
  if (n_sites == 0) throw std::invalid_argument("build_chain: n_sites must be >= 1");
  const auto n = static_cast<Eigen::Index>(n_sites);
  CMatrix m = CMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) m(i, i) = onsite;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    m(i, i + 1) += 0.5 * hopping;
    m(i + 1, i) += 0.5 * hopping;
  }
  // The wrap-around bond is added on top of the open chain; for N <= 2 it
  // lands on existing entries, which keeps e_k = onsite + hopping cos(2 pi k / N).
  if (boundary == Boundary::periodic) {
    m(n - 1, 0) += 0.5 * hopping;
    m(0, n - 1) += 0.5 * hopping;
  }
  return HoppingHamiltonian(std::move(m), boundary);
}

EigenDecomposition diagonalize_hermitian(const CMatrix& m) {
  require_hermitian(m);
  Eigen::SelfAdjointEigenSolver<CMatrix> solver(m);
  if (solver.info() != Eigen::Success) throw std::runtime_error("diagonalize: eigensolver failed");

  const Eigen::Index n = m.rows();
  CMatrix vectors = solver.eigenvectors();
  for (Eigen::Index k = 0; k < n; ++k) normalize_phase(vectors.col(k));

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const RVector& values = solver.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (std::abs(values[a] - values[b]) > 1e-10) return values[a] < values[b];
    return lexicographic_less(vectors.col(a), vectors.col(b));
  });

  EigenDecomposition out{RVector(n), CMatrix(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    out.energies[k] = values[order[static_cast<std::size_t>(k)]];
    out.transform.col(k) = vectors.col(order[static_cast<std::size_t>(k)]);
  }
  return out;
}

EigenDecomposition diagonalize(const HoppingHamiltonian& h) { return diagonalize_hermitian(h.matrix()); }

FreqGrid::FreqGrid(double omega_min, double omega_max, std::size_t n_points, double eta)
    : omega_min_(omega_min), omega_max_(omega_max), n_points_(n_points), eta_(eta) {
  if (n_points_ < 2) throw std::invalid_argument("FreqGrid: n_points must be >= 2");
  if (!(omega_max_ > omega_min_)) throw std::invalid_argument("FreqGrid: omega_max must exceed omega_min");
  if (!(eta_ > 0.0)) throw std::invalid_argument("FreqGrid: eta must be positive");
  if (eta_ < 2.0 * spacing() * (1.0 - 1e-12)) {
    throw std::invalid_argument("FreqGrid: eta must be at least twice the grid spacing");
  }
}

FreqGrid FreqGrid::with_default_eta(double omega_min, double omega_max, std::size_t n_points) {
  if (n_points < 2) throw std::invalid_argument("FreqGrid: n_points must be >= 2");
  const double h = (omega_max - omega_min) / static_cast<double>(n_points - 1);
  return FreqGrid(omega_min, omega_max, n_points, 4.0 * h);
}

std::vector<double> FreqGrid::points() const {
  std::vector<double> out(n_points_);
  for (std::size_t k = 0; k < n_points_; ++k) out[k] = (*this)[k];
  return out;
}

Complex ideal_retarded_onsite(const EigenDecomposition& eig, std::size_t site, double omega, double eta) {
  Complex sum{0.0, 0.0};
  const auto i = static_cast<Eigen::Index>(site);
  for (Eigen::Index k = 0; k < eig.energies.size(); ++k) {
    sum += std::norm(eig.transform(i, k)) / Complex(omega - eig.energies[k], eta);
  }
  return sum;
}

FreqGreens ideal_greens(const HoppingHamiltonian& h, InverseTemperature beta, const FreqGrid& grid) {
  const EigenDecomposition eig = diagonalize(h);
  const CMatrix& u = eig.transform;
  const Eigen::Index n = u.rows();

  FreqGreens out{grid, {}, {}, {}};
  out.retarded.resize(grid.size());
  out.advanced.resize(grid.size());
  out.keldysh.resize(grid.size());

  CVector resolvent(n);
  for (std::size_t p = 0; p < grid.size(); ++p) {
    const double w = grid[p];
    for (Eigen::Index k = 0; k < n; ++k) resolvent[k] = 1.0 / Complex(w - eig.energies[k], grid.eta());
    CMatrix gr = u * resolvent.asDiagonal() * u.adjoint();
    CMatrix ga = gr.adjoint();
    out.keldysh[p] = (gr - ga) * beta.distribution(w);
    out.retarded[p] = std::move(gr);
    out.advanced[p] = std::move(ga);
  }
  return out;
}

}  // namespace kqs
