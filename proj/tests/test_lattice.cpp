#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kqs/lattice.hpp"

using namespace kqs;

namespace {

// Independent oracle: Jacobi rotations on the real symmetric embedding [[Re, -Im], [Im, Re]],
// whose spectrum is that of the hermitian matrix with every eigenvalue doubled.
std::vector<double> jacobi_eigenvalues(const CMatrix& h) {
  const auto n = h.rows();
  Eigen::MatrixXd a(2 * n, 2 * n);
  a << h.real(), -h.imag(), h.imag(), h.real();
  const auto m = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < m; ++p)
      for (Eigen::Index q = p + 1; q < m; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-26) break;
    for (Eigen::Index p = 0; p < m; ++p)
      for (Eigen::Index q = p + 1; q < m; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = 0.5 * (a(q, q) - a(p, p)) / a(p, q);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < m; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < m; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev;
  for (Eigen::Index k = 0; k < m; ++k) ev.push_back(a(k, k));
  std::sort(ev.begin(), ev.end());
  std::vector<double> out;
  for (std::size_t k = 0; k < ev.size(); k += 2) out.push_back(ev[k]);
  return out;
}

CMatrix random_hermitian(Eigen::Index n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  CMatrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = Complex(d(rng), d(rng));
  return 0.5 * (m + m.adjoint());
}

}  // namespace

TEST_CASE("chain construction") {
  SUBCASE("single site") {
    const auto h = build_chain(1, 0.7, 1.0, Boundary::open);
    CHECK(h.matrix()(0, 0).real() == doctest::Approx(0.7));
  }
  SUBCASE("open chain has cosine band") {
    const std::size_t n = 7;
    const auto eig = diagonalize(build_chain(n, 0.3, 1.0, Boundary::open));
    std::vector<double> expected;
    for (std::size_t k = 1; k <= n; ++k) expected.push_back(0.3 + std::cos(kPi * k / (n + 1.0)));
    std::sort(expected.begin(), expected.end());
    for (std::size_t k = 0; k < n; ++k) CHECK(eig.energies(static_cast<Eigen::Index>(k)) == doctest::Approx(expected[k]).epsilon(1e-12));
  }
  SUBCASE("periodic chain, including N <= 2") {
    for (std::size_t n : {1u, 2u, 3u, 6u, 20u}) {
      const auto eig = diagonalize(build_chain(n, -0.2, 1.5, Boundary::periodic));
      std::vector<double> expected;
      for (std::size_t k = 0; k < n; ++k) expected.push_back(-0.2 + 1.5 * std::cos(2.0 * kPi * k / n));
      std::sort(expected.begin(), expected.end());
      for (std::size_t k = 0; k < n; ++k) CHECK(eig.energies(static_cast<Eigen::Index>(k)) == doctest::Approx(expected[k]).epsilon(1e-10));
    }
  }
  SUBCASE("invalid input") {
    CHECK_THROWS_AS(build_chain(0, 0.0, 1.0, Boundary::open), std::invalid_argument);
    CMatrix m(2, 2);
    m << 0.0, 1.0, 0.5, 0.0;
    CHECK_THROWS_AS(HoppingHamiltonian(m, Boundary::open), std::invalid_argument);
    CHECK_THROWS_AS(HoppingHamiltonian(CMatrix(2, 3), Boundary::open), std::invalid_argument);
  }
}

TEST_CASE("diagonalize agrees with a Jacobi oracle and reconstructs H") {
  for (unsigned seed : {1u, 2u, 3u}) {
    const CMatrix m = random_hermitian(6, seed);
    const auto eig = diagonalize(HoppingHamiltonian(m, Boundary::open));
    const auto oracle = jacobi_eigenvalues(m);
    for (std::size_t k = 0; k < oracle.size(); ++k) CHECK(eig.energies(static_cast<Eigen::Index>(k)) == doctest::Approx(oracle[k]).epsilon(1e-9));
    const CMatrix back = eig.transform * eig.energies.cast<Complex>().asDiagonal() * eig.transform.adjoint();
    CHECK(max_abs(back - m) < 1e-12);
    for (Eigen::Index k = 1; k < eig.energies.size(); ++k) CHECK(eig.energies(k) >= eig.energies(k - 1));
  }
}

TEST_CASE("eigenvector phases are deterministic") {
  const auto h = build_chain(5, 0.0, 1.0, Boundary::periodic);
  const auto a = diagonalize(h);
  const auto b = diagonalize(h);
  CHECK(max_abs(a.transform - b.transform) == 0.0);
  for (Eigen::Index k = 0; k < a.transform.cols(); ++k) {
    for (Eigen::Index i = 0; i < a.transform.rows(); ++i) {
      if (std::abs(a.transform(i, k)) > 1e-10) {
        CHECK(std::abs(a.transform(i, k).imag()) < 1e-14);
        CHECK(a.transform(i, k).real() > 0.0);
        break;
      }
    }
  }
}

TEST_CASE("frequency grid validation") {
  CHECK_THROWS_AS(FreqGrid(0.0, 1.0, 1, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(FreqGrid(1.0, 0.0, 10, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(FreqGrid(0.0, 1.0, 11, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(FreqGrid(0.0, 1.0, 11, 0.1), std::invalid_argument);  // eta below two spacings
  const auto g = FreqGrid::with_default_eta(-2.0, 2.0, 401);
  CHECK(g.spacing() == doctest::Approx(0.01));
  CHECK(g.eta() == doctest::Approx(0.04));
  CHECK(g[400] == doctest::Approx(2.0));
}

TEST_CASE("ideal Green's functions") {
  const auto h = build_chain(4, 0.1, 1.0, Boundary::open);
  const auto grid = FreqGrid::with_default_eta(-3.0, 3.0, 301);
  const auto beta = InverseTemperature::from_beta(2.0);
  const auto g = ideal_greens(h, beta, grid);
  const CMatrix id = CMatrix::Identity(4, 4);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double w = grid[k];
    // Direct inversion oracle.
    const CMatrix direct = ((w + kI * grid.eta()) * id - h.matrix()).inverse();
    CHECK(max_abs(g.retarded[k] - direct) < 1e-12);
    CHECK(max_abs(g.advanced[k] - g.retarded[k].adjoint()) < 1e-14);
    CHECK(max_abs(g.keldysh[k] + g.keldysh[k].adjoint()) < 1e-12);
    const CMatrix fdt = (g.retarded[k] - g.advanced[k]) * std::tanh(w);
    CHECK(max_abs(g.keldysh[k] - fdt) < 1e-12);
  }
  const auto eig = diagonalize(h);
  for (std::size_t k = 0; k < grid.size(); k += 37)
    CHECK(std::abs(ideal_retarded_onsite(eig, 2, grid[k], grid.eta()) - g.retarded[k](2, 2)) < 1e-12);
}
