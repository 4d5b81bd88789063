#include <doctest.h>

#include <cmath>

#include "kqs/kbe.hpp"
#include "kqs/qme.hpp"

using namespace kqs;

namespace {

double max_gk_error(const TwoTimeGreens& g, const HoppingHamiltonian& h, const std::vector<double>& rates,
                    const InitialState& ini) {
  double err = 0.0;
  for (std::size_t a = 0; a < g.n_saved(); ++a)
    for (std::size_t b = 0; b <= a; ++b)
      err = std::max(err, max_abs(g.keldysh(a, b) - analytic_gk(h, rates, ini, g.saved_time(a), g.saved_time(b))));
  return err;
}

}  // namespace

TEST_CASE("initial states") {
  const auto ini = InitialState::single_excitation(3, 1);
  const CMatrix f = ini.occupation();
  CHECK(f(1, 1).real() == doctest::Approx(1.0));
  CHECK(f(0, 0).real() == doctest::Approx(0.0));
  CHECK(max_abs(ini.initial_keldysh() + ini.initial_keldysh().adjoint()) < 1e-15);
  CHECK_THROWS_AS(InitialState::single_excitation(3, 3), std::out_of_range);
  CMatrix bad(2, 2);
  bad << 0.0, 1.0, 0.0, 0.0;
  CHECK_THROWS_AS(InitialState(bad, InverseTemperature::infinite()), std::invalid_argument);
}

TEST_CASE("single qubit Markov decay follows exp(-Gamma t)") {
  const double gamma = 1.0;
  const auto h = build_chain(1, 0.7, 1.0, Boundary::open);
  const auto ini = InitialState::single_excitation(1, 0);
  const auto g = kbe_integrate(h, markov_self_energy({gamma}), ini, 5.0, 1e-3 / gamma, {100});
  const auto occ = occupations(g);
  double err = 0.0;
  for (std::size_t k = 0; k < occ.times.size(); ++k) err = std::max(err, std::abs(occ.per_site[0][k] - std::exp(-gamma * occ.times[k])));
  CHECK(err < 1e-6);
}

TEST_CASE("commuting Markov problem matches the closed form with second-order convergence") {
  const auto h = build_chain(3, 0.2, 1.0, Boundary::open);
  const std::vector<double> rates(3, 0.5);
  const auto ini = InitialState::single_excitation(3, 0);
  const auto coarse = kbe_integrate(h, markov_self_energy(rates), ini, 2.0, 0.01, {10});
  const auto fine = kbe_integrate(h, markov_self_energy(rates), ini, 2.0, 0.005, {20});
  const double e1 = max_gk_error(coarse, h, rates, ini);
  const double e2 = max_gk_error(fine, h, rates, ini);
  CHECK(e1 < 1e-4);
  CHECK(e1 / e2 > 3.5);
  CHECK(e1 / e2 < 4.5);

  // Retarded function: -i exp[(-iH - Gamma/2)(t - t')].
  for (std::size_t a = 0; a < fine.n_saved(); a += 3)
    for (std::size_t b = 0; b <= a; b += 2) {
      const double tau = fine.saved_time(a) - fine.saved_time(b);
      const Eigen::SelfAdjointEigenSolver<CMatrix> es(h.matrix());
      CVector ph(3);
      for (int k = 0; k < 3; ++k) ph(k) = std::exp(Complex(-0.25 * tau, -es.eigenvalues()(k) * tau));
      const CMatrix exact = -kI * es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
      CHECK(max_abs(fine.retarded(a, b) - exact) < 1e-5);
    }
}

TEST_CASE("two-time symmetries at stored points") {
  const auto h = build_chain(2, 0.0, 1.0, Boundary::open);
  const TlsBath bath({{0.8, 0.2}, {1.2, 0.1}}, 0.0);
  const auto g = kbe_integrate(h, tls_memory_self_energy({bath, bath}), InitialState::single_excitation(2, 0), 3.0,
                               0.01, {10});
  for (std::size_t a = 0; a < g.n_saved(); ++a)
    for (std::size_t b = 0; b < g.n_saved(); ++b) {
      CHECK(max_abs(g.advanced(a, b) - g.retarded(b, a).adjoint()) < 1e-10);
      CHECK(max_abs(g.keldysh(a, b) + g.keldysh(b, a).adjoint()) < 1e-10);
      if (a < b) CHECK(max_abs(g.retarded(a, b)) == 0.0);
    }
  for (std::size_t k = 0; k <= g.n_steps(); ++k)
    CHECK(max_abs(g.equal_time_keldysh(k) + g.equal_time_keldysh(k).adjoint()) < 1e-10);
}

TEST_CASE("memory kernel reproduces vacuum Rabi oscillations") {
  const double gc = 0.3;
  const auto h = build_chain(1, 1.0, 1.0, Boundary::open);
  const TlsBath bath({{1.0, gc}}, 0.0);
  const auto ini = InitialState::single_excitation(1, 0);
  const double dt = 0.002;
  const auto g = kbe_integrate(h, tls_memory_self_energy({bath}), ini, 10.0, dt, {500});
  const auto occ = occupations(g);
  const auto exact = exact_tls_evolve(h, {bath}, ini, dt, g.n_steps());
  double err = 0.0, err_exact = 0.0;
  for (std::size_t k = 0; k < occ.times.size(); ++k) {
    const double c = std::cos(gc * occ.times[k]);
    err = std::max(err, std::abs(occ.per_site[0][k] - c * c));
    err_exact = std::max(err_exact, std::abs(exact.per_site[0][k] - c * c));
  }
  CHECK(err < 1e-4);
  CHECK(err_exact < 1e-12);
}

TEST_CASE("vacuum stays empty and kernels have the documented form") {
  const auto h = build_chain(2, 0.3, 1.0, Boundary::open);
  const auto g = kbe_integrate(h, markov_self_energy({0.4, 0.1}), InitialState::vacuum(2), 1.0, 0.01);
  const auto occ = occupations(g);
  for (double n : occ.total) CHECK(std::abs(n) < 1e-12);

  const TlsMemoryKernel k{{{{1.5, 0.2}}}};
  CHECK(std::abs(k.retarded(0, -0.1)) == 0.0);
  CHECK(std::abs(k.retarded(0, 0.7) - Complex(0.0, -0.04) * std::exp(Complex(0.0, -1.05))) < 1e-15);
  CHECK(std::abs(k.keldysh(0, -0.7) - Complex(0.0, -0.04) * std::exp(Complex(0.0, 1.05))) < 1e-15);
}

TEST_CASE("step size guard and input validation") {
  const auto h = build_chain(2, 0.0, 1.0, Boundary::open);
  const auto ini = InitialState::single_excitation(2, 0);
  try {
    kbe_integrate(h, markov_self_energy({0.1, 0.1}), ini, 1.0, 0.2);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("use dt <=") != std::string::npos);
  }
  CHECK_THROWS_AS(kbe_integrate(h, markov_self_energy({0.1}), ini, 1.0, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(kbe_integrate(h, markov_self_energy({0.1, 0.1}), ini, -1.0, 0.01), std::invalid_argument);
  CHECK_THROWS_AS(markov_self_energy({-0.1}), std::invalid_argument);
  // Non-commuting rates are rejected by the closed form.
  CHECK_THROWS_AS(analytic_gk(h, {0.1, 0.3}, ini, 1.0, 0.5), std::invalid_argument);
}

TEST_CASE("equal-time kinetic function from the spectral weight") {
  // The Markov self-energy is an empty bath at every frequency; a cold TLS bath agrees
  // with it once the spectral weight lies at w > 0. Lorentzian tails below zero and
  // beyond the grid leave an error of order Gamma / (pi E).
  const auto h = build_chain(2, 50.0, 1.0, Boundary::open);
  const std::vector<double> rates(2, 0.1);
  const auto ini = InitialState::single_excitation(2, 1);
  const FreqGrid grid(-10.0, 110.0, 60001, 0.004);
  for (double t : {0.0, 5.0, 30.0}) {
    const CMatrix spectral = equal_time_kinetic(h, rates, ini, t, grid, InverseTemperature::infinite());
    CHECK(max_abs(spectral - analytic_gk(h, rates, ini, t, t)) < 3e-3);
  }
}
