#include <doctest.h>

#include <cmath>

#include "kqs/keldysh_steady.hpp"

using namespace kqs;

namespace {

double coth(double x) { return 1.0 / std::tanh(x); }

// Independent single-qubit rate: 1/2 J(x) [F(e) + coth(beta x / 2)], x = w - e.
double golden_rule_rate(const OhmicBath& bath, double e, double w, InverseTemperature beta_sys) {
  const double x = w - e;
  const double j = bath.alpha() * x * std::exp(-std::abs(x) / bath.cutoff());
  if (std::abs(x) < 1e-12) return bath.alpha() * bath.temperature();
  return 0.5 * j * (beta_sys.distribution(e) + coth(0.5 * x / bath.temperature()));
}

}  // namespace

TEST_CASE("vanishing self-energy returns the ideal propagators") {
  const auto h = build_chain(3, 0.2, 1.0, Boundary::open);
  const auto grid = FreqGrid::with_default_eta(-3.0, 3.0, 601);
  const auto g0 = ideal_greens(h, InverseTemperature::from_beta(3.0), grid);
  const auto g = dyson_solve(g0, SelfEnergy::zero(grid, 3));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(max_abs(g.retarded[k] - g0.retarded[k]) < 1e-12);
    CHECK(max_abs(g.keldysh[k] - g0.keldysh[k]) < 1e-12);
  }
}

TEST_CASE("wide-band embedding gives a Lorentzian") {
  const auto h = build_chain(1, 0.5, 1.0, Boundary::open);
  const auto grid = FreqGrid::with_default_eta(-4.0, 5.0, 901);
  const auto g0 = ideal_greens(h, InverseTemperature::infinite(), grid);
  const double gamma = 0.3;
  const auto sigma = tls_embedding_self_energy({WideBandBath(gamma)}, grid);
  const auto g = dyson_solve(g0, sigma);
  for (std::size_t k = 0; k < grid.size(); k += 11) {
    const Complex direct = 1.0 / Complex(grid[k] - 0.5, grid.eta() + 0.5 * gamma);
    CHECK(std::abs(g.retarded[k](0, 0) - direct) < 1e-12);
  }
  CHECK(sigma.keldysh[0](0).imag() == doctest::Approx(-gamma));
}

TEST_CASE("extract_rates uses Gamma = -2 Im Sigma^+") {
  const FreqGrid grid(-1.0, 1.0, 3, 2.0);
  SelfEnergy s = SelfEnergy::zero(grid, 1);
  s.retarded[1](0) = Complex(0.3, -0.05);
  const auto r = extract_rates(s);
  CHECK(r.gamma[0][1] == doctest::Approx(0.1));
  CHECK(r.shift[0][1] == doctest::Approx(0.3));
  CHECK(r.retarded(0, 1) == s.retarded[1](0));
}

TEST_CASE("closed-form rate function for a single qubit") {
  const auto h = build_chain(1, 0.8, 1.0, Boundary::open);
  const OhmicBath bath(0.02, 5.0, 0.3);
  const auto grid = FreqGrid::with_default_eta(-4.0, 6.0, 1001);
  for (auto beta : {InverseTemperature::infinite(), InverseTemperature::from_beta(2.0)}) {
    const auto r = dephasing_rate_function(h, {bath}, beta, grid);
    for (std::size_t k = 0; k < grid.size(); ++k)
      CHECK(std::abs(r.gamma[0][k] - golden_rule_rate(bath, 0.8, grid[k], beta)) < 1e-6);
  }
  // At the qubit energy the rate is S(0)/2.
  const FreqGrid centred(-0.2, 1.8, 201, 0.04);
  const auto r = dephasing_rate_function(h, {bath}, InverseTemperature::infinite(), centred);
  CHECK(r.gamma[0][100] == doctest::Approx(bath.zero_frequency_noise() / 2.0).epsilon(1e-10));
}

TEST_CASE("convolution converges to the closed form as eta -> 0") {
  const auto h = build_chain(1, 0.0, 1.0, Boundary::open);
  auto relative_error = [&](const OhmicBath& bath, const FreqGrid& grid, double window, bool shift) {
    const auto beta = bath.beta();
    Diagnostics diag;
    const auto conv = extract_rates(dephasing_self_energy(h, {bath}, beta, grid, &diag));
    const auto closed = dephasing_rate_function(h, {bath}, beta, grid);
    CHECK(diag.warnings.empty());
    double scale = 0.0, err = 0.0;
    for (double g : closed.gamma[0]) scale = std::max(scale, std::abs(g));
    for (std::size_t k = 0; k < grid.size(); ++k)
      if (std::abs(grid[k]) <= window) {
        const auto& a = shift ? conv.shift[0] : conv.gamma[0];
        const auto& b = shift ? closed.shift[0] : closed.gamma[0];
        err = std::max(err, std::abs(a[k] - b[k]));
      }
    return err / scale;
  };
  // The Lorentzian-broadened G0 makes the error first order in eta; the largest
  // contribution comes from smoothing the |w| cusp of the cutoff at zero frequency.
  const OhmicBath cool(0.05, 4.0, 1.0);
  const double e1 = relative_error(cool, FreqGrid::with_default_eta(-25.0, 25.0, 2501), 10.0, false);
  const double e2 = relative_error(cool, FreqGrid::with_default_eta(-25.0, 25.0, 5001), 10.0, false);
  CHECK(e1 / e2 > 1.5);
  CHECK(e1 / e2 < 2.5);
  const OhmicBath wide_cutoff(0.05, 50.0, 5.0);
  CHECK(relative_error(wide_cutoff, FreqGrid::with_default_eta(-60.0, 60.0, 12001), 20.0, false) < 0.01);
  // The shift needs the grid to cover the bath tails.
  const OhmicBath short_cutoff(0.05, 10.0, 10.0);
  CHECK(relative_error(short_cutoff, FreqGrid::with_default_eta(-80.0, 80.0, 8001), 20.0, true) < 0.01);
}

TEST_CASE("dephasing Dyson solution: FDT, sum rule, positivity") {
  const auto h = build_chain(3, 0.0, 1.0, Boundary::open);
  const double temperature = 0.5;
  const std::vector<OhmicBath> baths(3, OhmicBath(0.05, 3.0, temperature));
  const auto beta = InverseTemperature::from_temperature(temperature);
  const auto grid = FreqGrid::with_default_eta(-15.0, 15.0, 1501);
  const auto sigma = dephasing_self_energy(h, baths, beta, grid);
  const auto g = dyson_solve(ideal_greens(h, beta, grid), sigma);
  const auto a = spectral_weight(g);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(max_abs(g.advanced[k] - g.retarded[k].adjoint()) < 1e-12);
    CHECK(max_abs(g.keldysh[k] + g.keldysh[k].adjoint()) < 1e-12);
    const CMatrix fdt = (g.retarded[k] - g.advanced[k]) * beta.distribution(grid[k]);
    CHECK(max_abs(g.keldysh[k] - fdt) <= 1e-6 * std::max(max_abs(fdt), 1e-300) + 1e-14);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.values[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)).real() >= -1e-10);
    // Self-energy is dissipative.
    for (std::size_t i = 0; i < 3; ++i) CHECK(sigma.retarded[k](static_cast<Eigen::Index>(i)).imag() <= 1e-14);
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(spectral_sum(a, i) == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("TLS embedding self-energy") {
  const TlsBath bath({{1.0, 0.1}, {1.4, 0.05}}, 0.0);
  const auto grid = FreqGrid::with_default_eta(-2.0, 3.0, 501);
  const double smearing = 0.03;
  const auto s = tls_embedding_self_energy({bath}, grid, smearing);
  for (std::size_t k = 0; k < grid.size(); k += 7) {
    const double rate = -2.0 * s.retarded[k](0).imag();
    CHECK(rate == doctest::Approx(tls_spectral_density(bath, grid[k], smearing)).epsilon(1e-12));
    const double sign = grid[k] > 0 ? 1.0 : (grid[k] < 0 ? -1.0 : 0.0);
    CHECK(s.keldysh[k](0).imag() == doctest::Approx(-rate * sign));
    CHECK(s.advanced[k](0) == std::conj(s.retarded[k](0)));
  }
}

TEST_CASE("dyson_solve input validation") {
  const auto h = build_chain(1, 0.0, 1.0, Boundary::open);
  const FreqGrid grid(-1.0, 1.0, 21, 0.2);
  const auto g0 = ideal_greens(h, InverseTemperature::infinite(), grid);
  CHECK_THROWS_AS(dyson_solve(g0, SelfEnergy::zero(FreqGrid(-1.0, 1.0, 21, 0.3), 1)), std::invalid_argument);
  CHECK_THROWS_AS(dyson_solve(g0, SelfEnergy::zero(grid, 2)), std::invalid_argument);
  SelfEnergy s = SelfEnergy::zero(grid, 1);
  s.retarded[10](0) = Complex(0.0, grid.eta());  // cancels (G0^+)^{-1} = w + i eta at w = 0
  CHECK_THROWS_AS(dyson_solve(g0, s), SingularityError);
}
