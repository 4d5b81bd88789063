#include "kqs/keldysh_steady.hpp"

#include <algorithm>
#include <string>

#include <Eigen/LU>

namespace kqs {

namespace {

void require_one_bath_per_site(std::size_t n_baths, std::size_t n_sites, const char* where) {
  if (n_baths != n_sites) {
    throw std::invalid_argument(std::string(where) + ": expected one bath per site (" + std::to_string(n_sites) +
                                "), got " + std::to_string(n_baths));
  }
}

// Bath quantities tabulated on the lag grid x_l = (l - (n-1)) h, l = 0 .. 2n-2.
struct LagTables {
  std::vector<double> noise;     // S(x)
  std::vector<double> spectral;  // J(x)
  std::vector<Complex> retarded; // D^+(x)
};

LagTables tabulate_lags(const OhmicBath& bath, std::size_t n, double h) {
  LagTables t;
  const std::size_t m = 2 * n - 1;
  t.noise.resize(m);
  t.spectral.resize(m);
  t.retarded.resize(m);
  for (std::size_t l = 0; l < m; ++l) {
    const double x = (static_cast<double>(l) - static_cast<double>(n - 1)) * h;
    t.noise[l] = power_spectral_density(bath, x);
    t.spectral[l] = spectral_function(bath, x);
    t.retarded[l] = bath.retarded_correlator(x);
  }
  return t;
}

}  // namespace

SelfEnergy SelfEnergy::zero(const FreqGrid& grid, std::size_t n_sites) {
  const auto n = static_cast<Eigen::Index>(n_sites);
  SelfEnergy s{grid, {}, {}, {}};
  s.retarded.assign(grid.size(), CVector::Zero(n));
  s.advanced.assign(grid.size(), CVector::Zero(n));
  s.keldysh.assign(grid.size(), CVector::Zero(n));
  return s;
}

SelfEnergy dephasing_self_energy(const HoppingHamiltonian& h, const std::vector<OhmicBath>& baths,
                                 InverseTemperature beta_sys, const FreqGrid& grid, Diagnostics* diag) {
  const std::size_t n_sites = h.n_sites();
  require_one_bath_per_site(baths.size(), n_sites, "dephasing_self_energy");
  const EigenDecomposition eig = diagonalize(h);

  const double margin = 10.0 * grid.eta();
  for (Eigen::Index k = 0; k < eig.energies.size(); ++k) {
    if (eig.energies[k] < grid.omega_min() + margin || eig.energies[k] > grid.omega_max() - margin) {
      warn_to(diag, "dephasing_self_energy: eigenenergy " + std::to_string(eig.energies[k]) +
                        " lies too close to the grid edge; convolution support is truncated");
      break;
    }
  }

  const std::size_t n = grid.size();
  const double h_step = grid.spacing();
  const double measure = h_step / (2.0 * kPi);
  SelfEnergy sigma = SelfEnergy::zero(grid, n_sites);

  std::vector<Complex> g0r(n);
  std::vector<Complex> g0k(n);
  std::vector<Complex> g0diff(n);
  for (std::size_t i = 0; i < n_sites; ++i) {
    const OhmicBath& bath = baths[i];
    if (bath.alpha() == 0.0) continue;
    const LagTables lag = tabulate_lags(bath, n, h_step);

    for (std::size_t m = 0; m < n; ++m) {
      const double weight = (m == 0 || m + 1 == n) ? 0.5 : 1.0;
      const Complex gr = ideal_retarded_onsite(eig, i, grid[m], grid.eta());
      const Complex diff{0.0, 2.0 * gr.imag()};  // G0^+ - G0^-
      g0r[m] = weight * gr;
      g0diff[m] = weight * diff;
      g0k[m] = weight * diff * beta_sys.distribution(grid[m]);
    }

    for (std::size_t j = 0; j < n; ++j) {
      Complex acc_kr{0.0, 0.0};  // sum G0^K D^+
      Complex acc_rs{0.0, 0.0};  // sum G0^+ S
      Complex acc_ks{0.0, 0.0};  // sum G0^K S
      Complex acc_dj{0.0, 0.0};  // sum (G0^+ - G0^-) J
      const std::size_t base = j + n - 1;
      for (std::size_t m = 0; m < n; ++m) {
        const std::size_t l = base - m;
        acc_kr += g0k[m] * lag.retarded[l];
        acc_rs += g0r[m] * lag.noise[l];
        acc_ks += g0k[m] * lag.noise[l];
        acc_dj += g0diff[m] * lag.spectral[l];
      }
      // Sigma^+ = (i/2) int [G0^K D^+ + G0^+ D^K],  D^K = -i S
      const Complex sr = 0.5 * measure * (kI * acc_kr + acc_rs);
      // Sigma^K = (i/2) int [G0^K D^K + (G0^+ - G0^-)(D^+ - D^-)],  D^+ - D^- = -i J
      const Complex sk = 0.5 * measure * (acc_ks + acc_dj);
      const auto ii = static_cast<Eigen::Index>(i);
      sigma.retarded[j][ii] = sr;
      sigma.advanced[j][ii] = std::conj(sr);
      sigma.keldysh[j][ii] = Complex(0.0, sk.imag());
    }
  }
  return sigma;
}

RateFunction dephasing_rate_function(const HoppingHamiltonian& h, const std::vector<OhmicBath>& baths,
                                     InverseTemperature beta_sys, const FreqGrid& grid) {
  const std::size_t n_sites = h.n_sites();
  require_one_bath_per_site(baths.size(), n_sites, "dephasing_rate_function");
  const EigenDecomposition eig = diagonalize(h);
  const std::size_t n = grid.size();
  const double h_step = grid.spacing();

  RateFunction out{grid, std::vector<std::vector<double>>(n_sites, std::vector<double>(n, 0.0)),
                   std::vector<std::vector<double>>(n_sites, std::vector<double>(n, 0.0))};

  // Lag window wide enough to hold every w - e_k with one spacing to spare.
  const double reach = (grid.omega_max() - grid.omega_min()) + (eig.energies.maxCoeff() - eig.energies.minCoeff()) +
                       2.0 * h_step;
  const auto half = static_cast<std::size_t>(std::ceil(reach / h_step));
  const FreqGrid lag_grid(-static_cast<double>(half) * h_step, static_cast<double>(half) * h_step, 2 * half + 1,
                          2.0 * h_step);

  std::vector<double> noise_pv;
  const OhmicBath* tabulated = nullptr;
  for (std::size_t i = 0; i < n_sites; ++i) {
    const OhmicBath& bath = baths[i];
    if (bath.alpha() == 0.0) continue;
    const bool reuse = tabulated != nullptr && tabulated->alpha() == bath.alpha() &&
                       tabulated->cutoff() == bath.cutoff() && tabulated->temperature() == bath.temperature();
    if (!reuse) {
      std::vector<double> noise(lag_grid.size());
      for (std::size_t l = 0; l < lag_grid.size(); ++l) noise[l] = power_spectral_density(bath, lag_grid[l]);
      noise_pv.resize(lag_grid.size());
      for (std::size_t l = 0; l < lag_grid.size(); ++l) {
        noise_pv[l] = principal_value_transform(lag_grid, noise, lag_grid[l]);
      }
      tabulated = &bath;
    }
    auto interpolate_pv = [&](double x) {
      const double pos = (x - lag_grid.omega_min()) / h_step;
      const auto l = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(lag_grid.size() - 2)));
      const double frac = pos - static_cast<double>(l);
      return noise_pv[l] * (1.0 - frac) + noise_pv[l + 1] * frac;
    };

    for (std::size_t p = 0; p < n; ++p) {
      const double w = grid[p];
      double gamma = 0.0;
      double shift = 0.0;
      for (Eigen::Index k = 0; k < eig.energies.size(); ++k) {
        const double weight = std::norm(eig.transform(static_cast<Eigen::Index>(i), k));
        const double x = w - eig.energies[k];
        const double f = beta_sys.distribution(eig.energies[k]);
        gamma += 0.5 * weight * (power_spectral_density(bath, x) + f * spectral_function(bath, x));
        shift += weight * (interpolate_pv(x) / (4.0 * kPi) + 0.5 * f * bath.retarded_correlator(x).real());
      }
      out.gamma[i][p] = gamma;
      out.shift[i][p] = shift;
    }
  }
  return out;
}

SelfEnergy tls_embedding_self_energy(const std::vector<RelaxationBath>& baths, const FreqGrid& grid,
                                     double smearing) {
  const double width = smearing > 0.0 ? smearing : 2.0 * grid.spacing();
  SelfEnergy sigma = SelfEnergy::zero(grid, baths.size());
  for (std::size_t i = 0; i < baths.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (const auto* wide = std::get_if<WideBandBath>(&baths[i])) {
      for (std::size_t p = 0; p < grid.size(); ++p) {
        sigma.retarded[p][ii] = Complex(0.0, -0.5 * wide->rate);
        sigma.advanced[p][ii] = Complex(0.0, 0.5 * wide->rate);
        sigma.keldysh[p][ii] = Complex(0.0, -wide->rate);
      }
      continue;
    }
    const auto& tls = std::get<TlsBath>(baths[i]);
    const InverseTemperature beta_b = InverseTemperature::from_temperature(tls.temperature());
    for (std::size_t p = 0; p < grid.size(); ++p) {
      const double w = grid[p];
      // A Lorentzian-smeared delta maps to the resolvent |g|^2 / (w - e + i smearing).
      Complex sr{0.0, 0.0};
      for (const auto& level : tls.levels()) {
        sr += level.coupling * level.coupling / Complex(w - level.energy, width);
      }
      const double rate = -2.0 * sr.imag();
      sigma.retarded[p][ii] = sr;
      sigma.advanced[p][ii] = std::conj(sr);
      sigma.keldysh[p][ii] = Complex(0.0, -rate * beta_b.distribution(w));
    }
  }
  return sigma;
}

FreqGreens dyson_solve(const FreqGreens& g0, const SelfEnergy& sigma) {
  if (!(g0.grid == sigma.grid)) throw std::invalid_argument("dyson_solve: frequency grids differ");
  if (g0.dim() != sigma.dim()) {
    throw std::invalid_argument("dyson_solve: dimension mismatch (" + std::to_string(g0.dim()) + " vs " +
                                std::to_string(sigma.dim()) + ")");
  }
  const std::size_t n = g0.grid.size();
  FreqGreens out{g0.grid, std::vector<CMatrix>(n), std::vector<CMatrix>(n), std::vector<CMatrix>(n)};
  for (std::size_t p = 0; p < n; ++p) {
    Eigen::PartialPivLU<CMatrix> g0r_lu(g0.retarded[p]);
    const CMatrix g0r_inv = g0r_lu.inverse();
    const CMatrix g0a_inv = g0r_inv.adjoint();
    const CMatrix lhs = g0r_inv - sigma.retarded_matrix(p);
    Eigen::FullPivLU<CMatrix> lu(lhs);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
      throw SingularityError("dyson_solve: G0^-1 - Sigma is singular at omega = " + std::to_string(g0.grid[p]));
    }
    CMatrix gr = lu.inverse();
    CMatrix ga = gr.adjoint();
    const CMatrix kernel = g0r_inv * g0.keldysh[p] * g0a_inv + sigma.keldysh_matrix(p);
    CMatrix gk = gr * kernel * ga;
    gk = 0.5 * (gk - gk.adjoint()).eval();
    out.retarded[p] = std::move(gr);
    out.advanced[p] = std::move(ga);
    out.keldysh[p] = std::move(gk);
  }
  return out;
}

std::vector<double> SpectralWeight::diagonal(std::size_t site) const {
  std::vector<double> out(values.size());
  const auto i = static_cast<Eigen::Index>(site);
  for (std::size_t p = 0; p < values.size(); ++p) out[p] = values[p](i, i).real();
  return out;
}

std::vector<Complex> SpectralWeight::element(std::size_t i, std::size_t j) const {
  std::vector<Complex> out(values.size());
  for (std::size_t p = 0; p < values.size(); ++p) {
    out[p] = values[p](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return out;
}

SpectralWeight spectral_weight(const FreqGreens& g) {
  SpectralWeight a{g.grid, std::vector<CMatrix>(g.retarded.size())};
  for (std::size_t p = 0; p < g.retarded.size(); ++p) a.values[p] = kI * (g.retarded[p] - g.advanced[p]);
  return a;
}

RateFunction extract_rates(const SelfEnergy& sigma) {
  const std::size_t n_sites = sigma.dim();
  const std::size_t n = sigma.grid.size();
  RateFunction out{sigma.grid, std::vector<std::vector<double>>(n_sites, std::vector<double>(n)),
                   std::vector<std::vector<double>>(n_sites, std::vector<double>(n))};
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < n_sites; ++i) {
      const Complex s = sigma.retarded[p][static_cast<Eigen::Index>(i)];
      out.gamma[i][p] = -2.0 * s.imag();
      out.shift[i][p] = s.real();
    }
  }
  return out;
}

double spectral_sum(const SpectralWeight& a, std::size_t site) {
  const auto d = a.diagonal(site);
  double sum = 0.0;
  for (std::size_t p = 0; p < d.size(); ++p) sum += (p == 0 || p + 1 == d.size() ? 0.5 : 1.0) * d[p];
  return sum * a.grid.spacing() / (2.0 * kPi);
}

}  // namespace kqs
