#include "kqs/kbe.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace kqs {

InitialState::InitialState(CMatrix ini_matrix, InverseTemperature beta) : ini_(std::move(ini_matrix)), beta_(beta) {
  if (ini_.rows() == 0 || ini_.rows() != ini_.cols()) throw std::invalid_argument("InitialState: matrix must be square");
  if (max_abs(ini_ - ini_.adjoint()) > 1e-12) throw std::invalid_argument("InitialState: matrix must be hermitian");
}

InitialState InitialState::single_excitation(std::size_t n_sites, std::size_t excited) {
  if (excited >= n_sites) throw std::out_of_range("single_excitation: site index out of range");
  CMatrix m = CMatrix::Identity(static_cast<Eigen::Index>(n_sites), static_cast<Eigen::Index>(n_sites));
  m(static_cast<Eigen::Index>(excited), static_cast<Eigen::Index>(excited)) = -1.0;
  return {m, InverseTemperature::infinite()};
}

InitialState InitialState::vacuum(std::size_t n_sites) {
  return {CMatrix::Identity(static_cast<Eigen::Index>(n_sites), static_cast<Eigen::Index>(n_sites)),
          InverseTemperature::infinite()};
}

CMatrix InitialState::occupation() const {
  const EigenDecomposition eig = diagonalize_hermitian(ini_);
  RVector f(eig.energies.size());
  for (Eigen::Index k = 0; k < f.size(); ++k) f(k) = beta_.fermi(eig.energies(k));
  return eig.transform * f.cast<Complex>().asDiagonal() * eig.transform.adjoint();
}

CMatrix InitialState::initial_keldysh() const {
  const auto n = ini_.rows();
  return -kI * (CMatrix::Identity(n, n) - 2.0 * occupation());
}

MarkovSelfEnergy markov_self_energy(const std::vector<double>& rates) {
  if (rates.empty()) throw std::invalid_argument("markov_self_energy: no rates");
  RVector r(static_cast<Eigen::Index>(rates.size()));
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (rates[i] < 0.0) throw std::invalid_argument("markov_self_energy: rates must be nonnegative");
    r(static_cast<Eigen::Index>(i)) = rates[i];
  }
  return {r};
}

Complex TlsMemoryKernel::retarded(std::size_t site, double tau) const {
  if (tau < 0.0) return 0.0;
  Complex sum = 0.0;
  for (const auto& l : levels.at(site)) sum += l.coupling * l.coupling * std::exp(-kI * l.energy * tau);
  return (tau == 0.0 ? 0.5 : 1.0) * -kI * sum;
}

Complex TlsMemoryKernel::keldysh(std::size_t site, double tau) const {
  Complex sum = 0.0;
  for (const auto& l : levels.at(site)) sum += l.coupling * l.coupling * std::exp(-kI * l.energy * tau);
  return -kI * sum;
}

TlsMemoryKernel tls_memory_self_energy(const std::vector<TlsBath>& baths) {
  TlsMemoryKernel k;
  for (const auto& b : baths) k.levels.push_back(b.levels());
  return k;
}

TwoTimeGreens::TwoTimeGreens(double dt, std::size_t stride, std::size_t n_steps, std::size_t n_sites)
    : dt_(dt), stride_(stride), n_steps_(n_steps), n_sites_(n_sites) {}

CMatrix TwoTimeGreens::retarded(std::size_t a, std::size_t b) const {
  const auto n = static_cast<Eigen::Index>(n_sites_);
  if (a < b) return CMatrix::Zero(n, n);
  return retarded_.at(a).at(b);
}

CMatrix TwoTimeGreens::advanced(std::size_t a, std::size_t b) const { return retarded(b, a).adjoint(); }

CMatrix TwoTimeGreens::keldysh(std::size_t a, std::size_t b) const {
  if (a >= b) return keldysh_.at(a).at(b);
  return -keldysh_.at(b).at(a).adjoint();
}

void TwoTimeGreens::save_row(std::vector<CMatrix> retarded_row, std::vector<CMatrix> keldysh_row) {
  retarded_.push_back(std::move(retarded_row));
  keldysh_.push_back(std::move(keldysh_row));
}

namespace {

// Exponential modes of the memory kernel on one site.
struct SiteModes {
  std::vector<double> energy;
  RVector weight;     // |g_s|^2
  double total = 0.0; // sum of weights
};

// Per-ray memory accumulators: one (modes x N) block per site.
struct RayMemory {
  std::vector<CMatrix> ret;  // int_{t'}^{t} e^{-ie(t-s)} G^+(s,t') ds
  std::vector<CMatrix> kel;  // int_0^{t} e^{-ie(t-s)} G^K(s,t') ds
  std::vector<CMatrix> adv;  // int_0^{t'} e^{-ie(t'-s)} G^-(s,t') ds, fixed once the ray starts
};

class Integrator {
public:
  Integrator(const HoppingHamiltonian& h, const KbeSelfEnergy& sigma, const InitialState& ini, double dt,
             std::size_t n_steps)
      : h_(h.matrix()), n_(h.matrix().rows()), dt_(dt), n_steps_(n_steps) {
    if (ini.n_sites() != h.n_sites()) throw std::invalid_argument("kbe_integrate: initial state size mismatch");
    rates_ = RVector::Zero(n_);
    modes_.resize(static_cast<std::size_t>(n_));
    if (const auto* m = std::get_if<MarkovSelfEnergy>(&sigma)) {
      if (m->rates.size() != n_) throw std::invalid_argument("kbe_integrate: rate vector size mismatch");
      rates_ = m->rates;
    } else {
      const auto& k = std::get<TlsMemoryKernel>(sigma);
      if (k.levels.size() != static_cast<std::size_t>(n_))
        throw std::invalid_argument("kbe_integrate: one TLS list per site required");
      for (std::size_t i = 0; i < k.levels.size(); ++i) {
        auto& sm = modes_[i];
        sm.weight.resize(static_cast<Eigen::Index>(k.levels[i].size()));
        for (std::size_t s = 0; s < k.levels[i].size(); ++s) {
          sm.energy.push_back(k.levels[i][s].energy);
          const double w = k.levels[i][s].coupling * k.levels[i][s].coupling;
          sm.weight(static_cast<Eigen::Index>(s)) = w;
          sm.total += w;
        }
      }
    }
    has_memory_ = std::any_of(modes_.begin(), modes_.end(), [](const SiteModes& s) { return !s.energy.empty(); });
    if (has_memory_) build_phase_table();

    half_gamma_ = (0.5 * rates_).cast<Complex>().asDiagonal();
    ret_.push_back(-kI * CMatrix::Identity(n_, n_));
    kel_.push_back(ini.initial_keldysh());
    mem_.push_back(empty_memory());
  }

  TwoTimeGreens run(std::size_t stride) {
    TwoTimeGreens out(dt_, stride, n_steps_, static_cast<std::size_t>(n_));
    save(out, 0, stride);
    for (std::size_t step = 0; step < n_steps_; ++step) {
      advance(step);
      save(out, step + 1, stride);
    }
    return out;
  }

private:
  // e^{-i e_s k dt} for every mode and lag k.
  void build_phase_table() {
    phase_.resize(modes_.size());
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      const auto& e = modes_[i].energy;
      phase_[i].resize(e.size());
      for (std::size_t s = 0; s < e.size(); ++s) {
        phase_[i][s].resize(n_steps_ + 2);
        const Complex step = std::exp(-kI * e[s] * dt_);
        Complex p = 1.0;
        for (std::size_t k = 0; k < n_steps_ + 2; ++k) {
          // Resynchronise periodically so rounding does not accumulate.
          if (k % 256 == 0) p = std::exp(-kI * e[s] * dt_ * static_cast<double>(k));
          phase_[i][s][k] = p;
          p *= step;
        }
      }
    }
  }

  RayMemory empty_memory() const {
    RayMemory m;
    if (!has_memory_) return m;
    for (const auto& sm : modes_) {
      const auto s = static_cast<Eigen::Index>(sm.energy.size());
      m.ret.push_back(CMatrix::Zero(s, n_));
      m.kel.push_back(CMatrix::Zero(s, n_));
      m.adv.push_back(CMatrix::Zero(s, n_));
    }
    return m;
  }

  // sum_s w_s acc_s + (dt/2) W x  (the pending endpoint of a partially advanced accumulator).
  CMatrix contract(const std::vector<CMatrix>& acc, const CMatrix* endpoint) const {
    CMatrix out = CMatrix::Zero(n_, n_);
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      const auto& sm = modes_[i];
      if (sm.energy.empty()) continue;
      const auto row = static_cast<Eigen::Index>(i);
      out.row(row) = sm.weight.cast<Complex>().transpose() * acc[i];
      if (endpoint != nullptr) out.row(row) += 0.5 * dt_ * sm.total * endpoint->row(row);
    }
    return out;
  }

  // sum_s w_s e^{-i e_s (t - t')} adv_s, with the lag t - t' = lag * dt.
  CMatrix contract_adv(const std::vector<CMatrix>& adv, std::size_t lag) const {
    CMatrix out = CMatrix::Zero(n_, n_);
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      const auto& sm = modes_[i];
      for (std::size_t s = 0; s < sm.energy.size(); ++s)
        out.row(static_cast<Eigen::Index>(i)) +=
            sm.weight(static_cast<Eigen::Index>(s)) * phase_[i][s][lag] * adv[i].row(static_cast<Eigen::Index>(s));
    }
    return out;
  }

  // acc_s <- e^{-i e_s dt} (acc_s + dt/2 x): the part of the trapezoid step known before t+dt.
  void propagate(std::vector<CMatrix>& acc, const CMatrix& x) const {
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      const auto& sm = modes_[i];
      const auto row = static_cast<Eigen::Index>(i);
      for (std::size_t s = 0; s < sm.energy.size(); ++s) {
        const auto r = static_cast<Eigen::Index>(s);
        acc[i].row(r) = phase_[i][s][1] * (acc[i].row(r) + 0.5 * dt_ * x.row(row));
      }
    }
  }

  void close(std::vector<CMatrix>& acc, const CMatrix& x) const {
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      for (Eigen::Index r = 0; r < acc[i].rows(); ++r) acc[i].row(r) += 0.5 * dt_ * x.row(row);
    }
  }

  // Ray right-hand sides for t > t'. Memory terms are supplied already contracted.
  CMatrix rhs(const CMatrix& g, const CMatrix& memory) const { return -kI * (h_ * g) - half_gamma_ * g - memory; }

  CMatrix diagonal_rhs(const CMatrix& k, const CMatrix& memory) const {
    CMatrix d = -kI * (h_ * k - k * h_) - (half_gamma_ * k + k * half_gamma_);
    d.diagonal() -= kI * rates_.cast<Complex>();
    if (has_memory_) d += -memory + memory.adjoint();
    return d;
  }

  // Trapezoid sums over the current row for a ray started at the newest time.
  void start_ray(RayMemory& m, std::size_t now) const {
    for (std::size_t i = 0; i < modes_.size(); ++i) {
      const auto& sm = modes_[i];
      const auto col = static_cast<Eigen::Index>(i);
      for (std::size_t s = 0; s < sm.energy.size(); ++s) {
        Eigen::RowVectorXcd kel = Eigen::RowVectorXcd::Zero(n_);
        Eigen::RowVectorXcd adv = Eigen::RowVectorXcd::Zero(n_);
        for (std::size_t j = 0; j <= now; ++j) {
          const double w = (j == 0 || j == now) ? 0.5 : 1.0;
          const Complex p = w * phase_[i][s][now - j];
          // G^K(t_j, t) = -G^K(t, t_j)^dagger and G^-(t_j, t) = G^+(t, t_j)^dagger.
          kel -= p * kel_[j].col(col).adjoint();
          adv += p * ret_[j].col(col).adjoint();
        }
        m.kel[i].row(static_cast<Eigen::Index>(s)) = dt_ * kel;
        m.adv[i].row(static_cast<Eigen::Index>(s)) = dt_ * adv;
      }
    }
  }

  void advance(std::size_t now) {
    const std::size_t next = now + 1;
    const std::size_t rays = ret_.size();  // == now + 1

    // Slopes at t_now.
    std::vector<CMatrix> f_ret(rays), f_kel(rays);
    for (std::size_t m = 0; m < rays; ++m) {
      CMatrix mr = CMatrix::Zero(n_, n_), mk = CMatrix::Zero(n_, n_);
      if (has_memory_) {
        mr = contract(mem_[m].ret, nullptr);
        mk = contract(mem_[m].kel, nullptr) + contract_adv(mem_[m].adv, now - m);
      }
      f_ret[m] = rhs(ret_[m], mr);
      f_kel[m] = rhs(kel_[m], mk);
    }
    const CMatrix diag_mem =
        has_memory_ ? CMatrix(contract(mem_[now].kel, nullptr) + contract_adv(mem_[now].adv, 0)) : CMatrix();
    const CMatrix k_now = kel_[now];  // the ray loop below overwrites this slot
    const CMatrix d_now = diagonal_rhs(k_now, diag_mem);

    // Predictor and corrector along every existing ray.
    for (std::size_t m = 0; m < rays; ++m) {
      const CMatrix r_pred = ret_[m] + dt_ * f_ret[m];
      const CMatrix k_pred = kel_[m] + dt_ * f_kel[m];
      CMatrix mr = CMatrix::Zero(n_, n_), mk = CMatrix::Zero(n_, n_);
      if (has_memory_) {
        propagate(mem_[m].ret, ret_[m]);
        propagate(mem_[m].kel, kel_[m]);
        mr = contract(mem_[m].ret, &r_pred);
        mk = contract(mem_[m].kel, &k_pred) + contract_adv(mem_[m].adv, next - m);
      }
      ret_[m] += 0.5 * dt_ * (f_ret[m] + rhs(r_pred, mr));
      kel_[m] += 0.5 * dt_ * (f_kel[m] + rhs(k_pred, mk));
      if (has_memory_) {
        close(mem_[m].ret, ret_[m]);
        close(mem_[m].kel, kel_[m]);
      }
    }

    // New diagonal point.
    ret_.push_back(-kI * CMatrix::Identity(n_, n_));
    kel_.push_back(k_now + dt_ * d_now);
    mem_.push_back(empty_memory());
    CMatrix mk_pred;
    if (has_memory_) {
      start_ray(mem_[next], next);
      mk_pred = contract(mem_[next].kel, nullptr) + contract_adv(mem_[next].adv, 0);
    }
    const CMatrix k_pred = kel_[next];
    CMatrix k_corr = k_now + 0.5 * dt_ * (d_now + diagonal_rhs(k_pred, mk_pred));
    k_corr = 0.5 * (k_corr - k_corr.adjoint());  // equal-time G^K is anti-hermitian
    kel_[next] = k_corr;
    if (has_memory_) {
      // Only the endpoint term of the fresh Keldysh sum used the predicted value.
      const CMatrix delta = k_corr - k_pred;
      for (std::size_t i = 0; i < modes_.size(); ++i)
        for (Eigen::Index r = 0; r < mem_[next].kel[i].rows(); ++r)
          mem_[next].kel[i].row(r) -= 0.5 * dt_ * delta.col(static_cast<Eigen::Index>(i)).adjoint();
    }
  }

  void save(TwoTimeGreens& out, std::size_t step, std::size_t stride) const {
    out.push_diagonal(kel_[step]);
    if (step % stride != 0) return;
    std::vector<CMatrix> r, k;
    for (std::size_t m = 0; m <= step; m += stride) {
      r.push_back(ret_[m]);
      k.push_back(kel_[m]);
    }
    out.save_row(std::move(r), std::move(k));
  }

  CMatrix h_;
  Eigen::Index n_;
  double dt_;
  std::size_t n_steps_;
  RVector rates_;
  CMatrix half_gamma_;
  std::vector<SiteModes> modes_;
  bool has_memory_ = false;
  std::vector<std::vector<std::vector<Complex>>> phase_;  // [site][mode][lag]

  // Current time row t_now: ret_[m] = G^+(t_now, t_m), kel_[m] = G^K(t_now, t_m).
  std::vector<CMatrix> ret_;
  std::vector<CMatrix> kel_;
  std::vector<RayMemory> mem_;
};

double frequency_scale(const HoppingHamiltonian& h, const KbeSelfEnergy& sigma) {
  double scale = diagonalize(h).energies.cwiseAbs().maxCoeff();
  if (const auto* m = std::get_if<MarkovSelfEnergy>(&sigma)) {
    if (m->rates.size() > 0) scale = std::max(scale, m->rates.maxCoeff());
  } else {
    for (const auto& site : std::get<TlsMemoryKernel>(sigma).levels) {
      double w = 0.0;
      for (const auto& l : site) {
        scale = std::max(scale, std::abs(l.energy));
        w += l.coupling * l.coupling;
      }
      scale = std::max(scale, std::sqrt(w));
    }
  }
  return scale;
}

}  // namespace

double kbe_step_limit(const HoppingHamiltonian& h, const KbeSelfEnergy& sigma, KbeOptions options) {
  return options.stability_limit / frequency_scale(h, sigma);
}

TwoTimeGreens kbe_integrate(const HoppingHamiltonian& h, const KbeSelfEnergy& sigma, const InitialState& ini,
                            double t_max, double dt, KbeOptions options) {
  if (!(dt > 0.0) || !(t_max > 0.0)) throw std::invalid_argument("kbe_integrate: dt and t_max must be positive");
  if (options.save_stride == 0) throw std::invalid_argument("kbe_integrate: save_stride must be positive");
  const double scale = frequency_scale(h, sigma);
  if (dt * scale > options.stability_limit) {
    std::ostringstream msg;
    msg << "kbe_integrate: dt = " << dt << " too large for frequency scale " << scale << "; use dt <= "
        << options.stability_limit / scale;
    throw std::invalid_argument(msg.str());
  }
  const auto n_steps = static_cast<std::size_t>(std::llround(t_max / dt));
  Integrator integrator(h, sigma, ini, dt, n_steps);
  return integrator.run(options.save_stride);
}

CMatrix analytic_gk(const HoppingHamiltonian& h, const std::vector<double>& rates, const InitialState& ini, double t,
                    double t_prime) {
  const auto n = static_cast<Eigen::Index>(h.n_sites());
  if (rates.size() != h.n_sites() || ini.n_sites() != h.n_sites())
    throw std::invalid_argument("analytic_gk: size mismatch");
  if (t < t_prime || t_prime < 0.0) throw std::invalid_argument("analytic_gk: requires t >= t' >= 0");
  CMatrix gamma = CMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) gamma(i, i) = rates[static_cast<std::size_t>(i)];
  const CMatrix& hm = h.matrix();
  if (max_abs(hm * gamma - gamma * hm) > 1e-10)
    throw std::invalid_argument("analytic_gk: closed form requires [H, Gamma] = 0");

  const CMatrix left = ((-kI * hm - 0.5 * gamma) * t).exp();
  const CMatrix right = ((kI * hm - 0.5 * gamma) * t_prime).exp();
  const CMatrix middle = (gamma * t_prime).exp() - 2.0 * ini.occupation();
  return -kI * left * middle * right;
}

Occupations occupations(const TwoTimeGreens& g) {
  Occupations out;
  const std::size_t steps = g.n_steps() + 1;
  const auto n = static_cast<std::size_t>(g.equal_time_keldysh(0).rows());
  out.per_site.assign(n, std::vector<double>(steps));
  out.total.assign(steps, 0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    out.times.push_back(static_cast<double>(k) * g.dt());
    const CMatrix& gk = g.equal_time_keldysh(k);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = 0.5 * (1.0 + gk(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)).imag());
      out.per_site[i][k] = v;
      out.total[k] += v;
    }
  }
  return out;
}

CMatrix equal_time_kinetic(const HoppingHamiltonian& h, const std::vector<double>& rates, const InitialState& ini,
                           double t, const FreqGrid& grid, InverseTemperature beta_tls) {
  const auto n = static_cast<Eigen::Index>(h.n_sites());
  if (rates.size() != h.n_sites() || ini.n_sites() != h.n_sites())
    throw std::invalid_argument("equal_time_kinetic: size mismatch");
  CMatrix half_gamma = CMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) half_gamma(i, i) = 0.5 * rates[static_cast<std::size_t>(i)];
  const CMatrix id = CMatrix::Identity(n, n);

  CMatrix q = CMatrix::Zero(n, n);
  const double h_w = grid.spacing();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double w = grid[k];
    const CMatrix gr = (w * id - h.matrix() + kI * half_gamma).inverse();
    const CMatrix a = kI * (gr - gr.adjoint());
    const double weight = (k == 0 || k + 1 == grid.size()) ? 0.5 : 1.0;
    q += weight * h_w / (2.0 * kPi) * beta_tls.distribution(w) * a;
  }
  const CMatrix e = ((-kI * h.matrix() - half_gamma) * t).exp();
  const CMatrix f_ini = id - 2.0 * ini.occupation();
  return -kI * (q - e * (q - f_ini) * e.adjoint());
}

}  // namespace kqs
