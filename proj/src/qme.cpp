#include "kqs/qme.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <unsupported/Eigen/MatrixFunctions>

namespace kqs {

namespace {

using Index = Eigen::Index;

std::size_t hilbert_dim(std::size_t n_sites) { return std::size_t{1} << n_sites; }

void check_jw(std::size_t site, std::size_t n_sites) {
  if (n_sites > kMaxJwSites) {
    std::ostringstream msg;
    msg << "spin operators are limited to " << kMaxJwSites << " sites, got " << n_sites;
    throw CapacityError(msg.str());
  }
  if (site >= n_sites) throw std::out_of_range("spin operator: site index out of range");
}

std::size_t site_bit(std::size_t site, std::size_t n_sites) { return std::size_t{1} << (n_sites - 1 - site); }

int popcount(std::size_t s) { return std::popcount(s); }

// Single-term local operators built from the basis bit pattern.
template <class F>
SpinOperator from_rule(std::size_t n_sites, F&& rule) {
  const std::size_t d = hilbert_dim(n_sites);
  std::vector<Eigen::Triplet<Complex>> triplets;
  for (std::size_t s = 0; s < d; ++s) rule(s, triplets);
  SpinOperator op(static_cast<Index>(d), static_cast<Index>(d));
  op.setFromTriplets(triplets.begin(), triplets.end());
  return op;
}

CMatrix dense(const SpinOperator& op) { return CMatrix(op); }

}  // namespace

SpinOperator sigma_minus(std::size_t site, std::size_t n_sites) {
  check_jw(site, n_sites);
  const std::size_t bit = site_bit(site, n_sites);
  return from_rule(n_sites, [&](std::size_t s, auto& t) {
    if (s & bit) t.emplace_back(static_cast<Index>(s ^ bit), static_cast<Index>(s), 1.0);
  });
}

SpinOperator sigma_z(std::size_t site, std::size_t n_sites) {
  check_jw(site, n_sites);
  const std::size_t bit = site_bit(site, n_sites);
  return from_rule(n_sites, [&](std::size_t s, auto& t) {
    t.emplace_back(static_cast<Index>(s), static_cast<Index>(s), (s & bit) ? 1.0 : -1.0);
  });
}

SpinOperator number_operator(std::size_t site, std::size_t n_sites) {
  check_jw(site, n_sites);
  const std::size_t bit = site_bit(site, n_sites);
  return from_rule(n_sites, [&](std::size_t s, auto& t) {
    if (s & bit) t.emplace_back(static_cast<Index>(s), static_cast<Index>(s), 1.0);
  });
}

SpinOperator jw_fermion(std::size_t site, std::size_t n_sites) {
  check_jw(site, n_sites);
  const std::size_t bit = site_bit(site, n_sites);
  // Qubits j < i occupy the bits above `bit`.
  const std::size_t string_mask = (hilbert_dim(n_sites) - 1) & ~((bit << 1) - 1);
  return from_rule(n_sites, [&](std::size_t s, auto& t) {
    if (!(s & bit)) return;
    const double sign = (popcount(s & string_mask) % 2 == 0) ? 1.0 : -1.0;
    t.emplace_back(static_cast<Index>(s ^ bit), static_cast<Index>(s), sign);
  });
}

SpinOperator spin_hamiltonian(const HoppingHamiltonian& h) {
  const std::size_t n = h.n_sites();
  check_jw(0, n);
  std::vector<SpinOperator> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(jw_fermion(i, n));
  const auto d = static_cast<Index>(hilbert_dim(n));
  SpinOperator out(d, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const Complex t = h.matrix()(static_cast<Index>(i), static_cast<Index>(j));
      if (t == Complex(0.0)) continue;
      out += SpinOperator(t * SpinOperator(c[i].adjoint()) * c[j]);
    }
  out.prune(Complex(0.0));
  return out;
}

// ---------------------------------------------------------------------------
// Superoperator

void Superoperator::set_basis(CMatrix basis, std::vector<int> number, std::size_t n_sites) {
  basis_ = std::move(basis);
  number_ = std::move(number);
  n_sites_ = n_sites;
}

CMatrix Superoperator::apply(const CMatrix& rho) const {
  const CMatrix w = to_working(rho);
  CMatrix out = CMatrix::Zero(w.rows(), w.cols());
  if (secular_window_ < 0.0) {
    for (const auto& t : terms_) out += t.left * w * t.right;
    return to_computational(out);
  }
  for (int q = -static_cast<int>(n_sites_); q <= static_cast<int>(n_sites_); ++q) {
    const auto pairs = sector_basis(q);
    if (pairs.empty()) continue;
    CVector v(static_cast<Index>(pairs.size()));
    for (std::size_t p = 0; p < pairs.size(); ++p) v(static_cast<Index>(p)) = w(pairs[p].first, pairs[p].second);
    const CVector lv = sector_matrix(q) * v;
    for (std::size_t p = 0; p < pairs.size(); ++p) out(pairs[p].first, pairs[p].second) = lv(static_cast<Index>(p));
  }
  return to_computational(out);
}

std::vector<std::pair<int, int>> Superoperator::sector_basis(int q) const {
  std::vector<std::pair<int, int>> pairs;
  const int d = static_cast<int>(dim());
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      if (number_[static_cast<std::size_t>(a)] - number_[static_cast<std::size_t>(b)] == q) pairs.emplace_back(a, b);
  return pairs;
}

CMatrix Superoperator::sector_matrix(int q) const {
  const auto pairs = sector_basis(q);
  if (pairs.size() > kMaxSectorDim) {
    std::ostringstream msg;
    msg << "coherence sector q=" << q << " has dimension " << pairs.size() << " (limit " << kMaxSectorDim << ")";
    throw CapacityError(msg.str());
  }
  const auto n = static_cast<Index>(pairs.size());
  CMatrix m = CMatrix::Zero(n, n);
  for (const auto& t : terms_) {
    for (Index r = 0; r < n; ++r) {
      const auto [i, j] = pairs[static_cast<std::size_t>(r)];
      for (Index c = 0; c < n; ++c) {
        const auto [k, l] = pairs[static_cast<std::size_t>(c)];
        const Complex x = t.left(i, k);
        if (x == Complex(0.0)) continue;
        m(r, c) += x * t.right(l, j);
      }
    }
  }
  if (secular_window_ >= 0.0) {
    for (Index r = 0; r < n; ++r) {
      const auto [i, j] = pairs[static_cast<std::size_t>(r)];
      for (Index c = 0; c < n; ++c) {
        const auto [k, l] = pairs[static_cast<std::size_t>(c)];
        const double bohr = (energies_(i) - energies_(j)) - (energies_(k) - energies_(l));
        if (std::abs(bohr) > secular_window_) m(r, c) = 0.0;
      }
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Generators

LindbladGenerator::LindbladGenerator(const HoppingHamiltonian& h, std::vector<double> gamma1,
                                     std::vector<double> gamma2star)
    : gamma1_(std::move(gamma1)), gamma2star_(std::move(gamma2star)) {
  const std::size_t n = h.n_sites();
  if (n > kMaxMasterSites) {
    std::ostringstream msg;
    msg << "master equations are limited to " << kMaxMasterSites << " qubits, got " << n;
    throw CapacityError(msg.str());
  }
  if (gamma1_.size() != n || gamma2star_.size() != n)
    throw std::invalid_argument("LindbladGenerator: one rate per qubit required");
  for (std::size_t i = 0; i < n; ++i)
    if (gamma1_[i] < 0.0 || gamma2star_[i] < 0.0)
      throw std::invalid_argument("LindbladGenerator: rates must be nonnegative");

  const auto d = static_cast<Index>(hilbert_dim(n));
  std::vector<int> number(static_cast<std::size_t>(d));
  for (std::size_t s = 0; s < number.size(); ++s) number[s] = popcount(s);
  set_basis(CMatrix::Identity(d, d), std::move(number), n);

  hamiltonian_ = dense(spin_hamiltonian(h));
  const CMatrix id = CMatrix::Identity(d, d);
  CMatrix left = -kI * hamiltonian_;
  CMatrix right = kI * hamiltonian_;
  for (std::size_t i = 0; i < n; ++i) {
    if (gamma2star_[i] > 0.0) {
      const CMatrix sz = dense(sigma_z(i, n));
      add_term(0.5 * gamma2star_[i] * sz, sz);
      left -= 0.5 * gamma2star_[i] * id;
    }
    if (gamma1_[i] > 0.0) {
      const CMatrix sm = dense(sigma_minus(i, n));
      const CMatrix num = sm.adjoint() * sm;
      add_term(gamma1_[i] * sm, sm.adjoint());
      left -= 0.5 * gamma1_[i] * num;
      right -= 0.5 * gamma1_[i] * num;
    }
  }
  add_term(left, id);
  add_term(id, right);
}

NoiseSpectrum ohmic_noise_spectrum(const OhmicBath& bath) {
  return [bath](double w) { return 0.5 * (power_spectral_density(bath, w) + spectral_function(bath, w)); };
}

BlochRedfieldGenerator::BlochRedfieldGenerator(const HoppingHamiltonian& h, const std::vector<NoiseSpectrum>& spectra,
                                               RedfieldOptions options) {
  const std::size_t n = h.n_sites();
  if (n > kMaxMasterSites) {
    std::ostringstream msg;
    msg << "Bloch-Redfield is limited to " << kMaxMasterSites << " qubits, got " << n;
    throw CapacityError(msg.str());
  }
  if (spectra.size() != n) throw std::invalid_argument("BlochRedfieldGenerator: one spectrum per qubit required");

  // Diagonalise within each particle-number sector so every eigenstate keeps a definite number.
  const CMatrix hq = dense(spin_hamiltonian(h));
  const auto d = static_cast<Index>(hilbert_dim(n));
  CMatrix u = CMatrix::Zero(d, d);
  energies_ = RVector::Zero(d);
  std::vector<int> number;
  Index col = 0;
  for (int m = 0; m <= static_cast<int>(n); ++m) {
    std::vector<Index> states;
    for (Index s = 0; s < d; ++s)
      if (popcount(static_cast<std::size_t>(s)) == m) states.push_back(s);
    const auto k = static_cast<Index>(states.size());
    CMatrix block(k, k);
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b) block(a, b) = hq(states[static_cast<std::size_t>(a)], states[static_cast<std::size_t>(b)]);
    const EigenDecomposition eig = diagonalize_hermitian(block);
    for (Index e = 0; e < k; ++e, ++col) {
      energies_(col) = eig.energies(e);
      for (Index a = 0; a < k; ++a) u(states[static_cast<std::size_t>(a)], col) = eig.transform(a, e);
      number.push_back(m);
    }
  }
  set_basis(u, std::move(number), n);

  const CMatrix hw = energies_.cast<Complex>().asDiagonal();
  CMatrix left = -kI * hw;
  CMatrix right = kI * hw;
  for (std::size_t i = 0; i < n; ++i) {
    const CMatrix a = to_working(dense(number_operator(i, n)));
    CMatrix lambda = CMatrix::Zero(d, d);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < d; ++c)
        if (std::abs(a(r, c)) > 1e-14) lambda(r, c) = a(r, c) * 0.5 * spectra[i](energies_(c) - energies_(r));
    left -= a * lambda;
    right -= lambda.adjoint() * a;
    add_term(lambda, a);
    add_term(a, lambda.adjoint());
  }
  add_term(left, CMatrix::Identity(d, d));
  add_term(CMatrix::Identity(d, d), right);
  if (options.secular) set_secular(energies_, options.secular_window);
}

BlochRedfieldGenerator bloch_redfield_generator(const HoppingHamiltonian& h, const std::vector<OhmicBath>& baths,
                                                RedfieldOptions options) {
  std::vector<NoiseSpectrum> spectra;
  for (const auto& b : baths) spectra.push_back(ohmic_noise_spectrum(b));
  return BlochRedfieldGenerator(h, spectra, options);
}

// ---------------------------------------------------------------------------
// Evolution

void validate_density_matrix(const CMatrix& rho, double tol) {
  if (rho.rows() == 0 || rho.rows() != rho.cols()) throw std::invalid_argument("density matrix must be square");
  if (max_abs(rho - rho.adjoint()) > tol) throw std::invalid_argument("density matrix must be hermitian");
  if (std::abs(rho.trace() - Complex(1.0)) > tol) throw std::invalid_argument("density matrix must have unit trace");
  const CMatrix herm = 0.5 * (rho + rho.adjoint());
  const Eigen::SelfAdjointEigenSolver<CMatrix> es(herm, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol) throw std::invalid_argument("density matrix must be positive semidefinite");
}

namespace {

struct Sector {
  int q;
  std::vector<std::pair<int, int>> pairs;
  CMatrix generator;
};

// Sectors touched by a working-basis matrix.
std::vector<Sector> occupied_sectors(const Superoperator& gen, const CMatrix& w) {
  std::vector<Sector> out;
  const int n = static_cast<int>(gen.n_sites());
  for (int q = -n; q <= n; ++q) {
    auto pairs = gen.sector_basis(q);
    bool any = false;
    for (const auto& [a, b] : pairs)
      if (w(a, b) != Complex(0.0)) {
        any = true;
        break;
      }
    if (any) out.push_back({q, std::move(pairs), gen.sector_matrix(q)});
  }
  return out;
}

CVector gather(const std::vector<std::pair<int, int>>& pairs, const CMatrix& w) {
  CVector v(static_cast<Index>(pairs.size()));
  for (std::size_t p = 0; p < pairs.size(); ++p) v(static_cast<Index>(p)) = w(pairs[p].first, pairs[p].second);
  return v;
}

void scatter(const std::vector<std::pair<int, int>>& pairs, const CVector& v, CMatrix& w) {
  for (std::size_t p = 0; p < pairs.size(); ++p) w(pairs[p].first, pairs[p].second) = v(static_cast<Index>(p));
}

// tr{op Y} for Y given on a sector: sum over (a,b) of op_ba Y_ab.
CVector trace_weights(const std::vector<std::pair<int, int>>& pairs, const CMatrix& op_working) {
  CVector w(static_cast<Index>(pairs.size()));
  for (std::size_t p = 0; p < pairs.size(); ++p) w(static_cast<Index>(p)) = op_working(pairs[p].second, pairs[p].first);
  return w;
}

}  // namespace

CMatrix lindblad_evolve(const Superoperator& gen, const CMatrix& rho0, double t) {
  validate_density_matrix(rho0);
  if (t < 0.0) throw std::invalid_argument("lindblad_evolve: t must be nonnegative");
  const CMatrix w = gen.to_working(rho0);
  CMatrix out = CMatrix::Zero(w.rows(), w.cols());
  for (const auto& s : occupied_sectors(gen, w)) {
    const CMatrix prop = (s.generator * t).exp();
    scatter(s.pairs, prop * gather(s.pairs, w), out);
  }
  return gen.to_computational(out);
}

std::vector<CMatrix> lindblad_trajectory(const Superoperator& gen, const CMatrix& rho0, double dt,
                                         std::size_t n_steps) {
  validate_density_matrix(rho0);
  if (!(dt > 0.0)) throw std::invalid_argument("lindblad_trajectory: dt must be positive");
  const CMatrix w = gen.to_working(rho0);
  const auto sectors = occupied_sectors(gen, w);
  std::vector<CMatrix> props;
  std::vector<CVector> state;
  for (const auto& s : sectors) {
    props.push_back((s.generator * dt).exp());
    state.push_back(gather(s.pairs, w));
  }
  std::vector<CMatrix> out;
  out.reserve(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) {
    CMatrix cur = CMatrix::Zero(w.rows(), w.cols());
    for (std::size_t i = 0; i < sectors.size(); ++i) {
      scatter(sectors[i].pairs, state[i], cur);
      state[i] = props[i] * state[i];
    }
    out.push_back(gen.to_computational(cur));
  }
  return out;
}

Occupations spin_occupations(const std::vector<CMatrix>& rhos, double dt) {
  Occupations out;
  if (rhos.empty()) return out;
  const auto d = static_cast<std::size_t>(rhos.front().rows());
  const auto n = static_cast<std::size_t>(std::countr_zero(d));
  out.per_site.assign(n, std::vector<double>(rhos.size()));
  out.total.assign(rhos.size(), 0.0);
  for (std::size_t k = 0; k < rhos.size(); ++k) {
    out.times.push_back(static_cast<double>(k) * dt);
    for (std::size_t s = 0; s < d; ++s) {
      const double p = rhos[k](static_cast<Index>(s), static_cast<Index>(s)).real();
      for (std::size_t i = 0; i < n; ++i)
        if (s & site_bit(i, n)) {
          out.per_site[i][k] += p;
          out.total[k] += p;
        }
    }
  }
  return out;
}

CMatrix thermal_state(const HoppingHamiltonian& h, InverseTemperature beta) {
  const CMatrix hq = dense(spin_hamiltonian(h));
  const Eigen::SelfAdjointEigenSolver<CMatrix> es(hq);
  const RVector& e = es.eigenvalues();
  const double e0 = e.minCoeff();
  RVector p(e.size());
  for (Index k = 0; k < e.size(); ++k) {
    if (beta.is_infinite())
      p(k) = (e(k) - e0 < 1e-10) ? 1.0 : 0.0;
    else
      p(k) = std::exp(-beta.beta() * (e(k) - e0));
  }
  p /= p.sum();
  const CMatrix v = es.eigenvectors();
  CMatrix rho = v * p.cast<Complex>().asDiagonal() * v.adjoint();
  return 0.5 * (rho + rho.adjoint());
}

CMatrix steady_state(const Superoperator& gen, const CMatrix& rho0, double warmup_time, Diagnostics* diag,
                     double tol) {
  CMatrix rho = lindblad_evolve(gen, rho0, warmup_time);
  rho = 0.5 * (rho + rho.adjoint());
  const double residual = max_abs(gen.apply(rho));
  if (residual > tol) {
    std::ostringstream msg;
    msg << "steady_state: |L rho| = " << residual << " after warmup " << warmup_time;
    warn_to(diag, msg.str());
  }
  return rho;
}

CMatrix steady_state_nullspace(const Superoperator& gen) {
  const auto pairs = gen.sector_basis(0);
  CMatrix m = gen.sector_matrix(0);
  CVector rhs = CVector::Zero(m.rows());
  for (std::size_t p = 0; p < pairs.size(); ++p) m(0, static_cast<Index>(p)) = pairs[p].first == pairs[p].second ? 1.0 : 0.0;
  rhs(0) = 1.0;
  const Eigen::FullPivLU<CMatrix> lu(m);
  if (lu.rank() < m.rows()) throw SingularityError("steady_state_nullspace: steady state is not unique");
  CMatrix w = CMatrix::Zero(static_cast<Index>(gen.dim()), static_cast<Index>(gen.dim()));
  scatter(pairs, lu.solve(rhs), w);
  const CMatrix rho = gen.to_computational(w);
  return 0.5 * (rho + rho.adjoint());
}

RegressionResult regression_correlator(const Superoperator& gen, const CMatrix& rho, const CMatrix& a,
                                       const CMatrix& b, const std::vector<double>& tau_grid) {
  RegressionResult out;
  out.tau = tau_grid;
  const CMatrix aw = gen.to_working(a);
  const CMatrix bw = gen.to_working(b);
  const CMatrix rw = gen.to_working(rho);

  auto series = [&](const CMatrix& seed, const CMatrix& observable) {
    std::vector<Complex> values;
    auto sectors = occupied_sectors(gen, seed);
    std::vector<CVector> state, weights;
    for (const auto& s : sectors) {
      state.push_back(gather(s.pairs, seed));
      weights.push_back(trace_weights(s.pairs, observable));
    }
    std::map<double, std::vector<CMatrix>> props;  // reuse propagators for repeated steps
    double prev = 0.0;
    for (double tau : tau_grid) {
      if (tau < prev) throw std::invalid_argument("regression_correlator: tau grid must be nondecreasing from 0");
      const double step = tau - prev;
      if (step > 0.0) {
        auto it = props.find(step);
        if (it == props.end()) {
          std::vector<CMatrix> p;
          for (const auto& s : sectors) p.push_back((s.generator * step).exp());
          it = props.emplace(step, std::move(p)).first;
        }
        for (std::size_t i = 0; i < sectors.size(); ++i) state[i] = it->second[i] * state[i];
      }
      Complex v = 0.0;
      for (std::size_t i = 0; i < sectors.size(); ++i) v += (weights[i].transpose() * state[i])(0);
      values.push_back(v);
      prev = tau;
    }
    return values;
  };
  out.forward = series(bw * rw, aw);
  out.backward = series(rw * aw, bw);
  return out;
}

// ---------------------------------------------------------------------------
// Spin-side Green's functions

namespace {

// Solves (z - H) Y = B for upper-Hessenberg H with partial pivoting between neighbouring rows.
CMatrix hessenberg_solve(const CMatrix& h, Complex z, CMatrix b) {
  const Index n = h.rows();
  CMatrix m = -h;
  m.diagonal().array() += z;
  for (Index k = 0; k + 1 < n; ++k) {
    if (std::abs(m(k + 1, k)) > std::abs(m(k, k))) {
      m.row(k).segment(k, n - k).swap(m.row(k + 1).segment(k, n - k));
      b.row(k).swap(b.row(k + 1));
    }
    if (m(k, k) == Complex(0.0)) throw SingularityError("qme_greens: singular resolvent");
    const Complex f = m(k + 1, k) / m(k, k);
    if (f == Complex(0.0)) continue;
    m.row(k + 1).segment(k, n - k) -= f * m.row(k).segment(k, n - k);
    b.row(k + 1) -= f * b.row(k);
  }
  if (m(n - 1, n - 1) == Complex(0.0)) throw SingularityError("qme_greens: singular resolvent");
  return m.triangularView<Eigen::Upper>().solve(b);
}

}  // namespace

QmeGreens qme_greens(const Superoperator& gen, std::size_t site_n, std::size_t site_m, const FreqGrid& grid,
                     QmeGreensOptions options, Diagnostics* diag) {
  const std::size_t n_sites = gen.n_sites();
  if (site_n >= n_sites || site_m >= n_sites) throw std::out_of_range("qme_greens: site index out of range");
  if (options.min_rate > 0.0 && options.warmup_time < 10.0 / options.min_rate) {
    std::ostringstream msg;
    msg << "qme_greens: warmup " << options.warmup_time << " shorter than 10 / min rate = " << 10.0 / options.min_rate;
    warn_to(diag, msg.str());
  }

  const auto d = static_cast<Index>(gen.dim());
  CMatrix rho0;
  if (options.initial_state != nullptr) {
    rho0 = *options.initial_state;
  } else {
    rho0 = CMatrix::Zero(d, d);
    rho0(0, 0) = 1.0;
  }
  const CMatrix rho = steady_state(gen, rho0, options.warmup_time, diag);

  QmeGreens out{grid, site_n, site_m, {}, {}, {}, {}, max_abs(gen.apply(rho))};
  const CMatrix rw = gen.to_working(rho);
  const CMatrix cn = gen.to_working(dense(jw_fermion(site_n, n_sites)));
  const CMatrix cm = gen.to_working(dense(jw_fermion(site_m, n_sites)));

  const auto pairs = gen.sector_basis(+1);
  const Eigen::HessenbergDecomposition<CMatrix> hd(gen.sector_matrix(+1));
  const CMatrix q = hd.matrixQ();
  const CMatrix hess = hd.matrixH();

  // Columns: retarded seeds c^dag rho + rho c^dag and Keldysh seeds c^dag rho - rho c^dag, for m then n.
  const CMatrix cm_dag = cm.adjoint();
  const CMatrix cn_dag = cn.adjoint();
  CMatrix seeds(static_cast<Index>(pairs.size()), 4);
  seeds.col(0) = gather(pairs, cm_dag * rw + rw * cm_dag);
  seeds.col(1) = gather(pairs, cm_dag * rw - rw * cm_dag);
  seeds.col(2) = gather(pairs, cn_dag * rw + rw * cn_dag);
  seeds.col(3) = gather(pairs, cn_dag * rw - rw * cn_dag);
  const CMatrix rotated = q.adjoint() * seeds;
  // Observables: c_n pairs with the m seeds, c_m with the n seeds.
  const CVector wn = q.transpose() * trace_weights(pairs, cn);
  const CVector wm = q.transpose() * trace_weights(pairs, cm);

  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Complex z(grid.eta(), -grid[k]);  // int_0^inf e^{(i w - eta) tau} e^{L tau} = (z - L)^{-1}
    const CMatrix y = hessenberg_solve(hess, z, rotated);
    const Complex ret_nm = -kI * (wn.transpose() * y.col(0))(0);
    const Complex kel_nm = -kI * (wn.transpose() * y.col(1))(0);
    const Complex ret_mn = -kI * (wm.transpose() * y.col(2))(0);
    const Complex kel_mn = -kI * (wm.transpose() * y.col(3))(0);
    const Complex adv_nm = std::conj(ret_mn);
    out.retarded.push_back(ret_nm);
    out.advanced.push_back(adv_nm);
    out.keldysh.push_back(kel_nm - std::conj(kel_mn));
    out.spectral.push_back(kI * (ret_nm - adv_nm));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Qubits + TLS in the single-excitation sector

Occupations exact_tls_evolve(const HoppingHamiltonian& h, const std::vector<TlsBath>& baths, const InitialState& ini,
                             double dt, std::size_t n_steps) {
  const std::size_t n = h.n_sites();
  if (baths.size() != n) throw std::invalid_argument("exact_tls_evolve: one TLS bath per qubit required");
  if (ini.n_sites() != n) throw std::invalid_argument("exact_tls_evolve: initial state size mismatch");
  if (!(dt > 0.0)) throw std::invalid_argument("exact_tls_evolve: dt must be positive");
  std::size_t spins = n;
  for (const auto& b : baths) spins += b.levels().size();
  if (spins > kMaxTlsSpins) {
    std::ostringstream msg;
    msg << "exact_tls_evolve: " << spins << " spins exceed the limit of " << kMaxTlsSpins;
    throw CapacityError(msg.str());
  }

  const CMatrix f = ini.occupation();
  const double filling = f.trace().real();
  if (max_abs(f * f - f) > 1e-10 || !(std::abs(filling) < 1e-10 || std::abs(filling - 1.0) < 1e-10))
    throw std::invalid_argument("exact_tls_evolve: initial state must be the vacuum or a single excitation");

  const auto dim = static_cast<Index>(spins);
  CMatrix hs = CMatrix::Zero(dim, dim);
  hs.topLeftCorner(static_cast<Index>(n), static_cast<Index>(n)) = h.matrix();
  Index idx = static_cast<Index>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& l : baths[i].levels()) {
      hs(idx, idx) = l.energy;
      hs(static_cast<Index>(i), idx) = l.coupling;
      hs(idx, static_cast<Index>(i)) = l.coupling;
      ++idx;
    }
  CMatrix rho = CMatrix::Zero(dim, dim);
  rho.topLeftCorner(static_cast<Index>(n), static_cast<Index>(n)) = f;

  const EigenDecomposition eig = diagonalize_hermitian(hs);
  const CMatrix& u = eig.transform;
  const CMatrix rho_eig = u.adjoint() * rho * u;

  Occupations out;
  out.per_site.assign(n, std::vector<double>(n_steps + 1));
  out.total.assign(n_steps + 1, 0.0);
  CVector phase(dim);
  for (std::size_t k = 0; k <= n_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    out.times.push_back(t);
    for (Index e = 0; e < dim; ++e) phase(e) = std::exp(-kI * eig.energies(e) * t);
    const CMatrix evolved = phase.asDiagonal() * rho_eig * phase.conjugate().asDiagonal();
    const CMatrix rt = u * evolved * u.adjoint();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = rt(static_cast<Index>(i), static_cast<Index>(i)).real();
      out.per_site[i][k] = v;
      out.total[k] += v;
    }
  }
  return out;
}

}  // namespace kqs
