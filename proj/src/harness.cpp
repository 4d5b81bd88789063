#include "kqs/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <Eigen/Core>

#include "kqs/keldysh_steady.hpp"
#include "kqs/qme.hpp"

#ifndef KQS_PRESET_DIR
#define KQS_PRESET_DIR "presets"
#endif

namespace kqs::harness {

using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

// ---------------------------------------------------------------- enums

const std::vector<std::pair<Engine, std::string>> kEngineNames = {
    {Engine::keldysh, "keldysh"},   {Engine::ideal, "ideal"},
    {Engine::kbe, "kbe"},           {Engine::lindblad, "lindblad"},
    {Engine::blochredfield, "blochredfield"}, {Engine::exact_tls, "exact_tls"}};

Engine engine_from_string(const std::string& s, const std::string& field) {
  for (const auto& [e, n] : kEngineNames)
    if (n == s) return e;
  throw ConfigError(field, "unknown engine '" + s + "'");
}

// ---------------------------------------------------------------- json helpers

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
  }
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const json& need(const json& j, const std::string& path, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(join(path, key), "missing");
  return j.at(key);
}

double number(const json& v, const std::string& field) {
  if (!v.is_number()) throw ConfigError(field, "must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(field, "must be finite");
  return x;
}

double number_at(const json& j, const std::string& path, const std::string& key) {
  return number(need(j, path, key), join(path, key));
}

double number_or(const json& j, const std::string& path, const std::string& key, double fallback) {
  return j.contains(key) ? number(j.at(key), join(path, key)) : fallback;
}

std::size_t count(const json& v, const std::string& field, std::size_t min_value) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(field, "must be an integer");
  const auto x = v.get<long long>();
  if (x < static_cast<long long>(min_value)) throw ConfigError(field, "must be >= " + std::to_string(min_value));
  return static_cast<std::size_t>(x);
}

std::string string_at(const json& j, const std::string& path, const std::string& key) {
  const json& v = need(j, path, key);
  if (!v.is_string()) throw ConfigError(join(path, key), "must be a string");
  return v.get<std::string>();
}

void require(bool condition, const std::string& field, const std::string& message) {
  if (!condition) throw ConfigError(field, message);
}

std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return static_cast<std::size_t>(std::llround(r));
}

bool uses(const ExperimentConfig& c, Engine e) { return std::find(c.engines.begin(), c.engines.end(), e) != c.engines.end(); }

// ---------------------------------------------------------------- parsing

SystemSpec parse_system(const json& j) {
  check_keys(j, "system", {"n_sites", "onsite", "hopping", "boundary"});
  SystemSpec s;
  s.n_sites = count(need(j, "system", "n_sites"), "system.n_sites", 1);
  s.onsite = number_or(j, "system", "onsite", 0.0);
  s.hopping = number_or(j, "system", "hopping", 1.0);
  const std::string b = j.contains("boundary") ? string_at(j, "system", "boundary") : "periodic";
  if (b == "open") s.boundary = Boundary::open;
  else if (b == "periodic") s.boundary = Boundary::periodic;
  else throw ConfigError("system.boundary", "must be 'open' or 'periodic'");
  return s;
}

BathSpec parse_bath(const json& j) {
  if (!j.is_object()) throw ConfigError("bath", "must be an object");
  const std::string kind = string_at(j, "bath", "kind");
  BathSpec b;
  if (kind == "ohmic") {
    check_keys(j, "bath", {"kind", "alpha", "dephasing_rate", "cutoff", "temperature"});
    b.kind = BathKind::ohmic;
    b.cutoff = number_at(j, "bath", "cutoff");
    b.temperature = number_at(j, "bath", "temperature");
    require(b.cutoff > 0.0, "bath.cutoff", "must be positive");
    require(b.temperature >= 0.0, "bath.temperature", "must be nonnegative");
    const bool has_alpha = j.contains("alpha");
    const bool has_rate = j.contains("dephasing_rate");
    require(has_alpha != has_rate, "bath.alpha", "give exactly one of alpha or dephasing_rate");
    if (has_alpha) {
      b.alpha = number_at(j, "bath", "alpha");
      require(b.alpha >= 0.0, "bath.alpha", "must be nonnegative");
    } else {
      b.dephasing_rate = number_at(j, "bath", "dephasing_rate");
      require(*b.dephasing_rate >= 0.0, "bath.dephasing_rate", "must be nonnegative");
      require(b.temperature > 0.0, "bath.temperature", "must be positive when dephasing_rate sets alpha");
      b.alpha = 2.0 * *b.dephasing_rate / b.temperature;
    }
  } else if (kind == "tls") {
    check_keys(j, "bath", {"kind", "rate", "tls_per_site", "band", "smearing", "temperature"});
    b.kind = BathKind::tls;
    b.rate = number_at(j, "bath", "rate");
    require(b.rate >= 0.0, "bath.rate", "must be nonnegative");
    b.tls_per_site = count(need(j, "bath", "tls_per_site"), "bath.tls_per_site", 1);
    const json& band = need(j, "bath", "band");
    require(band.is_array() && band.size() == 2, "bath.band", "must be [low, high]");
    b.band = {number(band[0], "bath.band[0]"), number(band[1], "bath.band[1]")};
    require(b.band.first > 0.0, "bath.band[0]", "TLS energies must be positive");
    require(b.band.second >= b.band.first, "bath.band[1]", "must be >= band[0]");
    b.smearing = number_at(j, "bath", "smearing");
    require(b.smearing > 0.0, "bath.smearing", "must be positive");
    b.temperature = number_or(j, "bath", "temperature", 0.0);
    require(b.temperature >= 0.0, "bath.temperature", "must be nonnegative");
    require(b.temperature <= b.band.first / 10.0, "bath.temperature", "must not exceed band[0] / 10 (low-temperature TLS bath)");
  } else if (kind == "wideband") {
    check_keys(j, "bath", {"kind", "rate"});
    b.kind = BathKind::wideband;
    b.rate = number_at(j, "bath", "rate");
    require(b.rate >= 0.0, "bath.rate", "must be nonnegative");
  } else {
    throw ConfigError("bath.kind", "must be 'ohmic', 'tls' or 'wideband'");
  }
  return b;
}

FreqGridSpec parse_freq(const json& j) {
  check_keys(j, "frequency_grid", {"min", "max", "points", "eta"});
  FreqGridSpec g;
  g.min = number_at(j, "frequency_grid", "min");
  g.max = number_at(j, "frequency_grid", "max");
  g.points = count(need(j, "frequency_grid", "points"), "frequency_grid.points", 3);
  require(g.max > g.min, "frequency_grid.max", "must exceed min");
  if (j.contains("eta")) {
    g.eta = number_at(j, "frequency_grid", "eta");
    const double spacing = (g.max - g.min) / static_cast<double>(g.points - 1);
    require(*g.eta >= 2.0 * spacing * (1.0 - 1e-12), "frequency_grid.eta", "must be at least two grid spacings");
  }
  return g;
}

TimeGridSpec parse_time(const json& j) {
  check_keys(j, "time_grid", {"t_max", "dt", "save_stride"});
  TimeGridSpec t;
  t.t_max = number_at(j, "time_grid", "t_max");
  t.dt = number_at(j, "time_grid", "dt");
  require(t.t_max > 0.0, "time_grid.t_max", "must be positive");
  require(t.dt > 0.0, "time_grid.dt", "must be positive");
  require(t.dt <= t.t_max, "time_grid.dt", "must not exceed t_max");
  if (j.contains("save_stride")) t.save_stride = count(j.at("save_stride"), "time_grid.save_stride", 1);
  return t;
}

InitialSpec parse_initial(const json& j) {
  check_keys(j, "initial_state", {"kind", "site", "temperature"});
  InitialSpec s;
  const std::string kind = string_at(j, "initial_state", "kind");
  if (kind == "thermal") s.kind = InitialKind::thermal;
  else if (kind == "vacuum") s.kind = InitialKind::vacuum;
  else if (kind == "single_excitation") s.kind = InitialKind::single_excitation;
  else throw ConfigError("initial_state.kind", "must be 'thermal', 'vacuum' or 'single_excitation'");
  if (j.contains("site")) s.site = count(j.at("site"), "initial_state.site", 0);
  if (j.contains("temperature")) {
    s.temperature = number_at(j, "initial_state", "temperature");
    require(*s.temperature >= 0.0, "initial_state.temperature", "must be nonnegative");
  }
  return s;
}

Tolerances parse_tolerances(const json& j) {
  check_keys(j, "tolerances", {"peak_position", "fwhm_relative", "trajectory"});
  Tolerances t;
  if (j.contains("peak_position")) {
    const json& v = j.at("peak_position");
    t.check_positions = true;
    if (v.is_string()) {
      require(v.get<std::string>() == "grid_spacing", "tolerances.peak_position", "must be a number or 'grid_spacing'");
    } else {
      t.peak_position = number(v, "tolerances.peak_position");
      require(*t.peak_position >= 0.0, "tolerances.peak_position", "must be nonnegative");
    }
  }
  if (j.contains("fwhm_relative")) {
    t.fwhm_relative = number_at(j, "tolerances", "fwhm_relative");
    require(*t.fwhm_relative >= 0.0, "tolerances.fwhm_relative", "must be nonnegative");
  }
  if (j.contains("trajectory")) {
    t.trajectory = number_at(j, "tolerances", "trajectory");
    require(*t.trajectory >= 0.0, "tolerances.trajectory", "must be nonnegative");
  }
  return t;
}

double initial_temperature(const ExperimentConfig& c) {
  if (c.initial.temperature) return *c.initial.temperature;
  return c.bath.kind == BathKind::wideband ? 0.0 : c.bath.temperature;
}

// Cross-field checks against the preconditions of the engines that will run.
void validate(const ExperimentConfig& c) {
  const bool spectral = c.mode == Mode::spectral;
  std::size_t max_sites = c.system.n_sites;
  std::size_t min_sites = c.system.n_sites;
  if (c.sweep && c.sweep->parameter == "n_sites")
    for (double v : c.sweep->values) {
      max_sites = std::max(max_sites, static_cast<std::size_t>(v));
      min_sites = std::min(min_sites, static_cast<std::size_t>(v));
    }

  if (spectral) {
    require(c.frequency_grid.has_value(), "frequency_grid", "required in spectral mode");
    require(c.initial.kind == InitialKind::thermal, "initial_state.kind", "spectral mode starts from a thermal state");
  } else {
    require(c.time_grid.has_value(), "time_grid", "required in transient mode");
  }
  for (std::size_t k = 0; k < c.engines.size(); ++k) {
    const std::string field = "engines[" + std::to_string(k) + "]";
    const Engine e = c.engines[k];
    for (std::size_t q = 0; q < k; ++q) require(c.engines[q] != e, field, "listed twice");
    if (spectral)
      require(e == Engine::keldysh || e == Engine::ideal || e == Engine::lindblad || e == Engine::blochredfield, field,
              "engine '" + to_string(e) + "' does not produce steady-state spectra");
    else
      require(e == Engine::kbe || e == Engine::lindblad || e == Engine::exact_tls, field,
              "engine '" + to_string(e) + "' does not produce transients");
    if (e == Engine::blochredfield) require(c.bath.kind == BathKind::ohmic, field, "blochredfield needs an ohmic bath");
    if (e == Engine::exact_tls) {
      require(c.bath.kind == BathKind::tls, field, "exact_tls needs a tls bath");
      require(c.initial.kind != InitialKind::thermal, "initial_state.kind",
              "exact_tls supports vacuum or single_excitation only");
      require(max_sites * (1 + c.bath.tls_per_site) <= kMaxTlsSpins, "bath.tls_per_site",
              "qubits plus TLS exceed " + std::to_string(kMaxTlsSpins) + " spins");
    }
    if (e == Engine::kbe) require(c.bath.kind != BathKind::ohmic, field, "kbe supports tls or wideband baths");
    if (e == Engine::lindblad || e == Engine::blochredfield) {
      require(max_sites <= kMaxMasterSites, "system.n_sites",
              "master equations are limited to " + std::to_string(kMaxMasterSites) + " qubits");
      const std::size_t sector = binomial(2 * max_sites, max_sites);
      require(sector <= kMaxSectorDim, "system.n_sites",
              "coherence sector dimension " + std::to_string(sector) + " exceeds " + std::to_string(kMaxSectorDim));
    }
  }
  require(!c.engines.empty(), "engines", "at least one engine is required");
  if (c.initial.kind == InitialKind::single_excitation)
    require(c.initial.site < min_sites, "initial_state.site", "out of range");
  if (spectral) {
    for (std::size_t k = 0; k < c.pairs.size(); ++k) {
      const std::string field = "pairs[" + std::to_string(k) + "]";
      require(c.pairs[k].first < min_sites && c.pairs[k].second < min_sites, field, "site index out of range");
    }
  }
  if (c.sweep) {
    if (c.sweep->parameter == "dephasing_rate") {
      require(c.bath.kind == BathKind::ohmic && c.bath.temperature > 0.0, "sweep.parameter",
              "dephasing_rate sweeps need an ohmic bath at positive temperature");
      for (double v : c.sweep->values) require(v >= 0.0, "sweep.values", "rates must be nonnegative");
    } else if (c.sweep->parameter == "n_sites") {
      for (double v : c.sweep->values)
        require(v >= 1.0 && v == std::floor(v), "sweep.values", "site counts must be positive integers");
    } else {
      throw ConfigError("sweep.parameter", "must be 'dephasing_rate' or 'n_sites'");
    }
    require(!c.sweep->values.empty(), "sweep.values", "must not be empty");
  }
  require(c.warmup_time >= 0.0, "warmup_time", "must be nonnegative");

  // Step-size guard of the KBE solver, evaluated on the actual (seeded) baths.
  if (!spectral && uses(c, Engine::kbe)) {
    for (const auto& v : expand_sweep(c)) {
      const auto h = make_hamiltonian(v.config);
      KbeSelfEnergy sigma = v.config.bath.kind == BathKind::wideband
                                ? KbeSelfEnergy(markov_self_energy(std::vector<double>(h.n_sites(), v.config.bath.rate)))
                                : KbeSelfEnergy(tls_memory_self_energy(make_tls_baths(v.config)));
      const double limit = kbe_step_limit(h, sigma);
      std::ostringstream msg;
      msg << "too large for the KBE solver; use dt <= " << limit;
      require(c.time_grid->dt <= limit, "time_grid.dt", msg.str());
    }
  }
}

// ---------------------------------------------------------------- misc helpers

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string sanitize(std::string s) {
  for (char& ch : s)
    if (ch == '=') ch = '-';
  return s;
}

std::vector<double> real_parts(const std::vector<Complex>& v) {
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& z : v) out.push_back(z.real());
  return out;
}

std::vector<double> distinct_levels(const HoppingHamiltonian& h) {
  const auto e = diagonalize(h).energies;
  std::vector<double> out;
  for (Eigen::Index k = 0; k < e.size(); ++k)
    if (out.empty() || e(k) - out.back() > 1e-9) out.push_back(e(k));
  return out;
}

CMatrix spin_initial_state(const ExperimentConfig& c, const HoppingHamiltonian& h) {
  const std::size_t n = h.n_sites();
  const auto dim = static_cast<Eigen::Index>(std::size_t{1} << n);
  switch (c.initial.kind) {
    case InitialKind::vacuum: {
      CMatrix rho = CMatrix::Zero(dim, dim);
      rho(0, 0) = 1.0;
      return rho;
    }
    case InitialKind::single_excitation: {
      CMatrix rho = CMatrix::Zero(dim, dim);
      const auto idx = static_cast<Eigen::Index>(std::size_t{1} << (n - 1 - c.initial.site));
      rho(idx, idx) = 1.0;
      return rho;
    }
    case InitialKind::thermal:
      break;
  }
  return thermal_state(h, InverseTemperature::from_temperature(initial_temperature(c)));
}

Occupations subsample(const Occupations& o, std::size_t stride) {
  if (stride <= 1) return o;
  Occupations out;
  out.per_site.resize(o.per_site.size());
  for (std::size_t k = 0; k < o.times.size(); k += stride) {
    out.times.push_back(o.times[k]);
    out.total.push_back(o.total[k]);
    for (std::size_t i = 0; i < o.per_site.size(); ++i) out.per_site[i].push_back(o.per_site[i][k]);
  }
  return out;
}

std::string iso_time_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

}  // namespace

// ---------------------------------------------------------------- public: names, config

std::string to_string(Engine e) {
  for (const auto& [k, n] : kEngineNames)
    if (k == e) return n;
  return "?";
}

std::string to_string(BathKind k) {
  switch (k) {
    case BathKind::ohmic: return "ohmic";
    case BathKind::tls: return "tls";
    case BathKind::wideband: return "wideband";
  }
  return "?";
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, "", {"version", "name", "description", "mode", "system", "bath", "engines", "frequency_grid",
                     "time_grid", "initial_state", "pairs", "warmup_time", "master_equation", "sweep", "seed",
                     "output_dir", "tolerances"});
  ExperimentConfig c;
  const std::size_t version = count(need(j, "", "version"), "version", 1);
  require(version == kConfigVersion, "version", "unsupported config version " + std::to_string(version));
  c.name = string_at(j, "", "name");
  require(!c.name.empty(), "name", "must not be empty");
  if (j.contains("description")) c.description = string_at(j, "", "description");
  const std::string mode = string_at(j, "", "mode");
  if (mode == "spectral") c.mode = Mode::spectral;
  else if (mode == "transient") c.mode = Mode::transient;
  else throw ConfigError("mode", "must be 'spectral' or 'transient'");
  c.system = parse_system(need(j, "", "system"));
  c.bath = parse_bath(need(j, "", "bath"));

  const json& engines = need(j, "", "engines");
  require(engines.is_array(), "engines", "must be an array");
  for (std::size_t k = 0; k < engines.size(); ++k) {
    const std::string field = "engines[" + std::to_string(k) + "]";
    require(engines[k].is_string(), field, "must be a string");
    c.engines.push_back(engine_from_string(engines[k].get<std::string>(), field));
  }
  if (j.contains("frequency_grid")) c.frequency_grid = parse_freq(j.at("frequency_grid"));
  if (j.contains("time_grid")) c.time_grid = parse_time(j.at("time_grid"));
  if (j.contains("initial_state")) c.initial = parse_initial(j.at("initial_state"));
  if (j.contains("pairs")) {
    const json& p = j.at("pairs");
    require(p.is_array() && !p.empty(), "pairs", "must be a nonempty array of [n, m]");
    c.pairs.clear();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const std::string field = "pairs[" + std::to_string(k) + "]";
      require(p[k].is_array() && p[k].size() == 2, field, "must be [n, m]");
      c.pairs.emplace_back(count(p[k][0], field, 0), count(p[k][1], field, 0));
    }
  }
  c.warmup_time = number_or(j, "", "warmup_time", 0.0);
  if (j.contains("master_equation")) {
    const json& m = j.at("master_equation");
    check_keys(m, "master_equation", {"gamma1", "gamma2star"});
    if (m.contains("gamma1")) {
      c.gamma1_override = number_at(m, "master_equation", "gamma1");
      require(*c.gamma1_override >= 0.0, "master_equation.gamma1", "must be nonnegative");
    }
    if (m.contains("gamma2star")) {
      c.gamma2star_override = number_at(m, "master_equation", "gamma2star");
      require(*c.gamma2star_override >= 0.0, "master_equation.gamma2star", "must be nonnegative");
    }
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    check_keys(s, "sweep", {"parameter", "values"});
    Sweep sw;
    sw.parameter = string_at(s, "sweep", "parameter");
    const json& vals = need(s, "sweep", "values");
    require(vals.is_array(), "sweep.values", "must be an array");
    for (std::size_t k = 0; k < vals.size(); ++k) sw.values.push_back(number(vals[k], "sweep.values[" + std::to_string(k) + "]"));
    c.sweep = sw;
  }
  if (j.contains("seed")) {
    const json& s = j.at("seed");
    require(s.is_number_unsigned() || (s.is_number_integer() && s.get<long long>() >= 0), "seed",
            "must be a nonnegative integer");
    c.seed = s.get<std::uint64_t>();
  }
  if (j.contains("output_dir")) c.output_dir = string_at(j, "", "output_dir");
  if (j.contains("tolerances")) c.tolerances = parse_tolerances(j.at("tolerances"));
  validate(c);
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["version"] = kConfigVersion;
  j["name"] = name;
  if (!description.empty()) j["description"] = description;
  j["mode"] = mode == Mode::spectral ? "spectral" : "transient";
  j["system"] = {{"n_sites", system.n_sites},
                 {"onsite", system.onsite},
                 {"hopping", system.hopping},
                 {"boundary", system.boundary == Boundary::open ? "open" : "periodic"}};
  json b;
  b["kind"] = to_string(bath.kind);
  switch (bath.kind) {
    case BathKind::ohmic:
      if (bath.dephasing_rate) b["dephasing_rate"] = *bath.dephasing_rate;
      else b["alpha"] = bath.alpha;
      b["cutoff"] = bath.cutoff;
      b["temperature"] = bath.temperature;
      break;
    case BathKind::tls:
      b["rate"] = bath.rate;
      b["tls_per_site"] = bath.tls_per_site;
      b["band"] = {bath.band.first, bath.band.second};
      b["smearing"] = bath.smearing;
      b["temperature"] = bath.temperature;
      break;
    case BathKind::wideband:
      b["rate"] = bath.rate;
      break;
  }
  j["bath"] = b;
  j["engines"] = json::array();
  for (Engine e : engines) j["engines"].push_back(to_string(e));
  if (frequency_grid) {
    j["frequency_grid"] = {{"min", frequency_grid->min}, {"max", frequency_grid->max}, {"points", frequency_grid->points}};
    if (frequency_grid->eta) j["frequency_grid"]["eta"] = *frequency_grid->eta;
  }
  if (time_grid)
    j["time_grid"] = {{"t_max", time_grid->t_max}, {"dt", time_grid->dt}, {"save_stride", time_grid->save_stride}};
  json ini;
  ini["kind"] = initial.kind == InitialKind::thermal ? "thermal"
                : initial.kind == InitialKind::vacuum ? "vacuum"
                                                      : "single_excitation";
  if (initial.kind == InitialKind::single_excitation) ini["site"] = initial.site;
  if (initial.temperature) ini["temperature"] = *initial.temperature;
  j["initial_state"] = ini;
  j["pairs"] = json::array();
  for (const auto& [n, m] : pairs) j["pairs"].push_back({n, m});
  j["warmup_time"] = warmup_time;
  if (gamma1_override || gamma2star_override) {
    json m = json::object();
    if (gamma1_override) m["gamma1"] = *gamma1_override;
    if (gamma2star_override) m["gamma2star"] = *gamma2star_override;
    j["master_equation"] = m;
  }
  if (sweep) j["sweep"] = {{"parameter", sweep->parameter}, {"values", sweep->values}};
  j["seed"] = seed;
  if (!output_dir.empty()) j["output_dir"] = output_dir;
  json t = json::object();
  if (tolerances.check_positions) {
    if (tolerances.peak_position) t["peak_position"] = *tolerances.peak_position;
    else t["peak_position"] = "grid_spacing";
  }
  if (tolerances.fwhm_relative) t["fwhm_relative"] = *tolerances.fwhm_relative;
  if (tolerances.trajectory) t["trajectory"] = *tolerances.trajectory;
  if (!t.empty()) j["tolerances"] = t;
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("<file>", std::string("invalid JSON in ") + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

std::filesystem::path preset_directory() {
  if (const char* env = std::getenv("KQS_PRESET_DIR"); env != nullptr && *env != '\0') return env;
  return KQS_PRESET_DIR;
}

std::vector<std::string> list_presets(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  if (!std::filesystem::is_directory(dir)) return names;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".json") names.push_back(entry.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

ExperimentConfig resolve_config(const std::string& name_or_path) {
  const std::filesystem::path p(name_or_path);
  if (std::filesystem::is_regular_file(p)) return load_config(p);
  const auto preset = preset_directory() / (name_or_path + ".json");
  if (std::filesystem::is_regular_file(preset)) return load_config(preset);
  throw std::runtime_error("no config file or preset named '" + name_or_path + "'");
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string dump = config.to_json().dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<Variant> expand_sweep(const ExperimentConfig& config) {
  if (!config.sweep) return {{"", 0.0, config}};
  std::vector<Variant> out;
  for (double v : config.sweep->values) {
    Variant var{config.sweep->parameter + "=" + format_number(v), v, config};
    var.config.sweep.reset();
    if (config.sweep->parameter == "dephasing_rate") {
      var.config.bath.dephasing_rate = v;
      var.config.bath.alpha = 2.0 * v / config.bath.temperature;
    } else {
      var.config.system.n_sites = static_cast<std::size_t>(v);
    }
    out.push_back(std::move(var));
  }
  return out;
}

// ---------------------------------------------------------------- engine inputs

HoppingHamiltonian make_hamiltonian(const ExperimentConfig& c) {
  return build_chain(c.system.n_sites, c.system.onsite, c.system.hopping, c.system.boundary);
}

FreqGrid make_grid(const ExperimentConfig& c) {
  if (!c.frequency_grid) throw ConfigError("frequency_grid", "missing");
  const auto& g = *c.frequency_grid;
  if (g.eta) return {g.min, g.max, g.points, *g.eta};
  return FreqGrid::with_default_eta(g.min, g.max, g.points);
}

std::vector<OhmicBath> make_ohmic_baths(const ExperimentConfig& c) {
  return std::vector<OhmicBath>(c.system.n_sites, OhmicBath(c.bath.alpha, c.bath.cutoff, c.bath.temperature));
}

std::vector<TlsBath> make_tls_baths(const ExperimentConfig& c) {
  std::vector<TlsBath> out;
  for (std::size_t i = 0; i < c.system.n_sites; ++i)
    out.push_back(sample_tls_bath(c.bath.rate, c.bath.tls_per_site, c.bath.band, c.seed + i, c.bath.smearing,
                                  c.bath.temperature));
  return out;
}

InitialState make_initial_state(const ExperimentConfig& c) {
  const std::size_t n = c.system.n_sites;
  switch (c.initial.kind) {
    case InitialKind::vacuum: return InitialState::vacuum(n);
    case InitialKind::single_excitation: return InitialState::single_excitation(n, c.initial.site);
    case InitialKind::thermal: break;
  }
  return {make_hamiltonian(c).matrix(), InverseTemperature::from_temperature(initial_temperature(c))};
}

QubitRates qubit_rates(const ExperimentConfig& c) {
  const std::size_t n = c.system.n_sites;
  QubitRates r{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  switch (c.bath.kind) {
    case BathKind::ohmic: {
      const OhmicBath b(c.bath.alpha, c.bath.cutoff, c.bath.temperature);
      std::fill(r.gamma2star.begin(), r.gamma2star.end(), b.zero_frequency_noise() / 4.0);
      break;
    }
    case BathKind::wideband:
      std::fill(r.gamma1.begin(), r.gamma1.end(), c.bath.rate);
      break;
    case BathKind::tls: {
      const auto baths = make_tls_baths(c);
      const CMatrix& h = make_hamiltonian(c).matrix();
      for (std::size_t i = 0; i < n; ++i)
        r.gamma1[i] = tls_spectral_density(baths[i], h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)).real(),
                                           c.bath.smearing);
      break;
    }
  }
  if (c.gamma1_override) std::fill(r.gamma1.begin(), r.gamma1.end(), *c.gamma1_override);
  if (c.gamma2star_override) std::fill(r.gamma2star.begin(), r.gamma2star.end(), *c.gamma2star_override);
  return r;
}

// ---------------------------------------------------------------- artifacts

CsvTable SpectralSeries::to_csv() const {
  CsvTable t{{"omega", "retarded_re", "retarded_im", "keldysh_re", "keldysh_im", "spectral_re", "spectral_im"}, {}};
  for (std::size_t k = 0; k < omega.size(); ++k)
    t.add_row({omega[k], retarded[k].real(), retarded[k].imag(), keldysh[k].real(), keldysh[k].imag(),
               spectral[k].real(), spectral[k].imag()});
  return t;
}

SpectralSeries SpectralSeries::from_csv(const CsvTable& t) {
  SpectralSeries s;
  try {
    s.omega = t.column("omega");
    const auto rr = t.column("retarded_re"), ri = t.column("retarded_im");
    const auto kr = t.column("keldysh_re"), ki = t.column("keldysh_im");
    const auto ar = t.column("spectral_re"), ai = t.column("spectral_im");
    for (std::size_t k = 0; k < s.omega.size(); ++k) {
      s.retarded.emplace_back(rr[k], ri[k]);
      s.keldysh.emplace_back(kr[k], ki[k]);
      s.spectral.emplace_back(ar[k], ai[k]);
    }
  } catch (const std::out_of_range& e) {
    throw std::invalid_argument(std::string("spectral schema mismatch: ") + e.what());
  }
  if (s.omega.size() < 2) throw std::invalid_argument("spectral artifact needs at least two rows");
  s.spacing = s.omega[1] - s.omega[0];
  return s;
}

CsvTable Trajectory::to_csv() const {
  CsvTable t;
  t.columns.push_back("time");
  for (std::size_t i = 0; i < occupations.per_site.size(); ++i) t.columns.push_back("n_" + std::to_string(i));
  t.columns.push_back("n_tot");
  for (std::size_t k = 0; k < occupations.times.size(); ++k) {
    std::vector<double> row{occupations.times[k]};
    for (const auto& site : occupations.per_site) row.push_back(site[k]);
    row.push_back(occupations.total[k]);
    t.add_row(std::move(row));
  }
  return t;
}

Trajectory Trajectory::from_csv(const CsvTable& t) {
  Trajectory tr;
  try {
    tr.occupations.times = t.column("time");
    tr.occupations.total = t.column("n_tot");
    for (std::size_t i = 0; t.has_column("n_" + std::to_string(i)); ++i)
      tr.occupations.per_site.push_back(t.column("n_" + std::to_string(i)));
  } catch (const std::out_of_range& e) {
    throw std::invalid_argument(std::string("trajectory schema mismatch: ") + e.what());
  }
  if (tr.occupations.per_site.size() + 2 != t.columns.size())
    throw std::invalid_argument("trajectory schema mismatch: unexpected columns");
  return tr;
}

// ---------------------------------------------------------------- engines

std::vector<SpectralSeries> run_spectral(const ExperimentConfig& c, Engine engine, Diagnostics* diag) {
  const auto h = make_hamiltonian(c);
  const auto grid = make_grid(c);
  const auto beta = InverseTemperature::from_temperature(initial_temperature(c));
  std::vector<SpectralSeries> out;
  auto blank = [&](std::size_t n, std::size_t m) {
    SpectralSeries s;
    s.engine = engine;
    s.site_n = n;
    s.site_m = m;
    s.spacing = grid.spacing();
    s.omega = grid.points();
    return s;
  };

  if (engine == Engine::keldysh || engine == Engine::ideal) {
    const FreqGreens g0 = ideal_greens(h, beta, grid);
    FreqGreens g = g0;
    if (engine == Engine::keldysh) {
      SelfEnergy sigma = SelfEnergy::zero(grid, h.n_sites());
      switch (c.bath.kind) {
        case BathKind::ohmic:
          sigma = dephasing_self_energy(h, make_ohmic_baths(c), beta, grid, diag);
          break;
        case BathKind::tls: {
          std::vector<RelaxationBath> baths;
          for (auto& b : make_tls_baths(c)) baths.emplace_back(std::move(b));
          sigma = tls_embedding_self_energy(baths, grid, c.bath.smearing);
          break;
        }
        case BathKind::wideband:
          sigma = tls_embedding_self_energy(std::vector<RelaxationBath>(h.n_sites(), WideBandBath(c.bath.rate)), grid);
          break;
      }
      g = dyson_solve(g0, sigma);
    }
    for (const auto& [n, m] : c.pairs) {
      SpectralSeries s = blank(n, m);
      const auto ni = static_cast<Eigen::Index>(n), mi = static_cast<Eigen::Index>(m);
      for (std::size_t k = 0; k < grid.size(); ++k) {
        s.retarded.push_back(g.retarded[k](ni, mi));
        s.keldysh.push_back(g.keldysh[k](ni, mi));
        s.spectral.push_back(kI * (g.retarded[k](ni, mi) - g.advanced[k](ni, mi)));
      }
      out.push_back(std::move(s));
    }
    return out;
  }

  if (engine != Engine::lindblad && engine != Engine::blochredfield)
    throw std::invalid_argument("run_spectral: engine '" + to_string(engine) + "' has no spectral output");
  const CMatrix rho0 = spin_initial_state(c, h);
  QmeGreensOptions options;
  options.warmup_time = c.warmup_time;
  options.initial_state = &rho0;
  std::unique_ptr<Superoperator> gen;
  if (engine == Engine::lindblad) {
    const QubitRates r = qubit_rates(c);
    double min_rate = 0.0;
    for (double x : r.gamma1) if (x > 0.0) min_rate = min_rate > 0.0 ? std::min(min_rate, x) : x;
    for (double x : r.gamma2star) if (x > 0.0) min_rate = min_rate > 0.0 ? std::min(min_rate, x) : x;
    options.min_rate = min_rate;
    gen = std::make_unique<LindbladGenerator>(h, r.gamma1, r.gamma2star);
  } else {
    gen = std::make_unique<BlochRedfieldGenerator>(bloch_redfield_generator(h, make_ohmic_baths(c)));
  }
  for (const auto& [n, m] : c.pairs) {
    const QmeGreens q = qme_greens(*gen, n, m, grid, options, diag);
    SpectralSeries s = blank(n, m);
    s.retarded = q.retarded;
    s.keldysh = q.keldysh;
    s.spectral = q.spectral;
    out.push_back(std::move(s));
  }
  return out;
}

Trajectory run_transient(const ExperimentConfig& c, Engine engine, Diagnostics* /*diag*/) {
  if (!c.time_grid) throw ConfigError("time_grid", "missing");
  const auto h = make_hamiltonian(c);
  const auto& tg = *c.time_grid;
  const auto n_steps = static_cast<std::size_t>(std::llround(tg.t_max / tg.dt));
  Trajectory tr;
  tr.engine = engine;
  switch (engine) {
    case Engine::kbe: {
      KbeSelfEnergy sigma = c.bath.kind == BathKind::wideband
                                ? KbeSelfEnergy(markov_self_energy(std::vector<double>(h.n_sites(), c.bath.rate)))
                                : KbeSelfEnergy(tls_memory_self_energy(make_tls_baths(c)));
      const auto g = kbe_integrate(h, sigma, make_initial_state(c), tg.t_max, tg.dt, {tg.save_stride});
      tr.occupations = occupations(g);
      break;
    }
    case Engine::lindblad: {
      const QubitRates r = qubit_rates(c);
      const LindbladGenerator gen(h, r.gamma1, r.gamma2star);
      tr.occupations = spin_occupations(lindblad_trajectory(gen, spin_initial_state(c, h), tg.dt, n_steps), tg.dt);
      break;
    }
    case Engine::exact_tls:
      tr.occupations = exact_tls_evolve(h, make_tls_baths(c), make_initial_state(c), tg.dt, n_steps);
      break;
    default:
      throw std::invalid_argument("run_transient: engine '" + to_string(engine) + "' has no transient output");
  }
  tr.occupations = subsample(tr.occupations, tg.save_stride);
  return tr;
}

// ---------------------------------------------------------------- comparison

std::vector<Extremum> spectral_extrema(const std::vector<double>& x, const std::vector<double>& y,
                                       PeakOptions options) {
  std::vector<Extremum> out;
  double top = 0.0, bottom = 0.0;
  for (double v : y) {
    top = std::max(top, v);
    bottom = std::max(bottom, -v);
  }
  const double scale = std::max(top, bottom);
  if (!(scale > 0.0)) return out;
  if (top > 0.0) {
    PeakOptions o = options;
    o.min_prominence = options.min_prominence * scale / top;
    for (const auto& p : find_peaks(x, y, o))
      if (p.height > 0.0) out.push_back({p.position, p.height, p.fwhm});
  }
  if (bottom > 0.0) {
    std::vector<double> neg(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) neg[k] = -y[k];
    PeakOptions o = options;
    o.min_prominence = options.min_prominence * scale / bottom;
    for (const auto& p : find_peaks(x, neg, o))
      if (p.height > 0.0) out.push_back({p.position, -p.height, p.fwhm});
  }
  std::sort(out.begin(), out.end(), [](const Extremum& a, const Extremum& b) { return a.position < b.position; });
  return out;
}

bool ComparisonReport::passed() const {
  return std::all_of(metrics.begin(), metrics.end(), [](const Metric& m) { return m.passed(); });
}

void ComparisonReport::append(const ComparisonReport& other) {
  metrics.insert(metrics.end(), other.metrics.begin(), other.metrics.end());
  notes.insert(notes.end(), other.notes.begin(), other.notes.end());
}

json ComparisonReport::to_json() const {
  json j;
  j["passed"] = passed();
  j["metrics"] = json::array();
  for (const auto& m : metrics) {
    json e{{"observable", m.observable}, {"artifact_a", m.artifact_a}, {"artifact_b", m.artifact_b},
           {"metric", m.name}};
    e["value"] = std::isfinite(m.value) ? json(m.value) : json(nullptr);
    e["tolerance"] = m.tolerance ? json(*m.tolerance) : json(nullptr);
    e["status"] = m.tolerance ? (m.passed() ? "pass" : "fail") : "report";
    j["metrics"].push_back(e);
  }
  j["notes"] = notes;
  return j;
}

std::string ComparisonReport::to_text() const {
  std::ostringstream os;
  for (const auto& m : metrics) {
    os << (m.tolerance ? (m.passed() ? "PASS  " : "FAIL  ") : "      ") << m.observable << "  " << m.name << " = "
       << format_number(m.value);
    if (m.tolerance) os << " (tol " << format_number(*m.tolerance) << ")";
    os << "  [" << m.artifact_a << " vs " << m.artifact_b << "]\n";
  }
  for (const auto& n : notes) os << "note: " << n << "\n";
  os << (passed() ? "overall: pass\n" : "overall: FAIL\n");
  return os.str();
}

double sum_rule_residual(const SpectralSeries& s) {
  double sum = 0.0;
  for (std::size_t k = 0; k < s.omega.size(); ++k) {
    const double w = (k == 0 || k + 1 == s.omega.size()) ? 0.5 : 1.0;
    sum += w * s.spectral[k].real();
  }
  return std::abs(sum * s.spacing / (2.0 * kPi) - 1.0);
}

ComparisonReport compare_spectra(const SpectralSeries& a, const SpectralSeries& b, const Tolerances& tol,
                                 const std::string& name_a, const std::string& name_b) {
  if (a.omega.size() != b.omega.size())
    throw std::invalid_argument("compare_spectra: frequency grids differ in length");
  for (std::size_t k = 0; k < a.omega.size(); ++k)
    if (std::abs(a.omega[k] - b.omega[k]) > 1e-9 * std::max(1.0, std::abs(a.omega[k])))
      throw std::invalid_argument("compare_spectra: frequency grids differ");
  ComparisonReport r;
  const std::string obs = "A" + std::to_string(a.site_n) + std::to_string(a.site_m);
  auto metric = [&](const std::string& name, double value, std::optional<double> t) {
    r.metrics.push_back({obs, name_a, name_b, name, value, t});
  };

  const auto ea = spectral_extrema(a.omega, real_parts(a.spectral));
  const auto eb = spectral_extrema(b.omega, real_parts(b.spectral));
  const std::optional<double> count_tol = tol.check_positions ? std::optional<double>(0.0) : std::nullopt;
  metric("peak_count_difference", std::abs(static_cast<double>(ea.size()) - static_cast<double>(eb.size())), count_tol);

  // Match each extremum of a with the nearest same-signed extremum of b.
  double max_dpos = 0.0, max_dfwhm = 0.0;
  bool any_width = false;
  for (const auto& p : ea) {
    const Extremum* best = nullptr;
    for (const auto& q : eb)
      if ((q.height > 0) == (p.height > 0) && (best == nullptr || std::abs(q.position - p.position) < std::abs(best->position - p.position)))
        best = &q;
    if (best == nullptr) continue;
    max_dpos = std::max(max_dpos, std::abs(best->position - p.position));
    if (std::isfinite(p.fwhm) && std::isfinite(best->fwhm) && best->fwhm > 0.0) {
      any_width = true;
      max_dfwhm = std::max(max_dfwhm, std::abs(p.fwhm / best->fwhm - 1.0));
    }
  }
  std::optional<double> pos_tol;
  if (tol.check_positions) pos_tol = tol.peak_position ? *tol.peak_position : a.spacing;
  metric("max_peak_position_deviation", max_dpos, pos_tol);
  if (any_width) metric("max_fwhm_relative_deviation", max_dfwhm, tol.fwhm_relative);
  else if (tol.fwhm_relative) r.notes.push_back(obs + ": no peak with a measurable width on both sides");

  double max_abs = 0.0;
  for (std::size_t k = 0; k < a.spectral.size(); ++k) max_abs = std::max(max_abs, std::abs(a.spectral[k] - b.spectral[k]));
  metric("max_abs_spectral_difference", max_abs, std::nullopt);
  if (a.site_n == a.site_m) {
    metric("sum_rule_residual_a", sum_rule_residual(a), std::nullopt);
    metric("sum_rule_residual_b", sum_rule_residual(b), std::nullopt);
  }
  return r;
}

ComparisonReport compare_trajectories(const Trajectory& a, const Trajectory& b, const Tolerances& tol,
                                      const std::string& name_a, const std::string& name_b) {
  const auto& oa = a.occupations;
  const auto& ob = b.occupations;
  if (oa.times.size() != ob.times.size() || oa.per_site.size() != ob.per_site.size())
    throw std::invalid_argument("compare_trajectories: time grids or site counts differ");
  for (std::size_t k = 0; k < oa.times.size(); ++k)
    if (std::abs(oa.times[k] - ob.times[k]) > 1e-9 * std::max(1.0, std::abs(oa.times[k])))
      throw std::invalid_argument("compare_trajectories: time grids differ");
  ComparisonReport r;
  double dev = 0.0, dev_tot = 0.0;
  for (std::size_t k = 0; k < oa.times.size(); ++k) {
    for (std::size_t i = 0; i < oa.per_site.size(); ++i) dev = std::max(dev, std::abs(oa.per_site[i][k] - ob.per_site[i][k]));
    dev_tot = std::max(dev_tot, std::abs(oa.total[k] - ob.total[k]));
  }
  r.metrics.push_back({"n_i(t)", name_a, name_b, "max_abs_deviation", dev, tol.trajectory});
  r.metrics.push_back({"n_tot(t)", name_a, name_b, "max_abs_deviation", dev_tot, std::nullopt});
  return r;
}

ComparisonReport compare_files(const std::filesystem::path& a, const std::filesystem::path& b, const Tolerances& tol) {
  const CsvTable ta = read_csv(a);
  const CsvTable tb = read_csv(b);
  if (ta.columns != tb.columns) throw std::invalid_argument("compare: column headers differ");
  const std::string na = a.filename().string(), nb = b.filename().string();
  if (ta.has_column("omega")) {
    const SpectralSeries sa = SpectralSeries::from_csv(ta);
    SpectralSeries sb = SpectralSeries::from_csv(tb);
    return compare_spectra(sa, sb, tol, na, nb);
  }
  if (ta.has_column("time")) return compare_trajectories(Trajectory::from_csv(ta), Trajectory::from_csv(tb), tol, na, nb);
  throw std::invalid_argument("compare: unrecognised artifact schema (need an 'omega' or 'time' column)");
}

// ---------------------------------------------------------------- run

std::filesystem::path default_output_root() {
  if (const char* env = std::getenv("KQS_OUTPUT_ROOT"); env != nullptr && *env != '\0') return env;
  return "kqs-output";
}

namespace {

struct Job {
  std::size_t variant = 0;
  Engine engine = Engine::keldysh;
  std::vector<SpectralSeries> spectra;
  std::optional<Trajectory> trajectory;
  std::vector<std::string> files;
  Diagnostics diag;
  std::string error;
  double seconds = 0.0;
};

std::string spectral_name(const SpectralSeries& s) {
  return to_string(s.engine) + "_A" + std::to_string(s.site_n) + "_" + std::to_string(s.site_m) + ".csv";
}

std::string trajectory_name(Engine e) { return to_string(e) + "_occupations.csv"; }

std::filesystem::path variant_dir(const std::filesystem::path& out, const Variant& v) {
  return v.tag.empty() ? out : out / sanitize(v.tag);
}

std::string artifact_name(const std::filesystem::path& p, const std::filesystem::path& base) {
  return std::filesystem::relative(p, base).generic_string();
}

CsvTable peak_table(const std::vector<Extremum>& peaks) {
  CsvTable t{{"position", "height", "fwhm"}, {}};
  for (const auto& p : peaks) t.add_row({p.position, p.height, p.fwhm});
  return t;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options, std::ostream& log) {
  RunResult result;
  const auto& out = options.out_dir;
  std::filesystem::create_directories(out);
  write_text(out / "config.json", config.to_json().dump(2) + "\n");

  const std::vector<Variant> variants = expand_sweep(config);
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (Engine e : config.engines) jobs.push_back({v, e, {}, std::nullopt, {}, {}, {}, 0.0});

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&]() {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      Job& job = jobs[k];
      const Variant& var = variants[job.variant];
      const auto dir = variant_dir(out, var);
      const auto start = std::chrono::steady_clock::now();
      try {
        std::filesystem::create_directories(dir);
        if (config.mode == Mode::spectral) {
          job.spectra = run_spectral(var.config, job.engine, &job.diag);
          for (const auto& s : job.spectra) {
            const auto path = dir / spectral_name(s);
            write_csv(path, s.to_csv());
            job.files.push_back(artifact_name(path, out));
          }
        } else {
          job.trajectory = run_transient(var.config, job.engine, &job.diag);
          const auto path = dir / trajectory_name(job.engine);
          write_csv(path, job.trajectory->to_csv());
          job.files.push_back(artifact_name(path, out));
        }
      } catch (const std::exception& e) {
        job.error = e.what();
      }
      job.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::lock_guard<std::mutex> lock(log_mutex);
      log << "[" << to_string(job.engine) << (var.tag.empty() ? "" : " " + var.tag) << "] "
          << (job.error.empty() ? "done" : "FAILED: " + job.error) << " (" << format_number(job.seconds) << " s)\n";
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> threads;
  for (unsigned t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  // Reports, in job order so that output does not depend on scheduling.
  json warnings = json::array();
  for (const auto& job : jobs) {
    for (const auto& f : job.files) result.artifacts.push_back(f);
    if (!job.error.empty()) result.errors.push_back(to_string(job.engine) + ": " + job.error);
    for (const auto& w : job.diag.warnings) warnings.push_back(to_string(job.engine) + ": " + w);
  }

  const Engine reference = config.mode == Mode::spectral ? Engine::keldysh : Engine::kbe;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const Variant& var = variants[v];
    const auto dir = variant_dir(out, var);
    const Job* ref = nullptr;
    for (const auto& job : jobs)
      if (job.variant == v && job.engine == reference && job.error.empty()) ref = &job;

    if (config.mode == Mode::spectral) {
      // Peak tables for every engine.
      for (const auto& job : jobs) {
        if (job.variant != v || !job.error.empty()) continue;
        for (const auto& s : job.spectra) {
          const auto peaks = spectral_extrema(s.omega, real_parts(s.spectral));
          const auto name = spectral_name(s);
          const auto path = dir / (name.substr(0, name.size() - 4) + "_peaks.csv");
          write_csv(path, peak_table(peaks));
          result.artifacts.push_back(artifact_name(path, out));
        }
      }
      if (ref == nullptr) continue;
      for (const auto& job : jobs) {
        if (job.variant != v || !job.error.empty() || &job == ref) continue;
        // The ideal spectrum is context, not a candidate: its deviations are reported only.
        const Tolerances tol = job.engine == Engine::ideal ? Tolerances{} : config.tolerances;
        for (std::size_t p = 0; p < job.spectra.size(); ++p) {
          ComparisonReport rep = compare_spectra(ref->spectra[p], job.spectra[p], tol,
                                                 artifact_name(dir / spectral_name(ref->spectra[p]), out),
                                                 artifact_name(dir / spectral_name(job.spectra[p]), out));
          for (auto& m : rep.metrics)
            if (!var.tag.empty()) m.observable += " [" + var.tag + "]";
          result.report.append(rep);
        }
      }
    } else {
      for (const auto& job : jobs) {
        if (job.variant != v || !job.error.empty()) continue;
        // With wide-band decay only, the qubit population can never grow.
        const auto& total = job.trajectory->occupations.total;
        double rise = 0.0;
        for (std::size_t k = 1; k < total.size(); ++k) rise = std::max(rise, total[k] - total[k - 1]);
        const std::string art = artifact_name(dir / trajectory_name(job.engine), out);
        result.report.metrics.push_back({"n_tot(t)", art, art, "max_increase", rise,
                                         config.bath.kind == BathKind::wideband ? std::optional<double>(1e-10)
                                                                                : std::nullopt});
      }
      if (ref == nullptr) continue;
      for (const auto& job : jobs) {
        if (job.variant != v || !job.error.empty() || &job == ref) continue;
        result.report.append(compare_trajectories(*ref->trajectory, *job.trajectory, config.tolerances,
                                                  artifact_name(dir / trajectory_name(ref->engine), out),
                                                  artifact_name(dir / trajectory_name(job.engine), out)));
      }
    }
  }

  // Peak-count table across the sweep for the diagonal pairs.
  if (config.mode == Mode::spectral) {
    for (Engine e : config.engines) {
      CsvTable counts{{"sweep_value", "site_n", "site_m", "peaks", "distinct_levels", "min_level_spacing"}, {}};
      bool any = false;
      for (const auto& job : jobs) {
        if (job.engine != e || !job.error.empty()) continue;
        const auto levels = distinct_levels(make_hamiltonian(variants[job.variant].config));
        double min_gap = 0.0;
        if (levels.size() > 1) {
          min_gap = std::numeric_limits<double>::infinity();
          for (std::size_t k = 1; k < levels.size(); ++k) min_gap = std::min(min_gap, levels[k] - levels[k - 1]);
        }
        for (const auto& s : job.spectra) {
          if (s.site_n != s.site_m) continue;
          const auto peaks = find_peaks(s.omega, real_parts(s.spectral));
          counts.add_row({variants[job.variant].value, static_cast<double>(s.site_n), static_cast<double>(s.site_m),
                          static_cast<double>(peaks.size()), static_cast<double>(levels.size()), min_gap});
          any = true;
        }
      }
      if (any) {
        const auto path = out / (to_string(e) + "_peak_counts.csv");
        write_csv(path, counts);
        result.artifacts.push_back(artifact_name(path, out));
      }
    }
  }

  write_text(out / "report.json", result.report.to_json().dump(2) + "\n");
  write_text(out / "report.txt", result.report.to_text());
  result.artifacts.push_back("report.json");
  result.artifacts.push_back("report.txt");

  json manifest;
  manifest["name"] = config.name;
  manifest["config_hash"] = config_hash(config);
  manifest["seed"] = config.seed;
  manifest["versions"] = {{"kqs", kVersion},
                          {"config_format", kConfigVersion},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                        "." + std::to_string(EIGEN_MINOR_VERSION)},
                          {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                       std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  manifest["created"] = iso_time_now();
  manifest["artifacts"] = result.artifacts;
  manifest["warnings"] = warnings;
  manifest["errors"] = result.errors;
  json timing = json::array();
  for (const auto& job : jobs)
    timing.push_back({{"engine", to_string(job.engine)}, {"variant", variants[job.variant].tag}, {"seconds", job.seconds}});
  manifest["timing"] = timing;
  manifest["status"] = !result.errors.empty() ? "error" : (result.report.passed() ? "pass" : "fail");
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  result.ok = result.errors.empty() && result.report.passed();
  return result;
}

}  // namespace kqs::harness
