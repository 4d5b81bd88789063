#pragma once

// Experiment configuration, engine dispatch, CSV artifacts and comparison
// reports behind the `kqs` command-line tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kqs/baths.hpp"
#include "kqs/csv.hpp"
#include "kqs/kbe.hpp"
#include "kqs/lattice.hpp"
#include "kqs/peaks.hpp"

namespace kqs::harness {

inline constexpr int kConfigVersion = 1;

enum class Mode { spectral, transient };
enum class Engine { keldysh, ideal, kbe, lindblad, blochredfield, exact_tls };
enum class BathKind { ohmic, tls, wideband };
enum class InitialKind { thermal, vacuum, single_excitation };

std::string to_string(Engine e);
std::string to_string(BathKind k);

/// Validation failure; `field` is the dotted path of the offending entry.
class ConfigError : public std::invalid_argument {
public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

private:
  std::string field_;
};

struct SystemSpec {
  std::size_t n_sites = 1;
  double onsite = 0.0;
  double hopping = 1.0;
  Boundary boundary = Boundary::periodic;  // matches the quoted cosine band
};

struct BathSpec {
  BathKind kind = BathKind::ohmic;
  // ohmic: alpha is either given or derived from dephasing_rate as 2 Gamma_2 / T.
  double alpha = 0.0;
  std::optional<double> dephasing_rate;
  double cutoff = 1.0;
  double temperature = 0.0;
  // tls / wideband
  double rate = 0.0;
  std::size_t tls_per_site = 1;
  std::pair<double, double> band{0.0, 0.0};
  double smearing = 0.0;
};

struct FreqGridSpec {
  double min = -1.0;
  double max = 1.0;
  std::size_t points = 0;
  std::optional<double> eta;  // default 4 * spacing
};

struct TimeGridSpec {
  double t_max = 0.0;
  double dt = 0.0;
  std::size_t save_stride = 1;
};

struct InitialSpec {
  InitialKind kind = InitialKind::thermal;
  std::size_t site = 0;
  std::optional<double> temperature;  // thermal: defaults to the bath temperature
};

struct Tolerances {
  std::optional<double> peak_position;  // absolute; defaults to one grid spacing when enabled
  bool check_positions = false;
  std::optional<double> fwhm_relative;
  std::optional<double> trajectory;
};

struct Sweep {
  std::string parameter;  // "dephasing_rate" or "n_sites"
  std::vector<double> values;
};

struct ExperimentConfig {
  std::string name;
  std::string description;
  Mode mode = Mode::spectral;
  SystemSpec system;
  BathSpec bath;
  std::vector<Engine> engines;
  std::optional<FreqGridSpec> frequency_grid;
  std::optional<TimeGridSpec> time_grid;
  InitialSpec initial;
  std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 0}};
  double warmup_time = 0.0;
  std::optional<double> gamma1_override;
  std::optional<double> gamma2star_override;
  std::optional<Sweep> sweep;
  std::uint64_t seed = 0;
  std::string output_dir;
  Tolerances tolerances;

  /// Parses and validates; every failure names its field.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// Directory holding the shipped presets (compiled in, overridable by KQS_PRESET_DIR).
std::filesystem::path preset_directory();
std::vector<std::string> list_presets(const std::filesystem::path& dir = preset_directory());
/// Accepts a preset name or a path to a config file.
ExperimentConfig resolve_config(const std::string& name_or_path);

/// Stable 64-bit FNV-1a hash of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// One concrete experiment per sweep value (or the config itself without a sweep).
struct Variant {
  std::string tag;  // "" without a sweep, else e.g. "dephasing_rate=0.1"
  double value = 0.0;
  ExperimentConfig config;
};
std::vector<Variant> expand_sweep(const ExperimentConfig& config);

HoppingHamiltonian make_hamiltonian(const ExperimentConfig& config);
FreqGrid make_grid(const ExperimentConfig& config);
std::vector<OhmicBath> make_ohmic_baths(const ExperimentConfig& config);
/// TLS baths drawn with seed + site so each site is independent and reproducible.
std::vector<TlsBath> make_tls_baths(const ExperimentConfig& config);
InitialState make_initial_state(const ExperimentConfig& config);

/// Single-qubit master-equation rates implied by the bath section:
/// ohmic Gamma_2* = S(0) / 4, wideband Gamma_1 = rate, TLS Gamma_1 = J(onsite).
struct QubitRates {
  std::vector<double> gamma1;
  std::vector<double> gamma2star;
};
QubitRates qubit_rates(const ExperimentConfig& config);

struct SpectralSeries {
  Engine engine = Engine::keldysh;
  std::size_t site_n = 0;
  std::size_t site_m = 0;
  double spacing = 0.0;
  std::vector<double> omega;
  std::vector<Complex> retarded;
  std::vector<Complex> keldysh;
  std::vector<Complex> spectral;

  CsvTable to_csv() const;
  static SpectralSeries from_csv(const CsvTable& table);
};

struct Trajectory {
  Engine engine = Engine::kbe;
  Occupations occupations;

  CsvTable to_csv() const;
  static Trajectory from_csv(const CsvTable& table);
};

std::vector<SpectralSeries> run_spectral(const ExperimentConfig& config, Engine engine, Diagnostics* diag = nullptr);
Trajectory run_transient(const ExperimentConfig& config, Engine engine, Diagnostics* diag = nullptr);

/// Peaks of y together with negative lobes (peaks of -y lying below zero).
struct Extremum {
  double position;
  double height;  // signed
  double fwhm;    // NaN when undefined
};
std::vector<Extremum> spectral_extrema(const std::vector<double>& x, const std::vector<double>& y,
                                       PeakOptions options = {});

struct Metric {
  std::string observable;
  std::string artifact_a;
  std::string artifact_b;
  std::string name;
  double value = 0.0;
  std::optional<double> tolerance;
  bool passed() const { return !tolerance || value <= *tolerance; }
};

struct ComparisonReport {
  std::vector<Metric> metrics;
  std::vector<std::string> notes;

  bool passed() const;
  void append(const ComparisonReport& other);
  nlohmann::json to_json() const;
  std::string to_text() const;
};

ComparisonReport compare_spectra(const SpectralSeries& a, const SpectralSeries& b, const Tolerances& tol,
                                 const std::string& name_a = "a", const std::string& name_b = "b");
ComparisonReport compare_trajectories(const Trajectory& a, const Trajectory& b, const Tolerances& tol,
                                      const std::string& name_a = "a", const std::string& name_b = "b");
/// |int A_ii dw / 2pi - 1| for a diagonal series (trapezoid rule).
double sum_rule_residual(const SpectralSeries& s);

/// Compares two CSV artifacts of the same schema; throws std::invalid_argument on mismatch.
ComparisonReport compare_files(const std::filesystem::path& a, const std::filesystem::path& b, const Tolerances& tol);

struct RunOptions {
  std::filesystem::path out_dir;
  unsigned jobs = 1;
};

struct RunResult {
  bool ok = true;
  std::vector<std::string> artifacts;
  ComparisonReport report;
  std::vector<std::string> errors;
};

/// Runs every engine for every sweep value, writing CSV artifacts, peak tables,
/// report.json and manifest.json into `options.out_dir`.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options, std::ostream& log);

/// Output root: $KQS_OUTPUT_ROOT if set, else ./kqs-output.
std::filesystem::path default_output_root();

}  // namespace kqs::harness
