#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "kqs/harness.hpp"

using namespace kqs;
using namespace kqs::harness;
using nlohmann::json;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("kqs_test_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json small_transient() {
  return json::parse(R"({
    "version": 1, "name": "t", "mode": "transient",
    "system": {"n_sites": 3, "onsite": 1.0, "hopping": 1.0},
    "bath": {"kind": "wideband", "rate": 0.5},
    "engines": ["kbe", "lindblad"],
    "time_grid": {"t_max": 2.0, "dt": 0.01, "save_stride": 4},
    "initial_state": {"kind": "single_excitation", "site": 0},
    "tolerances": {"trajectory": 0.01}
  })");
}

json small_spectral() {
  return json::parse(R"({
    "version": 1, "name": "s", "mode": "spectral",
    "system": {"n_sites": 3, "onsite": 0.5, "hopping": 1.0},
    "bath": {"kind": "ohmic", "alpha": 0.001, "cutoff": 100.0, "temperature": 100.0},
    "engines": ["keldysh", "lindblad"],
    "frequency_grid": {"min": -1.5, "max": 2.5, "points": 801},
    "pairs": [[0, 0], [0, 1]],
    "warmup_time": 200.0,
    "tolerances": {"peak_position": "grid_spacing", "fwhm_relative": 0.1}
  })");
}

std::string error_field(const json& j) {
  try {
    ExperimentConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("shipped presets parse, validate and round-trip") {
  const auto names = list_presets();
  for (const char* expected : {"fig2-lower", "fig2-upper", "fig3-top", "fig3-bottom", "fig4-bottom", "fig4-top"})
    CHECK(std::find(names.begin(), names.end(), expected) != names.end());
  for (const auto& n : names) {
    const auto c = resolve_config(n);
    CHECK(c.name == n);
    const auto again = ExperimentConfig::from_json(c.to_json());
    CHECK(config_hash(again) == config_hash(c));
  }
  CHECK_THROWS(resolve_config("no-such-preset"));
}

TEST_CASE("validation names the offending field") {
  json j = small_transient();
  CHECK(error_field(j).empty());
  CHECK(ExperimentConfig::from_json(j).system.boundary == Boundary::periodic);

  j = small_transient();
  j["system"].erase("n_sites");
  CHECK(error_field(j) == "system.n_sites");

  j = small_transient();
  j["bath"]["kind"] = "phonon";
  CHECK(error_field(j) == "bath.kind");

  j = small_transient();
  j["bath"]["rate"] = -1.0;
  CHECK(error_field(j) == "bath.rate");

  j = small_transient();
  j["engines"] = {"kbe", "keldysh"};
  CHECK(error_field(j) == "engines[1]");

  j = small_transient();
  j["engines"] = {"kbe", "kbe"};
  CHECK(error_field(j) == "engines[1]");

  j = small_transient();
  j["system"]["colour"] = "red";
  CHECK(error_field(j) == "system.colour");

  j = small_transient();
  j["initial_state"]["site"] = 3;
  CHECK(error_field(j) == "initial_state.site");

  j = small_transient();
  j["version"] = 2;
  CHECK(error_field(j) == "version");

  // The KBE step guard is checked up front with the suggested step in the message.
  j = small_transient();
  j["time_grid"]["dt"] = 0.5;
  try {
    ExperimentConfig::from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "time_grid.dt");
    CHECK(std::string(e.what()).find("use dt <=") != std::string::npos);
  }

  j = small_spectral();
  j["pairs"] = {{0, 3}};
  CHECK(error_field(j) == "pairs[0]");

  j = small_spectral();
  j["frequency_grid"]["eta"] = 0.001;
  CHECK(error_field(j) == "frequency_grid.eta");

  j = small_spectral();
  j["engines"] = {"keldysh", "exact_tls"};
  CHECK(error_field(j) == "engines[1]");

  j = small_spectral();
  j["system"]["n_sites"] = 9;
  j["pairs"] = {{0, 0}};
  CHECK(error_field(j) == "system.n_sites");

  j = small_spectral();
  j["bath"]["dephasing_rate"] = 0.1;
  CHECK(error_field(j) == "bath.alpha");

  j = small_spectral();
  j.erase("frequency_grid");
  CHECK(error_field(j) == "frequency_grid");

  json tls = small_transient();
  tls["bath"] = json::parse(R"({"kind": "tls", "rate": 0.3, "tls_per_site": 5, "band": [0.5, 1.5], "smearing": 0.05})");
  tls["engines"] = {"exact_tls"};
  CHECK(error_field(tls) == "bath.tls_per_site");  // 3 + 15 spins
  tls["bath"]["tls_per_site"] = 2;
  CHECK(error_field(tls).empty());
  tls["bath"]["temperature"] = 0.1;
  CHECK(error_field(tls) == "bath.temperature");
}

TEST_CASE("sweeps and derived rates") {
  json j = small_spectral();
  j["bath"] = json::parse(R"({"kind": "ohmic", "dephasing_rate": 0.1, "cutoff": 50.0, "temperature": 20.0})");
  j["sweep"] = json::parse(R"({"parameter": "dephasing_rate", "values": [0.05, 0.2]})");
  const auto c = ExperimentConfig::from_json(j);
  const auto vars = expand_sweep(c);
  REQUIRE(vars.size() == 2);
  CHECK(vars[0].tag == "dephasing_rate=0.05");
  CHECK(vars[1].config.bath.alpha == doctest::Approx(2.0 * 0.2 / 20.0));
  // S(0) = 2 alpha T = 4 Gamma_2, and the Lindblad rate is S(0) / 4.
  CHECK(qubit_rates(vars[1].config).gamma2star[2] == doctest::Approx(0.2));
  CHECK(qubit_rates(vars[1].config).gamma1[0] == 0.0);

  const auto t = ExperimentConfig::from_json(small_transient());
  CHECK(qubit_rates(t).gamma1[1] == doctest::Approx(0.5));

  json n = small_spectral();
  n["sweep"] = json::parse(R"({"parameter": "n_sites", "values": [2, 3]})");
  CHECK(expand_sweep(ExperimentConfig::from_json(n))[0].config.system.n_sites == 2);
  n["sweep"]["values"] = {2.5};
  CHECK(error_field(n) == "sweep.values");
}

TEST_CASE("TLS baths are reproducible per seed") {
  json tls = small_transient();
  tls["bath"] = json::parse(R"({"kind": "tls", "rate": 0.3, "tls_per_site": 2, "band": [0.5, 1.5], "smearing": 0.05})");
  tls["seed"] = 11;
  const auto a = make_tls_baths(ExperimentConfig::from_json(tls));
  const auto b = make_tls_baths(ExperimentConfig::from_json(tls));
  tls["seed"] = 12;
  const auto c = make_tls_baths(ExperimentConfig::from_json(tls));
  CHECK(a[1].levels()[0].energy == b[1].levels()[0].energy);
  CHECK(a[1].levels()[0].energy != c[1].levels()[0].energy);
  CHECK(a[0].levels()[0].energy != a[1].levels()[0].energy);
}

TEST_CASE("CSV tables round-trip and print deterministically") {
  CsvTable t{{"x", "y"}, {}};
  t.add_row({0.1, -0.0});
  t.add_row({1e-300, 12345.678901234567});
  CHECK_THROWS_AS(t.add_row({1.0}), std::invalid_argument);
  const std::string text = format_csv(t);
  CHECK(text == "x,y\n0.1,0\n1e-300,12345.6789012\n");
  const auto path = scratch("csv") / "t.csv";
  write_csv(path, t);
  const auto back = read_csv(path);
  CHECK(back.columns == t.columns);
  CHECK(back.rows[1][0] == 1e-300);
  CHECK(back.column("y")[1] == doctest::Approx(12345.6789012));
  CHECK_THROWS_AS(back.column("z"), std::out_of_range);

  std::ofstream(path) << "a,b\n1,2\n3\n";
  CHECK_THROWS_AS(read_csv(path), std::runtime_error);
  std::ofstream(path) << "a,b\n1,zz\n";
  CHECK_THROWS_AS(read_csv(path), std::runtime_error);
}

TEST_CASE("extrema include negative lobes") {
  std::vector<double> x, y;
  for (int k = 0; k <= 800; ++k) {
    const double w = -2.0 + 0.005 * k;
    x.push_back(w);
    y.push_back(0.01 / ((w - 1.0) * (w - 1.0) + 0.01) - 0.5 * 0.01 / ((w + 1.0) * (w + 1.0) + 0.01));
  }
  const auto e = spectral_extrema(x, y);
  REQUIRE(e.size() == 2);
  CHECK(e[0].position == doctest::Approx(-1.0).epsilon(0.005));
  CHECK(e[0].height < 0.0);
  CHECK(e[0].fwhm == doctest::Approx(0.2).epsilon(0.05));
  CHECK(e[1].height > 0.0);
  CHECK(e[1].fwhm == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("peaks of a single Lorentzian artifact") {
  SpectralSeries s;
  for (int k = 0; k <= 1200; ++k) {
    const double w = -3.0 + 0.005 * k;
    s.omega.push_back(w);
    const double a = 0.01 / ((w - 0.4) * (w - 0.4) + 0.01);
    s.spectral.emplace_back(a, 0.0);
    s.retarded.emplace_back(0.0, -0.5 * a);
    s.keldysh.emplace_back(0.0, 0.0);
  }
  const auto table = s.to_csv();
  const auto back = SpectralSeries::from_csv(table);
  CHECK(back.spacing == doctest::Approx(0.005));
  const auto e = spectral_extrema(back.omega, {table.column("spectral_re")});
  REQUIRE(e.size() == 1);
  CHECK(std::abs(e[0].fwhm - 0.2) <= back.spacing);
}

TEST_CASE("identical artifacts compare as zero deviation; schema mismatches are rejected") {
  const auto out = scratch("compare");
  const auto cfg = ExperimentConfig::from_json(small_transient());
  const auto tr = run_transient(cfg, Engine::kbe);
  write_csv(out / "a.csv", tr.to_csv());
  write_csv(out / "b.csv", tr.to_csv());
  Tolerances tol;
  tol.trajectory = 0.0;
  const auto rep = compare_files(out / "a.csv", out / "b.csv", tol);
  CHECK(rep.passed());
  for (const auto& m : rep.metrics) CHECK(m.value == 0.0);

  auto spec = small_spectral();
  spec["engines"] = {"keldysh"};
  const auto series = run_spectral(ExperimentConfig::from_json(spec), Engine::keldysh);
  write_csv(out / "s.csv", series[0].to_csv());
  CHECK_THROWS_AS(compare_files(out / "a.csv", out / "s.csv", tol), std::invalid_argument);
  Tolerances ptol;
  ptol.check_positions = true;
  ptol.fwhm_relative = 0.0;
  const auto same = compare_files(out / "s.csv", out / "s.csv", ptol);
  CHECK(same.passed());
  for (const auto& m : same.metrics)
    if (m.name.find("sum_rule") == std::string::npos) CHECK(m.value == 0.0);
}

TEST_CASE("run writes artifacts, manifest and report; reruns are byte-identical") {
  const auto cfg = ExperimentConfig::from_json(small_transient());
  const auto a = scratch("run_a");
  const auto b = scratch("run_b");
  std::ostringstream log;
  const auto ra = run_experiment(cfg, {a, 2}, log);
  const auto rb = run_experiment(cfg, {b, 1}, log);
  CHECK(ra.ok);
  CHECK(ra.errors.empty());
  for (const char* f : {"kbe_occupations.csv", "lindblad_occupations.csv", "report.json", "config.json"}) {
    REQUIRE(std::filesystem::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  const auto manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["config_hash"] == config_hash(cfg));
  CHECK(manifest["seed"] == 0);
  CHECK(manifest["status"] == "pass");
  CHECK(manifest["versions"].contains("kqs"));
  const auto report = json::parse(slurp(a / "report.json"));
  for (const auto& m : report["metrics"]) {
    CHECK(!m["artifact_a"].get<std::string>().empty());
    CHECK(!m["artifact_b"].get<std::string>().empty());
  }

  // The rerun config is itself a valid input.
  CHECK(config_hash(load_config(a / "config.json")) == config_hash(cfg));
}

TEST_CASE("spectral run: Lindblad matches Keldysh at high temperature") {
  const auto cfg = ExperimentConfig::from_json(small_spectral());
  const auto out = scratch("spectral");
  std::ostringstream log;
  const auto r = run_experiment(cfg, {out, 1}, log);
  CHECK(r.ok);
  CHECK(std::filesystem::exists(out / "keldysh_A0_1.csv"));
  CHECK(std::filesystem::exists(out / "lindblad_A0_0_peaks.csv"));
  CHECK(std::filesystem::exists(out / "keldysh_peak_counts.csv"));
  bool saw_fwhm = false;
  for (const auto& m : r.report.metrics)
    if (m.name == "max_fwhm_relative_deviation") {
      saw_fwhm = true;
      CHECK(m.tolerance.has_value());
    }
  CHECK(saw_fwhm);
}

TEST_CASE("engine failures keep partial artifacts and fail the run") {
  // Bypass validation to force a failing job next to a working one.
  ExperimentConfig cfg = ExperimentConfig::from_json(small_spectral());
  cfg.engines = {Engine::keldysh, Engine::kbe};
  const auto out = scratch("partial");
  std::ostringstream log;
  const auto r = run_experiment(cfg, {out, 1}, log);
  CHECK_FALSE(r.ok);
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0].find("kbe") == 0);
  CHECK(std::filesystem::exists(out / "keldysh_A0_0.csv"));
  CHECK(json::parse(slurp(out / "manifest.json"))["status"] == "error");
}

TEST_CASE("dephasing sweep gives a nonincreasing peak count") {
  json j = json::parse(R"({
    "version": 1, "name": "sweep", "mode": "spectral",
    "system": {"n_sites": 12, "boundary": "periodic"},
    "bath": {"kind": "ohmic", "dephasing_rate": 0.05, "cutoff": 100.0, "temperature": 100.0},
    "engines": ["keldysh"],
    "frequency_grid": {"min": -2.0, "max": 2.0, "points": 1601},
    "sweep": {"parameter": "dephasing_rate", "values": [0.01, 0.05, 0.1, 0.2, 0.4]}
  })");
  std::size_t previous = std::numeric_limits<std::size_t>::max();
  for (const auto& v : expand_sweep(ExperimentConfig::from_json(j))) {
    const auto s = run_spectral(v.config, Engine::keldysh);
    std::vector<double> a;
    for (const auto& z : s[0].spectral) a.push_back(z.real());
    const std::size_t n = find_peaks(s[0].omega, a).size();
    CHECK(n <= previous);
    CHECK(n <= 7);  // distinct levels of a 12-site ring
    previous = n;
  }
}

TEST_CASE("default output root honours the environment") {
  ::setenv("KQS_OUTPUT_ROOT", "/tmp/kqs-root-test", 1);
  CHECK(default_output_root() == std::filesystem::path("/tmp/kqs-root-test"));
  ::unsetenv("KQS_OUTPUT_ROOT");
  CHECK(default_output_root() == std::filesystem::path("kqs-output"));
}
