// kqs: run experiment presets, compare artifacts, extract peaks.
//
// Exit status: 0 success, 1 comparison failed, 2 invalid input, 3 engine error.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kqs/harness.hpp"

namespace h = kqs::harness;

namespace {

enum Exit { kOk = 0, kFailed = 1, kInvalid = 2, kEngine = 3 };

// key=value with keys position (number or grid_spacing), fwhm, trajectory.
h::Tolerances parse_tolerances(const std::vector<std::string>& items, h::Tolerances base) {
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--tolerance expects key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "position") {
      base.check_positions = true;
      if (value == "grid_spacing") base.peak_position.reset();
      else base.peak_position = std::stod(value);
    } else if (key == "fwhm") {
      base.fwhm_relative = std::stod(value);
    } else if (key == "trajectory") {
      base.trajectory = std::stod(value);
    } else {
      throw std::invalid_argument("--tolerance: unknown key '" + key + "' (position, fwhm, trajectory)");
    }
  }
  return base;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keldysh / master-equation engines for noisy analog quantum simulators"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  long long seed = -1;
  unsigned jobs = 1;
  std::vector<std::string> tolerances;
  auto* run = app.add_subcommand("run", "run an experiment config or preset");
  run->add_option("--config,config", config, "preset name or path to a JSON config")->required();
  run->add_option("--out", out, "output directory (default: $KQS_OUTPUT_ROOT/<output_dir or name>)");
  run->add_option("--seed", seed, "override the config seed")->check(CLI::NonNegativeNumber);
  run->add_option("--jobs", jobs, "engine jobs to run in parallel")->check(CLI::PositiveNumber);
  run->add_option("--tolerance", tolerances, "override a tolerance: position=<x|grid_spacing>, fwhm=<x>, trajectory=<x>");

  std::string file_a, file_b;
  std::vector<std::string> cmp_tolerances;
  auto* compare = app.add_subcommand("compare", "compare two CSV artifacts of the same schema");
  compare->add_option("a", file_a, "first artifact")->required()->check(CLI::ExistingFile);
  compare->add_option("b", file_b, "second artifact")->required()->check(CLI::ExistingFile);
  compare->add_option("--tolerance", cmp_tolerances, "position=<x|grid_spacing>, fwhm=<x>, trajectory=<x>");

  std::string spectral_file, column = "spectral_re";
  double prominence = 0.01;
  std::size_t window = 3;
  auto* peaks = app.add_subcommand("peaks", "peak table of a spectral CSV");
  peaks->add_option("file", spectral_file, "spectral artifact")->required()->check(CLI::ExistingFile);
  peaks->add_option("--prominence", prominence, "minimum prominence as a fraction of the maximum");
  peaks->add_option("--window", window, "moving-average width before the search");
  peaks->add_option("--column", column, "column to analyse");

  auto* list = app.add_subcommand("list-presets", "list the shipped presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*list) {
      for (const auto& name : h::list_presets()) {
        const auto cfg = h::load_config(h::preset_directory() / (name + ".json"));
        std::cout << name << "  " << cfg.description << "\n";
      }
      return kOk;
    }

    if (*run) {
      h::ExperimentConfig cfg;
      try {
        cfg = h::resolve_config(config);
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        cfg.tolerances = parse_tolerances(tolerances, cfg.tolerances);
        // Re-validate: a new seed changes the sampled TLS baths.
        cfg = h::ExperimentConfig::from_json(cfg.to_json());
      } catch (const std::exception& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
        return kInvalid;
      }
      h::RunOptions options;
      options.jobs = jobs;
      options.out_dir = out.empty() ? h::default_output_root() / (cfg.output_dir.empty() ? cfg.name : cfg.output_dir)
                                    : std::filesystem::path(out);
      std::cerr << "writing to " << options.out_dir.string() << "\n";
      const auto result = h::run_experiment(cfg, options, std::cerr);
      std::cout << result.report.to_text();
      for (const auto& e : result.errors) std::cerr << "error: " << e << "\n";
      if (!result.errors.empty()) return kEngine;
      return result.report.passed() ? kOk : kFailed;
    }

    if (*compare) {
      const auto tol = parse_tolerances(cmp_tolerances, {});
      const auto report = h::compare_files(file_a, file_b, tol);
      std::cout << report.to_text();
      return report.passed() ? kOk : kFailed;
    }

    if (*peaks) {
      const auto table = kqs::read_csv(spectral_file);
      const std::string x = table.has_column("omega") ? "omega" : table.columns.front();
      const auto found = h::spectral_extrema(table.column(x), table.column(column), {prominence, window});
      std::cout << "position,height,fwhm\n";
      for (const auto& p : found) std::cout << p.position << "," << p.height << "," << p.fwhm << "\n";
      return kOk;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kEngine;
  }
  return kOk;
}
