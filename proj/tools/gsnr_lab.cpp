#include "gsnr/config.hpp"
#include "gsnr/errors.hpp"
#include "gsnr/harness.hpp"
#include "gsnr/report.hpp"
#include "gsnr/rng.hpp"
#include "gsnr/synthdata.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace {

using namespace gsnr;

enum ExitCode { kOk = 0, kConfigError = 1, kNumericalError = 2, kCheckFailed = 3 };

template <class Write, class Value>
std::string to_text(Write write, const Value& value) {
  std::ostringstream out;
  write(out, value);
  return out.str();
}

std::string metadata_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["config"] = nlohmann::ordered_json::parse(config_to_json(cfg));
  j["notes"] = {
      {"avg_gsnr", fmt::format("parameters with gradient variance below {} are excluded from averages",
                               kDefaultGsnrFloor)},
      {"p_same_sign", "the majority-sign fraction is taken over samples with a nonzero gradient"},
      {"features", "feature-target correlations are measured on the test set"}};
  return j.dump(2) + "\n";
}

int gen_data(const ExperimentConfig& cfg) {
  const Dataset train = generate(cfg.data, derive_seed(cfg.seed, 0));
  DataSpec test_spec = cfg.data;
  test_spec.n = cfg.n_test;
  const Dataset test = generate(test_spec, derive_seed(cfg.seed, 1));
  write_file(cfg.out_dir, "train.csv", to_text(write_dataset_csv, train));
  write_file(cfg.out_dir, "test.csv", to_text(write_dataset_csv, test));
  nlohmann::ordered_json sidecar;
  sidecar["seed"] = cfg.seed;
  sidecar["train"] = nlohmann::ordered_json::parse(dataset_sidecar_json(cfg.data, derive_seed(cfg.seed, 0), "train"));
  sidecar["test"] = nlohmann::ordered_json::parse(dataset_sidecar_json(test_spec, derive_seed(cfg.seed, 1), "test"));
  write_file(cfg.out_dir, "data.json", sidecar.dump(2) + "\n");
  return kOk;
}

int osgr_verify(const ExperimentConfig& cfg) {
  const GridResult grid = run_osgr_grid(cfg);
  write_file(cfg.out_dir, "grid.csv", to_text(write_grid_csv, grid));
  write_file(cfg.out_dir, "fit.csv", to_text(write_fit_csv, grid));
  for (const EpochFit& f : grid.fits) {
    if (f.epoch <= 20 || f.epoch % 100 == 0) {
      std::printf("epoch %5d  pearson %s  slope %s\n", f.epoch, format_number(f.pearson).c_str(),
                  format_number(f.slope).c_str());
    }
  }
  return kOk;
}

int gsnr_curve(const ExperimentConfig& cfg) {
  const auto arms = run_gsnr_experiment(cfg);
  for (const auto& [name, result] : arms) {
    write_file(cfg.out_dir, "probes_" + name + ".csv", to_text(write_probes_csv, result.series));
  }
  return kOk;
}

int dynamics(const ExperimentConfig& cfg) {
  const DynamicsResult result = run_dynamics_experiment(cfg);
  write_file(cfg.out_dir, "probes_dynamics.csv", to_text(write_probes_csv, result.run.series));
  if (cfg.data.task == Task::regression) {
    write_file(cfg.out_dir, "features.csv", to_text(write_features_csv, result.features));
  }
  save_params(result.run.params, cfg.out_dir / "params_final.bin");
  return kOk;
}

int check_identities(const ExperimentConfig& cfg) {
  const IdentityReport report = run_identity_checks(cfg);
  write_file(cfg.out_dir, "identities.json", identities_json(report));
  std::printf("variance relation  rel.err %s  %s\n", format_number(report.variance.relative_error).c_str(),
              report.variance_pass() ? "PASS" : "FAIL");
  std::printf("gap increment      rel.err %s  %s\n", format_number(report.gap.relative_error).c_str(),
              report.gap_pass() ? "PASS" : "FAIL");
  std::printf("lr halving         ratio   %s  %s\n", format_number(report.gap.halving_ratio).c_str(),
              report.halving_pass() ? "PASS" : "FAIL");
  return report.pass() ? kOk : kCheckFailed;
}

int run(ExperimentKind kind, const std::string& config_path, const std::optional<std::string>& out,
        const std::optional<std::uint64_t>& seed, const std::optional<int>& jobs) {
  ExperimentConfig cfg = load_config(config_path, kind);
  if (out) cfg.out_dir = *out;
  if (seed) cfg.seed = *seed;
  if (jobs) cfg.jobs = *jobs;
  cfg.validate();
  if (kind != ExperimentKind::gen_data) write_file(cfg.out_dir, "metadata.json", metadata_json(cfg));
  switch (kind) {
    case ExperimentKind::gen_data: return gen_data(cfg);
    case ExperimentKind::osgr_verify: return osgr_verify(cfg);
    case ExperimentKind::gsnr_curve: return gsnr_curve(cfg);
    case ExperimentKind::dynamics: return dynamics(cfg);
    case ExperimentKind::check_identities: return check_identities(cfg);
  }
  return kConfigError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient signal-to-noise and one-step generalization experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<ExperimentKind> chosen;

  for (ExperimentKind kind : {ExperimentKind::gen_data, ExperimentKind::osgr_verify, ExperimentKind::gsnr_curve,
                              ExperimentKind::dynamics, ExperimentKind::check_identities}) {
    std::string name(to_string(kind));
    std::replace(name.begin(), name.end(), '_', '-');
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "TOML config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    sub->callback([&chosen, kind] { chosen = kind; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    return run(*chosen, config_path, out, seed, jobs);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalError;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kConfigError;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "degenerate input: %s\n", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumericalError;
  }
}
