#pragma once

#include "gsnr/dataset.hpp"
#include "gsnr/dynamics.hpp"
#include "gsnr/netcore.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gsnr {

enum class ExperimentKind { gen_data, osgr_verify, gsnr_curve, dynamics, check_identities };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_kind(std::string_view name);

struct GridAxes {
  std::vector<int> n;
  std::vector<double> noise;    // regression
  std::vector<int> width;       // hidden width of a one-hidden-layer MLP
  std::vector<double> p_random; // classification
};

struct IdentityConfig {
  int n = 50;
  int trials = 1000;      // variance relation
  int gap_trials = 2000;  // gap increment
  double lr = 1e-4;
  int reference_size = 0; // 0: max(100 n, 50000)
  double variance_tolerance = 0.05;
  double gap_tolerance = 0.10;
  double halving_tolerance = 0.15;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::osgr_verify;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::filesystem::path out_dir = "out";

  DataSpec data;           // data.n is the training-set size
  int n_test = 10000;
  double p_random = 1.0;   // label noise of the random arm in gsnr_curve

  std::vector<int> hidden{20};
  Activation activation = Activation::relu;

  TrainConfig train;

  GridAxes grid;
  int M = 10;

  IdentityConfig identities;

  // MLP for this data spec and hidden widths.
  MlpSpec model() const;
  MlpSpec model_with_width(int width) const;

  // Throws ConfigError on a violated invariant.
  void validate() const;
};

// Parses TOML; unknown sections or keys are errors. When `expected` is given
// it is the experiment kind, and a different experiment.kind in the file is an
// error; otherwise the file must name the kind. Throws ConfigError.
ExperimentConfig parse_config(std::string_view toml_text, std::string_view source = "config",
                              std::optional<ExperimentKind> expected = std::nullopt);
ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<ExperimentKind> expected = std::nullopt);

// JSON echo of the configuration, for output metadata.
std::string config_to_json(const ExperimentConfig& cfg);

}  // namespace gsnr
