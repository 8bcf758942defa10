#pragma once

// Experiment orchestration: the multi-run OSGR protocol over a settings grid,
// the paired GSNR-curve experiments, the weight-dynamics run and the Monte
// Carlo checks of the variance relation and of the gap-increment expectation.

#include "gsnr/config.hpp"
#include "gsnr/dynamics.hpp"
#include "gsnr/osgr.hpp"
#include "gsnr/synthdata.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace gsnr {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Ordinary least squares. Throws DegenerateInputError when x is constant,
// std::invalid_argument for fewer than two points.
LineFit fit_line(const std::vector<std::pair<double, double>>& points);

struct GridSetting {
  std::string id;
  int n = 0;
  double noise = 0.0;
  double p_random = 0.0;
  int width = 0;
};

struct EpochFit {
  int epoch = 0;
  double pearson = 0.0; // NaN when degenerate
  double slope = 0.0;   // NaN when degenerate
  double intercept = 0.0;
  std::size_t n_points = 0;
};

struct GridResult {
  std::vector<GridSetting> settings;
  std::vector<OsgrPoint> points; // setting-major, then epoch
  std::vector<EpochFit> fits;    // one per recorded epoch, across settings

  const EpochFit& fit_at(int epoch) const;
};

// Settings in grid order: n, then noise (regression) or p_random
// (classification), then width.
std::vector<GridSetting> grid_settings(const ExperimentConfig& cfg);

// OSGR points for one setting: shared init, M runs on independent training
// sets, one shared test set. Runs are spread over `jobs` threads.
std::vector<OsgrPoint> run_osgr_setting(const ExperimentConfig& cfg, const GridSetting& setting,
                                        std::uint64_t setting_seed, int jobs);

GridResult run_osgr_grid(const ExperimentConfig& cfg);

// Matched arms with identical initialization: "nonfrozen"/"frozen" (first
// layer) for regression, "real"/"random" labels for classification.
std::map<std::string, TrainResult> run_gsnr_experiment(const ExperimentConfig& cfg);

struct DynamicsResult {
  TrainResult run;
  std::vector<FeatureCorrRecord> features; // regression only; on the test set
};

DynamicsResult run_dynamics_experiment(const ExperimentConfig& cfg);

struct VarianceCheck {
  int trials = 0;
  Eigen::Index n = 0;
  double empirical = 0.0; // sum_j Var over trials of g_D,j
  double predicted = 0.0; // sum_j rho^2_j / n, rho^2 from a reference set
  double relative_error = 0.0;
};

struct GapCheck {
  int trials = 0;
  Eigen::Index n = 0;
  double lr = 0.0;
  double mean_gap = 0.0;       // mean over trials of dL[D] - dL[D']
  double standard_error = 0.0;
  double predicted = 0.0;      // lr * sum_j rho^2_j / n
  double relative_error = 0.0;
  double mean_gap_half_lr = 0.0; // same datasets at lr / 2
  double halving_ratio = 0.0;    // mean_gap_half_lr / mean_gap
};

// One-step gap increment dL[D] - dL[D'] for a GD step on D.
double gap_increment(const MlpParams& params, const Dataset& train, const Dataset& other, double lr);

VarianceCheck check_variance_relation(const DataSpec& spec, const MlpSpec& model, int n, int trials,
                                      std::uint64_t seed, int reference_size = 0);
GapCheck check_gap_increment(const DataSpec& spec, const MlpSpec& model, int n, double lr, int trials,
                             std::uint64_t seed, int reference_size = 0);

struct IdentityReport {
  VarianceCheck variance;
  GapCheck gap;
  double variance_tolerance = 0.05;
  double gap_tolerance = 0.10;
  double halving_tolerance = 0.15;

  bool variance_pass() const { return variance.relative_error <= variance_tolerance; }
  bool gap_pass() const { return gap.relative_error <= gap_tolerance; }
  bool halving_pass() const;
  bool pass() const { return variance_pass() && gap_pass() && halving_pass(); }
};

IdentityReport run_identity_checks(const ExperimentConfig& cfg);

}  // namespace gsnr
