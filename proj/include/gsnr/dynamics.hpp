#pragma once

// Full-batch gradient-descent training with read-only probes: GSNR, gradient
// sign agreement, the one-step change of the mean gradient against the
// weights, the fraction of weights opposing their mean gradient, and
// feature-target correlations of hidden units.

#include "gsnr/gradstats.hpp"
#include "gsnr/netcore.hpp"
#include "gsnr/osgr.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace gsnr {

// Epoch t is recorded when t < dense_until or t is a multiple of every.
struct RecordSchedule {
  int dense_until = 0;
  int every = 1;

  bool recorded(int epoch) const { return epoch < dense_until || epoch % every == 0; }
};

struct ProbeOptions {
  bool sign_stats = true;
  // Delta-g/W correlation and opposite-sign ratio for every layer.
  bool weight_dynamics = false;
  double top_frac = 0.1;
  // Layer whose average GSNR is reported next to the all-parameter average.
  int gsnr_layer = 1;
  bool keep_param_gsnr = false;
  bool keep_snapshots = false;
};

struct TrainConfig {
  int epochs = 100;
  double lr = 1e-3;
  RecordSchedule schedule;
  FreezeMask freeze; // empty means nothing frozen
  ProbeOptions probes;
};

struct ProbeRow {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double avg_gsnr_all = 0.0;
  double avg_gsnr_layer = 0.0;
  double p_same_sign_mean = 0.0;
  // Per layer; NaN where the statistic is degenerate or was not probed.
  std::vector<double> dgw_corr;
  std::vector<double> dgw_corr_top;
  std::vector<double> opp_sign;
  std::vector<double> opp_sign_top;
};

struct ProbeSeries {
  int num_layers = 0;
  std::vector<ProbeRow> rows;
  std::vector<Eigen::VectorXd> param_gsnr;       // when keep_param_gsnr
  std::vector<std::vector<bool>> param_floored;  // when keep_param_gsnr
  std::vector<Eigen::VectorXd> snapshots;        // flattened params, when keep_snapshots
};

struct TrainResult {
  MlpParams params;
  RunTrace trace;
  ProbeSeries series;
};

// Full-batch GD for cfg.epochs steps. At each recorded epoch: per-sample
// gradients on the training set, losses, probes, then the step. Throws
// NumericalError naming the epoch on a non-finite loss or gradient.
TrainResult train_with_probes(const MlpParams& init, const Dataset& train, const Dataset& test,
                              const TrainConfig& cfg);

// Flat indices of the weights of `layer`, restricted to the ceil(top_frac *
// count) largest |W| when top_frac is set. Ties keep the lower index.
std::vector<std::size_t> weight_selection(const MlpParams& params, int layer,
                                          std::optional<double> top_frac);

// Pearson correlation between g_D(theta_{t+1}) - g_D(theta_t) and W_t over the
// weights of `layer`, theta_{t+1} being one unmasked GD step on a copy.
double delta_gmean_weight_corr(const MlpParams& params, const Dataset& train, double lr, int layer,
                               std::optional<double> top_frac = std::nullopt);
// Same, with g_D(theta_t) supplied by the caller.
double delta_gmean_weight_corr(const MlpParams& params, const Eigen::VectorXd& grad_mean,
                               const Dataset& train, double lr, int layer,
                               std::optional<double> top_frac = std::nullopt);

// Fraction of the selected weights with W * g_D < 0 strictly.
double opposite_sign_ratio(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& grad_mean,
                           int layer, std::optional<double> top_frac = std::nullopt);

// Correlation of each unit of activation layer `hidden` (1 .. L-1; a^(hidden)
// is the input of layer `hidden`) with the regression target. Units with
// constant activation give std::nullopt.
std::vector<std::optional<double>> feature_target_correlation(const MlpParams& params,
                                                              const Dataset& data, int hidden);

struct GsnrCurve {
  std::vector<int> epochs;
  std::vector<double> values;         // average over the subset, floored excluded
  std::vector<int> argmax_epoch;      // per subset parameter
  std::vector<double> start_value;    // per subset parameter, first recorded epoch
  std::vector<double> peak_value;     // per subset parameter
};

// Requires a series recorded with keep_param_gsnr.
GsnrCurve gsnr_curve(const ProbeSeries& series, const ParamSubset& subset);

struct FeatureCorrRecord {
  int unit = 0;
  std::optional<double> c_t0;
  int t_max = 0;
  std::optional<double> c_tmax;
  double gsnr_start = 0.0; // GSNR of the outgoing weights at the first recorded epoch
  double gsnr_peak = 0.0;
};

// For each unit of activation layer `hidden`: correlation with the target at
// the first recorded epoch and at the epoch where the GSNR of its outgoing
// weights peaks. Needs keep_param_gsnr and keep_snapshots.
std::vector<FeatureCorrRecord> feature_corr_records(const ProbeSeries& series, const MlpSpec& spec,
                                                    const Dataset& data, int hidden);

}  // namespace gsnr
