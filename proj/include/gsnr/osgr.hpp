#pragma once

// One-step generalization ratio: the ratio of the expected one-step test-loss
// decrease to the expected one-step training-loss decrease, estimated directly
// from M parallel runs (lhs) and predicted from gradient moments (rhs).

#include "gsnr/gradstats.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace gsnr {

struct LossRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

struct MomentRecord {
  int epoch = 0;
  GradMoments moments; // on the training set, before the step
  double avg_gsnr = 0.0;
};

// Losses are kept for every recorded epoch t and for t + 1, so the one-step
// deltas at recorded epochs are always available.
struct RunTrace {
  int run_index = 0;
  Eigen::Index n = 0;
  Eigen::Index n_test = 0;
  std::vector<LossRecord> losses;     // increasing epoch
  std::vector<MomentRecord> moments;  // increasing epoch

  // Throw std::out_of_range when the epoch was not recorded.
  const LossRecord& loss_at(int epoch) const;
  const MomentRecord& moments_at(int epoch) const;
  std::vector<int> moment_epochs() const;
};

struct MomentEnsemble {
  Eigen::VectorXd mean_sq_grad; // (1/M) sum_m g_{m,j}^2
  Eigen::VectorXd mean_var;     // (1/M) sum_m rho^2_{m,j}
  int M = 0;
  Eigen::Index n = 0;
};

struct OsgrPoint {
  std::string setting_id;
  int epoch = 0;
  Eigen::Index n = 0;
  double lhs = 0.0;
  double rhs19 = 0.0;
  double rhs22 = 0.0;
};

// sum_m (L'_{t+1} - L'_t) / sum_m (L_{t+1} - L_t). Throws NumericalError when
// the training-loss denominator is zero.
double osgr_lhs(std::span<const RunTrace> traces, int epoch);

// Throws std::invalid_argument for M < 2 or mismatched shapes.
MomentEnsemble ensemble_moments(std::span<const GradMoments> per_run);
// Ensemble of the moments recorded at `epoch` by every run.
MomentEnsemble ensemble_at(std::span<const RunTrace> traces, int epoch);

// 1 - sum_j rho^2_j / (n sum_j E(g_D,j^2)).
double osgr_rhs19(const MomentEnsemble& e);

// 1 - (1/n) sum_j W_j / (r_j + 1/n), with W_j = E(g_D,j^2) / sum E(g_D,j'^2)
// and r_j + 1/n = E(g_D,j^2) / rho^2_j.
double osgr_rhs22(const MomentEnsemble& e);

// The per-parameter weights W_j; they sum to one.
Eigen::VectorXd loss_decrease_weights(const MomentEnsemble& e);

// Expected one-step growth of the generalization gap to first order in lr:
// lr * sum_j rho^2_j / n.
double gap_increment_expectation(const Eigen::Ref<const Eigen::VectorXd>& rho2, Eigen::Index n,
                                 double lr);

}  // namespace gsnr
