#include "gsnr/osgr.hpp"

#include "gsnr/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>

namespace gsnr {

namespace {

template <typename Record>
const Record& find_epoch(const std::vector<Record>& records, int epoch, const char* what) {
  auto it = std::lower_bound(records.begin(), records.end(), epoch,
                             [](const Record& r, int e) { return r.epoch < e; });
  if (it == records.end() || it->epoch != epoch) {
    throw std::out_of_range(fmt::format("run trace has no {} for epoch {}", what, epoch));
  }
  return *it;
}

}  // namespace

const LossRecord& RunTrace::loss_at(int epoch) const { return find_epoch(losses, epoch, "losses"); }

const MomentRecord& RunTrace::moments_at(int epoch) const {
  return find_epoch(moments, epoch, "gradient moments");
}

std::vector<int> RunTrace::moment_epochs() const {
  std::vector<int> out;
  out.reserve(moments.size());
  for (const auto& m : moments) out.push_back(m.epoch);
  return out;
}

double osgr_lhs(std::span<const RunTrace> traces, int epoch) {
  if (traces.empty()) throw std::invalid_argument("osgr_lhs needs at least one run");
  double test_delta = 0.0;
  double train_delta = 0.0;
  for (const RunTrace& tr : traces) {
    const LossRecord& now = tr.loss_at(epoch);
    const LossRecord& next = tr.loss_at(epoch + 1);
    test_delta += next.test_loss - now.test_loss;
    train_delta += next.train_loss - now.train_loss;
  }
  if (train_delta == 0.0) {
    throw NumericalError(fmt::format("training stalled at epoch {}: zero summed loss change", epoch));
  }
  return test_delta / train_delta;
}

MomentEnsemble ensemble_moments(std::span<const GradMoments> per_run) {
  if (per_run.size() < 2) throw std::invalid_argument("ensemble_moments needs M >= 2 runs");
  const Eigen::Index params = per_run.front().mean.size();
  const Eigen::Index n = per_run.front().n;
  MomentEnsemble e;
  e.M = static_cast<int>(per_run.size());
  e.n = n;
  e.mean_sq_grad = Eigen::VectorXd::Zero(params);
  e.mean_var = Eigen::VectorXd::Zero(params);
  for (const GradMoments& m : per_run) {
    if (m.mean.size() != params || m.var.size() != params || m.n != n) {
      throw std::invalid_argument("ensemble_moments: runs differ in parameter count or n");
    }
    e.mean_sq_grad += m.mean.cwiseProduct(m.mean);
    e.mean_var += m.var;
  }
  e.mean_sq_grad /= static_cast<double>(e.M);
  e.mean_var /= static_cast<double>(e.M);
  return e;
}

MomentEnsemble ensemble_at(std::span<const RunTrace> traces, int epoch) {
  std::vector<GradMoments> per_run;
  per_run.reserve(traces.size());
  for (const RunTrace& tr : traces) per_run.push_back(tr.moments_at(epoch).moments);
  return ensemble_moments(per_run);
}

namespace {

double total_mean_sq_grad(const MomentEnsemble& e) {
  const double total = e.mean_sq_grad.sum();
  if (!(total > 0.0)) throw NumericalError("OSGR prediction undefined: all mean gradients are zero");
  return total;
}

}  // namespace

double osgr_rhs19(const MomentEnsemble& e) {
  const double total = total_mean_sq_grad(e);
  return 1.0 - e.mean_var.sum() / (static_cast<double>(e.n) * total);
}

Eigen::VectorXd loss_decrease_weights(const MomentEnsemble& e) {
  return e.mean_sq_grad / total_mean_sq_grad(e);
}

double osgr_rhs22(const MomentEnsemble& e) {
  const double total = total_mean_sq_grad(e);
  double weighted = 0.0;
  for (Eigen::Index j = 0; j < e.mean_sq_grad.size(); ++j) {
    const double rho2 = e.mean_var[j];
    const double sq = e.mean_sq_grad[j];
    if (rho2 == 0.0) continue;  // 1 / (r_j + 1/n) -> 0
    if (sq == 0.0) {
      // W_j -> 0 while 1 / (r_j + 1/n) -> inf; the product tends to rho2 / total.
      weighted += rho2 / total;
      continue;
    }
    const double w = sq / total;
    const double r_plus_inv_n = sq / rho2;
    weighted += w / r_plus_inv_n;
  }
  return 1.0 - weighted / static_cast<double>(e.n);
}

double gap_increment_expectation(const Eigen::Ref<const Eigen::VectorXd>& rho2, Eigen::Index n,
                                 double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("gap_increment_expectation needs lr > 0");
  if (n < 1) throw std::invalid_argument("gap_increment_expectation needs n >= 1");
  return lr * rho2.sum() / static_cast<double>(n);
}

}  // namespace gsnr
