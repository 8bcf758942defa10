#include "gsnr/dynamics.hpp"

#include "gsnr/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gsnr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void warn_large_lr(double lr) {
  static std::atomic<bool> warned{false};
  if (lr > 0.01 && !warned.exchange(true)) {
    std::fprintf(stderr, "warning: learning rate %g is above 0.01; first-order relations may not hold\n", lr);
  }
}

void check_finite_loss(double loss, int epoch, const char* which) {
  if (!std::isfinite(loss)) {
    throw NumericalError(fmt::format("non-finite {} loss at epoch {}", which, epoch));
  }
}

double degenerate_to_nan(auto&& fn) {
  try {
    return fn();
  } catch (const DegenerateInputError&) {
    return kNaN;
  }
}

}  // namespace

TrainResult train_with_probes(const MlpParams& init, const Dataset& train, const Dataset& test,
                              const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (cfg.schedule.every < 1) throw std::invalid_argument("record schedule step must be >= 1");
  if (!(cfg.lr >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  warn_large_lr(cfg.lr);

  const MlpSpec& spec = init.spec;
  const std::size_t count = spec.param_count();
  const FreezeMask mask = cfg.freeze.size() == 0 ? FreezeMask::none(count) : cfg.freeze;
  if (mask.size() != count) throw std::invalid_argument("freeze mask length differs from parameter count");
  const ProbeOptions& probes = cfg.probes;
  const int layers = spec.num_layers();
  const ParamSubset everything = all_params(count);
  const bool has_gsnr_layer = probes.gsnr_layer >= 0 && probes.gsnr_layer < layers;
  const ParamSubset gsnr_subset = has_gsnr_layer ? layer_params(spec, probes.gsnr_layer) : ParamSubset{};

  TrainResult out;
  out.params = init;
  out.trace.n = train.size();
  out.trace.n_test = test.size();
  out.series.num_layers = layers;

  auto record_losses = [&](int epoch) {
    LossRecord rec{epoch, batch_loss(out.params, train), batch_loss(out.params, test)};
    check_finite_loss(rec.train_loss, epoch, "training");
    check_finite_loss(rec.test_loss, epoch, "test");
    out.trace.losses.push_back(rec);
    return rec;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool recorded = cfg.schedule.recorded(epoch);
    const bool after_recorded = epoch > 0 && cfg.schedule.recorded(epoch - 1);

    if (!recorded) {
      if (after_recorded) record_losses(epoch);
      const Eigen::VectorXd grad = batch_grad(out.params, train);
      try {
        out.params = gd_step(out.params, grad, cfg.lr, mask);
      } catch (const NumericalError& e) {
        throw NumericalError(fmt::format("epoch {}: {}", epoch, e.what()));
      }
      continue;
    }

    const LossRecord losses = record_losses(epoch);
    const GradMatrix g = per_sample_grads(out.params, train);
    const GradMoments m = moments(g);
    const Eigen::VectorXd& grad = m.mean;
    const GsnrVector r = gsnr(m);

    ProbeRow row;
    row.epoch = epoch;
    row.train_loss = losses.train_loss;
    row.test_loss = losses.test_loss;
    row.avg_gsnr_all = degenerate_to_nan([&] { return avg_gsnr(r, everything).value; });
    row.avg_gsnr_layer =
        has_gsnr_layer ? degenerate_to_nan([&] { return avg_gsnr(r, gsnr_subset).value; }) : kNaN;
    row.p_same_sign_mean = probes.sign_stats ? same_sign_proportion(g).mean_p_same_sign() : kNaN;
    row.dgw_corr.assign(static_cast<std::size_t>(layers), kNaN);
    row.dgw_corr_top.assign(static_cast<std::size_t>(layers), kNaN);
    row.opp_sign.assign(static_cast<std::size_t>(layers), kNaN);
    row.opp_sign_top.assign(static_cast<std::size_t>(layers), kNaN);
    if (probes.weight_dynamics) {
      for (int l = 0; l < layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        row.opp_sign[li] = opposite_sign_ratio(out.params, grad, l);
        row.opp_sign_top[li] = opposite_sign_ratio(out.params, grad, l, probes.top_frac);
        if (spec.weight_range(l).size < 3 || cfg.lr == 0.0) continue;
        row.dgw_corr[li] = degenerate_to_nan(
            [&] { return delta_gmean_weight_corr(out.params, grad, train, cfg.lr, l); });
        row.dgw_corr_top[li] = degenerate_to_nan([&] {
          return delta_gmean_weight_corr(out.params, grad, train, cfg.lr, l, probes.top_frac);
        });
      }
    }
    out.series.rows.push_back(std::move(row));
    if (probes.keep_param_gsnr) {
      out.series.param_gsnr.push_back(r.r);
      out.series.param_floored.push_back(r.floored);
    }
    if (probes.keep_snapshots) out.series.snapshots.push_back(out.params.flatten());
    out.trace.moments.push_back(MomentRecord{epoch, m, out.series.rows.back().avg_gsnr_all});

    try {
      out.params = gd_step(out.params, grad, cfg.lr, mask);
    } catch (const NumericalError& e) {
      throw NumericalError(fmt::format("epoch {}: {}", epoch, e.what()));
    }
  }
  if (cfg.schedule.recorded(cfg.epochs - 1)) record_losses(cfg.epochs);
  return out;
}

std::vector<std::size_t> weight_selection(const MlpParams& params, int layer,
                                          std::optional<double> top_frac) {
  const ParamRange w = params.spec.weight_range(layer);
  std::vector<std::size_t> idx(w.size);
  std::iota(idx.begin(), idx.end(), w.offset);
  if (!top_frac) return idx;
  if (!(*top_frac > 0.0 && *top_frac <= 1.0)) throw std::invalid_argument("top_frac must lie in (0, 1]");
  const Eigen::VectorXd flat = params.flatten();
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(flat[static_cast<Eigen::Index>(a)]) > std::abs(flat[static_cast<Eigen::Index>(b)]);
  });
  const auto keep = static_cast<std::size_t>(std::ceil(*top_frac * static_cast<double>(w.size) - 1e-9));
  idx.resize(std::max<std::size_t>(1, std::min(keep, w.size)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

double delta_gmean_weight_corr(const MlpParams& params, const Eigen::VectorXd& grad_mean,
                               const Dataset& train, double lr, int layer,
                               std::optional<double> top_frac) {
  if (params.spec.weight_range(layer).size < 3) {
    throw std::invalid_argument("delta_gmean_weight_corr needs a layer with >= 3 weights");
  }
  const MlpParams next = gd_step(params, grad_mean, lr, FreezeMask::none(params.size()));
  const Eigen::VectorXd grad_next = batch_grad(next, train);
  const Eigen::VectorXd flat = params.flatten();
  const std::vector<std::size_t> sel = weight_selection(params, layer, top_frac);
  if (sel.size() < 2) throw DegenerateInputError("delta_gmean_weight_corr: fewer than two selected weights");
  Eigen::VectorXd dg(static_cast<Eigen::Index>(sel.size()));
  Eigen::VectorXd w(static_cast<Eigen::Index>(sel.size()));
  for (std::size_t k = 0; k < sel.size(); ++k) {
    const auto j = static_cast<Eigen::Index>(sel[k]);
    dg[static_cast<Eigen::Index>(k)] = grad_next[j] - grad_mean[j];
    w[static_cast<Eigen::Index>(k)] = flat[j];
  }
  return pearson(dg, w);
}

double delta_gmean_weight_corr(const MlpParams& params, const Dataset& train, double lr, int layer,
                               std::optional<double> top_frac) {
  return delta_gmean_weight_corr(params, batch_grad(params, train), train, lr, layer, top_frac);
}

double opposite_sign_ratio(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& grad_mean,
                           int layer, std::optional<double> top_frac) {
  const std::vector<std::size_t> sel = weight_selection(params, layer, top_frac);
  if (sel.empty()) throw std::invalid_argument("opposite_sign_ratio over an empty layer");
  const Eigen::VectorXd flat = params.flatten();
  std::size_t opposite = 0;
  for (std::size_t j : sel) {
    const auto i = static_cast<Eigen::Index>(j);
    if (flat[i] * grad_mean[i] < 0.0) ++opposite;
  }
  return static_cast<double>(opposite) / static_cast<double>(sel.size());
}

std::vector<std::optional<double>> feature_target_correlation(const MlpParams& params,
                                                              const Dataset& data, int hidden) {
  if (data.spec.task != Task::regression) {
    throw std::invalid_argument("feature_target_correlation needs a regression dataset");
  }
  if (data.size() == 0) throw std::invalid_argument("feature_target_correlation on an empty dataset");
  if (hidden < 1 || hidden >= params.spec.num_layers()) {
    throw std::out_of_range(fmt::format("hidden layer {} out of range [1, {})", hidden,
                                        params.spec.num_layers()));
  }
  const BatchForward fwd = forward_batch(params, data.inputs);
  const RowMatrix& act = fwd.activations[static_cast<std::size_t>(hidden)];
  std::vector<std::optional<double>> out;
  out.reserve(static_cast<std::size_t>(act.cols()));
  for (Eigen::Index s = 0; s < act.cols(); ++s) {
    const Eigen::VectorXd unit = act.col(s);
    try {
      out.emplace_back(pearson(unit, data.targets));
    } catch (const DegenerateInputError&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

GsnrCurve gsnr_curve(const ProbeSeries& series, const ParamSubset& subset) {
  if (series.rows.empty()) throw std::invalid_argument("gsnr_curve on an empty series");
  if (series.param_gsnr.size() != series.rows.size()) {
    throw std::invalid_argument("gsnr_curve needs a series recorded with keep_param_gsnr");
  }
  GsnrCurve c;
  c.argmax_epoch.assign(subset.size(), series.rows.front().epoch);
  c.start_value.assign(subset.size(), kNaN);
  c.peak_value.assign(subset.size(), -1.0);
  for (std::size_t t = 0; t < series.rows.size(); ++t) {
    const int epoch = series.rows[t].epoch;
    const Eigen::VectorXd& r = series.param_gsnr[t];
    const std::vector<bool>& floored = series.param_floored[t];
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t k = 0; k < subset.size(); ++k) {
      const std::size_t j = subset[k];
      if (floored[j]) continue;
      const double v = r[static_cast<Eigen::Index>(j)];
      sum += v;
      ++used;
      if (t == 0) c.start_value[k] = v;
      if (v > c.peak_value[k]) {
        c.peak_value[k] = v;
        c.argmax_epoch[k] = epoch;
      }
    }
    c.epochs.push_back(epoch);
    c.values.push_back(used == 0 ? kNaN : sum / static_cast<double>(used));
  }
  return c;
}

std::vector<FeatureCorrRecord> feature_corr_records(const ProbeSeries& series, const MlpSpec& spec,
                                                    const Dataset& data, int hidden) {
  if (series.snapshots.size() != series.rows.size()) {
    throw std::invalid_argument("feature_corr_records needs a series recorded with keep_snapshots");
  }
  const ParamRange w = spec.weight_range(hidden);
  const int units = spec.fan_in(hidden);
  const int outputs = spec.fan_out(hidden);
  const auto start = feature_target_correlation(MlpParams::unflatten(spec, series.snapshots.front()),
                                                data, hidden);
  std::vector<FeatureCorrRecord> records;
  for (int s = 0; s < units; ++s) {
    ParamSubset outgoing;
    for (int c = 0; c < outputs; ++c) outgoing.push_back(w.offset + static_cast<std::size_t>(c * units + s));
    const GsnrCurve curve = gsnr_curve(series, outgoing);
    FeatureCorrRecord rec;
    rec.unit = s;
    rec.c_t0 = start[static_cast<std::size_t>(s)];
    std::size_t best = 0;
    double best_value = -1.0;
    for (std::size_t t = 0; t < curve.values.size(); ++t) {
      if (curve.values[t] > best_value) {  // NaN never compares greater
        best_value = curve.values[t];
        best = t;
      }
    }
    rec.t_max = curve.epochs[best];
    rec.gsnr_start = curve.values.front();
    rec.gsnr_peak = best_value;
    rec.c_tmax = feature_target_correlation(MlpParams::unflatten(spec, series.snapshots[best]), data,
                                            hidden)[static_cast<std::size_t>(s)];
    records.push_back(rec);
  }
  return records;
}

}  // namespace gsnr
