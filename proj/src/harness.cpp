#include "gsnr/harness.hpp"

#include "gsnr/errors.hpp"
#include "gsnr/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <stdexcept>
#include <thread>

namespace gsnr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs fn(0..count-1) on up to `jobs` threads. Each index owns its output
// slot, so results do not depend on scheduling. The lowest-index failure is
// rethrown after all workers join.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> workers;
    const auto threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string format_setting_id(const GridSetting& s, Task task) {
  if (task == Task::regression) return fmt::format("n{}-w{}-eta{}", s.n, s.width, s.noise);
  return fmt::format("n{}-w{}-p{}", s.n, s.width, s.p_random);
}

}  // namespace

LineFit fit_line(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 2) throw std::invalid_argument("fit_line needs at least two points");
  const auto n = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
  }
  if (!(sxx > 0.0)) throw DegenerateInputError("fit_line: all x values are equal");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

const EpochFit& GridResult::fit_at(int epoch) const {
  for (const EpochFit& f : fits) {
    if (f.epoch == epoch) return f;
  }
  throw std::out_of_range(fmt::format("grid result has no fit for epoch {}", epoch));
}

std::vector<GridSetting> grid_settings(const ExperimentConfig& cfg) {
  const bool regression = cfg.data.task == Task::regression;
  const std::vector<double>& levels = regression ? cfg.grid.noise : cfg.grid.p_random;
  std::vector<GridSetting> out;
  for (int n : cfg.grid.n) {
    for (double level : levels) {
      for (int width : cfg.grid.width) {
        GridSetting s;
        s.n = n;
        s.width = width;
        if (regression) {
          s.noise = level;
        } else {
          s.p_random = level;
        }
        s.id = format_setting_id(s, cfg.data.task);
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

std::vector<OsgrPoint> run_osgr_setting(const ExperimentConfig& cfg, const GridSetting& setting,
                                        std::uint64_t setting_seed, int jobs) {
  DataSpec spec = cfg.data;
  if (spec.task == Task::regression) spec.noise_half_width = setting.noise;
  const MlpSpec model = cfg.model_with_width(setting.width);
  const MlpParams init = init_params(model, derive_seed(setting_seed, 0));
  DatasetBundle bundle = split_bundle(spec, cfg.M, setting.n, cfg.n_test, derive_seed(setting_seed, 1));
  if (spec.task == Task::classification && setting.p_random > 0.0) {
    // Label noise is part of the distribution, so the test set carries it too.
    const std::uint64_t base = derive_seed(setting_seed, 2);
    bundle.test_set = corrupt_labels(bundle.test_set, setting.p_random, derive_seed(base, 0));
    for (int m = 0; m < bundle.M(); ++m) {
      bundle.train_sets[static_cast<std::size_t>(m)] =
          corrupt_labels(bundle.train_sets[static_cast<std::size_t>(m)], setting.p_random,
                         derive_seed(base, static_cast<std::uint64_t>(m) + 1));
    }
  }

  TrainConfig tc = cfg.train;
  tc.freeze = FreezeMask{};
  tc.probes = ProbeOptions{};
  tc.probes.sign_stats = false;

  std::vector<RunTrace> traces(static_cast<std::size_t>(cfg.M));
  try {
    parallel_for(traces.size(), jobs, [&](std::size_t m) {
      traces[m] = train_with_probes(init, bundle.train_sets[m], bundle.test_set, tc).trace;
      traces[m].run_index = static_cast<int>(m);
    });
  } catch (const NumericalError& e) {
    throw NumericalError(fmt::format("setting {}: {}", setting.id, e.what()));
  }

  std::vector<OsgrPoint> points;
  for (int epoch : traces.front().moment_epochs()) {
    OsgrPoint p;
    p.setting_id = setting.id;
    p.epoch = epoch;
    p.n = setting.n;
    try {
      p.lhs = osgr_lhs(traces, epoch);
    } catch (const NumericalError& e) {
      throw NumericalError(fmt::format("setting {}: {}", setting.id, e.what()));
    }
    const MomentEnsemble ens = ensemble_at(traces, epoch);
    p.rhs19 = osgr_rhs19(ens);
    p.rhs22 = osgr_rhs22(ens);
    points.push_back(std::move(p));
  }
  return points;
}

GridResult run_osgr_grid(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::osgr_verify) throw ConfigError("run_osgr_grid needs kind osgr_verify");
  cfg.validate();
  GridResult result;
  result.settings = grid_settings(cfg);
  for (std::size_t k = 0; k < result.settings.size(); ++k) {
    auto pts = run_osgr_setting(cfg, result.settings[k], derive_seed(cfg.seed, k), cfg.jobs);
    result.points.insert(result.points.end(), pts.begin(), pts.end());
  }

  std::vector<int> epochs;
  for (const OsgrPoint& p : result.points) epochs.push_back(p.epoch);
  std::sort(epochs.begin(), epochs.end());
  epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());
  for (int epoch : epochs) {
    std::vector<std::pair<double, double>> xy;
    std::vector<double> lhs, rhs;
    for (const OsgrPoint& p : result.points) {
      if (p.epoch != epoch) continue;
      xy.emplace_back(p.rhs19, p.lhs);
      rhs.push_back(p.rhs19);
      lhs.push_back(p.lhs);
    }
    EpochFit fit;
    fit.epoch = epoch;
    fit.n_points = xy.size();
    fit.pearson = kNaN;
    fit.slope = kNaN;
    fit.intercept = kNaN;
    if (xy.size() >= 2) {
      try {
        fit.pearson = pearson(lhs, rhs);
        const LineFit line = fit_line(xy);
        fit.slope = line.slope;
        fit.intercept = line.intercept;
      } catch (const DegenerateInputError&) {
      }
    }
    result.fits.push_back(fit);
  }
  return result;
}

std::map<std::string, TrainResult> run_gsnr_experiment(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::gsnr_curve) throw ConfigError("run_gsnr_experiment needs kind gsnr_curve");
  cfg.validate();
  const MlpSpec model = cfg.model();
  const MlpParams init = init_params(model, derive_seed(cfg.seed, 0));
  DataSpec train_spec = cfg.data;
  DataSpec test_spec = cfg.data;
  test_spec.n = cfg.n_test;
  const Dataset train = generate(train_spec, derive_seed(cfg.seed, 1));
  const Dataset test = generate(test_spec, derive_seed(cfg.seed, 2));

  TrainConfig base = cfg.train;
  base.probes.sign_stats = true;
  base.probes.keep_param_gsnr = true;
  base.probes.gsnr_layer = 1;

  struct Arm {
    std::string name;
    Dataset train;
    TrainConfig cfg;
  };
  std::vector<Arm> arms;
  if (cfg.data.task == Task::regression) {
    TrainConfig open = base;
    open.freeze = FreezeMask{};
    TrainConfig frozen = base;
    frozen.freeze = FreezeMask::layers(model, {0});
    arms.push_back({"nonfrozen", train, open});
    arms.push_back({"frozen", train, frozen});
  } else {
    arms.push_back({"real", train, base});
    arms.push_back({"random", corrupt_labels(train, cfg.p_random, derive_seed(cfg.seed, 3)), base});
  }

  std::vector<TrainResult> results(arms.size());
  parallel_for(arms.size(), cfg.jobs,
               [&](std::size_t a) { results[a] = train_with_probes(init, arms[a].train, test, arms[a].cfg); });
  std::map<std::string, TrainResult> out;
  for (std::size_t a = 0; a < arms.size(); ++a) out.emplace(arms[a].name, std::move(results[a]));
  return out;
}

DynamicsResult run_dynamics_experiment(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::dynamics) throw ConfigError("run_dynamics_experiment needs kind dynamics");
  cfg.validate();
  const MlpSpec model = cfg.model();
  const MlpParams init = init_params(model, derive_seed(cfg.seed, 0));
  DataSpec test_spec = cfg.data;
  test_spec.n = cfg.n_test;
  const Dataset train = generate(cfg.data, derive_seed(cfg.seed, 1));
  const Dataset test = generate(test_spec, derive_seed(cfg.seed, 2));

  TrainConfig tc = cfg.train;
  tc.probes.weight_dynamics = true;
  tc.probes.keep_param_gsnr = true;
  tc.probes.keep_snapshots = cfg.data.task == Task::regression && model.num_layers() >= 2;
  tc.probes.gsnr_layer = 1;

  DynamicsResult out;
  out.run = train_with_probes(init, train, test, tc);
  if (tc.probes.keep_snapshots) {
    out.features = feature_corr_records(out.run.series, model, test, 1);
    out.run.series.snapshots.clear();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo identity checks

double gap_increment(const MlpParams& params, const Dataset& train, const Dataset& other, double lr) {
  const MlpParams next = gd_step(params, batch_grad(params, train), lr, FreezeMask::none(params.size()));
  const double train_drop = batch_loss(params, train) - batch_loss(next, train);
  const double other_drop = batch_loss(params, other) - batch_loss(next, other);
  return train_drop - other_drop;
}

namespace {

Eigen::VectorXd reference_variance(const DataSpec& spec, const MlpParams& params, int n, int reference_size,
                                   std::uint64_t seed) {
  DataSpec ref_spec = spec;
  ref_spec.n = reference_size > 0 ? reference_size : std::max(100 * n, 50000);
  const Dataset ref = generate(ref_spec, seed);
  return moments(per_sample_grads(params, ref)).var;
}

}  // namespace

VarianceCheck check_variance_relation(const DataSpec& spec, const MlpSpec& model, int n, int trials,
                                      std::uint64_t seed, int reference_size) {
  if (trials < 2) throw std::invalid_argument("check_variance_relation needs trials >= 2");
  if (n < 1) throw std::invalid_argument("check_variance_relation needs n >= 1");
  const MlpParams params = init_params(model, derive_seed(seed, 0));
  DataSpec trial_spec = spec;
  trial_spec.n = n;
  const std::uint64_t trial_base = derive_seed(seed, 1);

  RowMatrix means(trials, static_cast<Eigen::Index>(params.size()));
  for (int k = 0; k < trials; ++k) {
    means.row(k) = batch_grad(params, generate(trial_spec, derive_seed(trial_base, static_cast<std::uint64_t>(k))))
                       .transpose();
  }
  const Eigen::RowVectorXd centre = means.colwise().mean();
  double empirical = 0.0;
  for (Eigen::Index j = 0; j < means.cols(); ++j) {
    empirical += (means.col(j).array() - centre[j]).square().sum() / static_cast<double>(trials - 1);
  }

  VarianceCheck out;
  out.trials = trials;
  out.n = n;
  out.empirical = empirical;
  out.predicted = reference_variance(spec, params, n, reference_size, derive_seed(seed, 2)).sum() /
                  static_cast<double>(n);
  out.relative_error = std::abs(out.empirical - out.predicted) / out.predicted;
  return out;
}

GapCheck check_gap_increment(const DataSpec& spec, const MlpSpec& model, int n, double lr, int trials,
                             std::uint64_t seed, int reference_size) {
  if (!(lr > 0.0)) throw std::invalid_argument("check_gap_increment needs lr > 0");
  if (trials < 2) throw std::invalid_argument("check_gap_increment needs trials >= 2");
  const MlpParams params = init_params(model, derive_seed(seed, 0));
  DataSpec trial_spec = spec;
  trial_spec.n = n;
  const std::uint64_t train_base = derive_seed(seed, 3);
  const std::uint64_t other_base = derive_seed(seed, 4);

  double sum = 0.0, sum_sq = 0.0, sum_half = 0.0;
  for (int k = 0; k < trials; ++k) {
    const Dataset d = generate(trial_spec, derive_seed(train_base, static_cast<std::uint64_t>(k)));
    const Dataset d_other = generate(trial_spec, derive_seed(other_base, static_cast<std::uint64_t>(k)));
    const double gap = gap_increment(params, d, d_other, lr);
    sum += gap;
    sum_sq += gap * gap;
    sum_half += gap_increment(params, d, d_other, 0.5 * lr);
  }
  GapCheck out;
  out.trials = trials;
  out.n = n;
  out.lr = lr;
  out.mean_gap = sum / trials;
  const double var = std::max(0.0, (sum_sq - trials * out.mean_gap * out.mean_gap) / (trials - 1));
  out.standard_error = std::sqrt(var / trials);
  out.predicted = gap_increment_expectation(
      reference_variance(spec, params, n, reference_size, derive_seed(seed, 2)), n, lr);
  out.relative_error = std::abs(out.mean_gap - out.predicted) / out.predicted;
  out.mean_gap_half_lr = sum_half / trials;
  out.halving_ratio = out.mean_gap_half_lr / out.mean_gap;
  return out;
}

bool IdentityReport::halving_pass() const {
  return std::abs(gap.halving_ratio - 0.5) <= 0.5 * halving_tolerance;
}

IdentityReport run_identity_checks(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::check_identities) {
    throw ConfigError("run_identity_checks needs kind check_identities");
  }
  cfg.validate();
  const IdentityConfig& ic = cfg.identities;
  const MlpSpec model = cfg.model();
  IdentityReport report;
  report.variance_tolerance = ic.variance_tolerance;
  report.gap_tolerance = ic.gap_tolerance;
  report.halving_tolerance = ic.halving_tolerance;
  report.variance = check_variance_relation(cfg.data, model, ic.n, ic.trials, cfg.seed, ic.reference_size);
  report.gap = check_gap_increment(cfg.data, model, ic.n, ic.lr, ic.gap_trials, cfg.seed, ic.reference_size);
  return report;
}

}  // namespace gsnr
