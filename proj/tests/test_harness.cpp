#include "doctest.h"

#include "helpers.hpp"

#include "gsnr/config.hpp"
#include "gsnr/errors.hpp"
#include "gsnr/harness.hpp"
#include "gsnr/rng.hpp"

#include <cmath>
#include <set>

using namespace gsnr;

namespace {

ExperimentConfig small_grid(int jobs = 1) {
  ExperimentConfig cfg = parse_config(R"(
[experiment]
kind = "osgr_verify"
seed = 11
[data]
task = "regression"
n_test = 400
[model]
hidden = [6]
[train]
epochs = 12
lr = 0.01
dense_until = 3
record_every = 5
[grid]
n = [20, 40]
noise = [0.2, 2.0]
width = [4, 6]
M = 3
)");
  cfg.jobs = jobs;
  return cfg;
}

DataSpec reg_spec() {
  DataSpec s;
  s.task = Task::regression;
  s.input_dim = 2;
  s.noise_half_width = 0.2;
  return s;
}

}  // namespace

TEST_CASE("line fit") {
  const LineFit a = fit_line({{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}});
  CHECK(a.slope == doctest::Approx(1.0));
  CHECK(a.intercept == doctest::Approx(0.0));
  const LineFit b = fit_line({{0.0, 1.0}, {1.0, 3.0}});
  CHECK(b.slope == doctest::Approx(2.0));
  CHECK(b.intercept == doctest::Approx(1.0));
  const LineFit flat = fit_line({{-1.0, 4.0}, {3.0, 4.0}, {7.0, 4.0}});
  CHECK(flat.slope == 0.0);
  CHECK(flat.intercept == doctest::Approx(4.0));
  // Least squares through (0,0), (1,1), (2,1): slope 1/2, intercept 1/6.
  const LineFit c = fit_line({{0.0, 0.0}, {1.0, 1.0}, {2.0, 1.0}});
  CHECK(c.slope == doctest::Approx(0.5));
  CHECK(c.intercept == doctest::Approx(1.0 / 6.0));
  CHECK_THROWS_AS(fit_line({{1.0, 0.0}, {1.0, 2.0}}), DegenerateInputError);
  CHECK_THROWS_AS(fit_line({{1.0, 0.0}}), std::invalid_argument);
}

TEST_CASE("grid settings are ordered by n, then noise, then width") {
  const std::vector<GridSetting> s = grid_settings(small_grid());
  REQUIRE(s.size() == 8);
  CHECK(s[0].n == 20);
  CHECK(s[0].noise == 0.2);
  CHECK(s[0].width == 4);
  CHECK(s[1].width == 6);
  CHECK(s[2].noise == 2.0);
  CHECK(s[4].n == 40);
  CHECK(s[7].n == 40);
  CHECK(s[7].noise == 2.0);
  CHECK(s[7].width == 6);
  std::set<std::string> ids;
  for (const auto& g : s) ids.insert(g.id);
  CHECK(ids.size() == s.size());
}

TEST_CASE("a grid run yields one point per setting and recorded epoch") {
  const ExperimentConfig cfg = small_grid();
  const GridResult r = run_osgr_grid(cfg);
  // Recorded epochs over 12 epochs with dense_until 3, every 5: 0 1 2 5 10.
  const std::size_t per_setting = 5;
  CHECK(r.points.size() == r.settings.size() * per_setting);
  CHECK(r.fits.size() == per_setting);
  for (const OsgrPoint& p : r.points) {
    CHECK(p.rhs19 <= 1.0);
    CHECK(std::abs(p.rhs19 - p.rhs22) <= 1e-12 * std::max(1.0, std::abs(p.rhs19)));
    CHECK(std::isfinite(p.lhs));
  }
  for (const EpochFit& f : r.fits) CHECK(f.n_points == r.settings.size());
  CHECK(r.fit_at(10).epoch == 10);
  CHECK_THROWS_AS(r.fit_at(3), std::out_of_range);
}

TEST_CASE("grid results do not depend on the thread count") {
  const GridResult a = run_osgr_grid(small_grid(1));
  const GridResult b = run_osgr_grid(small_grid(3));
  const GridResult c = run_osgr_grid(small_grid(1));
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t k = 0; k < a.points.size(); ++k) {
    CHECK(a.points[k].setting_id == b.points[k].setting_id);
    CHECK(a.points[k].lhs == b.points[k].lhs);
    CHECK(a.points[k].rhs19 == b.points[k].rhs19);
    CHECK(a.points[k].lhs == c.points[k].lhs);
  }
}

TEST_CASE("the grid runner rejects other experiment kinds") {
  ExperimentConfig cfg = small_grid();
  cfg.kind = ExperimentKind::dynamics;
  CHECK_THROWS_AS(run_osgr_grid(cfg), ConfigError);
}

TEST_CASE("gap increment against the training set itself is zero") {
  const MlpSpec model = MlpSpec::regression({2, 8, 1});
  const MlpParams p = init_params(model, 3);
  const Dataset d = testing::regression_data(30, 4);
  CHECK(gap_increment(p, d, d, 0.01) == 0.0);
  CHECK(gap_increment(p, d, testing::regression_data(30, 5), 0.0) == 0.0);
}

TEST_CASE("variance of the mean gradient falls as one over n") {
  const MlpSpec model = MlpSpec::regression({2, 8, 1});
  // At n = 1 the batch gradient is a single-sample gradient, so the variance
  // over trials is the per-sample variance itself.
  const VarianceCheck one = check_variance_relation(reg_spec(), model, 1, 4000, 17, 40000);
  CHECK(one.relative_error < 0.08);
  const VarianceCheck ten = check_variance_relation(reg_spec(), model, 10, 4000, 17, 40000);
  const VarianceCheck twenty = check_variance_relation(reg_spec(), model, 20, 4000, 17, 40000);
  CHECK(ten.predicted == doctest::Approx(one.predicted / 10.0).epsilon(1e-12));
  CHECK(ten.empirical / twenty.empirical == doctest::Approx(2.0).epsilon(0.1));
  CHECK_THROWS(check_variance_relation(reg_spec(), model, 0, 10, 1));
  CHECK_THROWS(check_variance_relation(reg_spec(), model, 10, 1, 1));
}

TEST_CASE("expected gap scales with the learning rate") {
  const MlpSpec model = MlpSpec::regression({2, 8, 1});
  const GapCheck a = check_gap_increment(reg_spec(), model, 20, 1e-4, 50, 23, 20000);
  const GapCheck b = check_gap_increment(reg_spec(), model, 20, 1e-5, 50, 23, 20000);
  CHECK(b.predicted == doctest::Approx(a.predicted / 10.0).epsilon(1e-12));
  // Same datasets, so the measured gaps scale too, up to second-order terms.
  CHECK(b.mean_gap == doctest::Approx(a.mean_gap / 10.0).epsilon(1e-3));
  CHECK(a.halving_ratio == doctest::Approx(0.5).epsilon(1e-3));
  CHECK(a.standard_error > 0.0);
  CHECK_THROWS(check_gap_increment(reg_spec(), model, 20, 0.0, 50, 23));
}

TEST_CASE("identity report thresholds") {
  IdentityReport r;
  r.variance.relative_error = 0.049;
  r.gap.relative_error = 0.099;
  r.gap.halving_ratio = 0.53;
  CHECK(r.pass());
  r.gap.halving_ratio = 0.42;
  CHECK_FALSE(r.halving_pass());
  r.gap.halving_ratio = 0.5;
  r.variance.relative_error = 0.051;
  CHECK_FALSE(r.pass());
}

TEST_CASE("regression GSNR experiment has matched arms") {
  ExperimentConfig cfg = parse_config(R"(
[experiment]
kind = "gsnr_curve"
seed = 4
[data]
task = "regression"
n = 40
n_test = 200
[model]
hidden = [5]
[train]
epochs = 6
lr = 0.01
)");
  const auto arms = run_gsnr_experiment(cfg);
  REQUIRE(arms.size() == 2);
  const TrainResult& open = arms.at("nonfrozen");
  const TrainResult& frozen = arms.at("frozen");
  CHECK(open.series.rows.front().train_loss == frozen.series.rows.front().train_loss);
  // First layer (2 * 5 + 5 = 15 parameters) never moves in the frozen arm.
  const MlpParams init = init_params(cfg.model(), derive_seed(cfg.seed, 0));
  CHECK(frozen.params.flatten().head(15) == init.flatten().head(15));
  CHECK(open.params.flatten().head(15) != init.flatten().head(15));
}

TEST_CASE("classification GSNR experiment has real and random arms") {
  ExperimentConfig cfg = parse_config(R"(
[experiment]
kind = "gsnr_curve"
seed = 4
[data]
task = "classification"
input_dim = 6
num_classes = 3
n = 60
n_test = 100
[model]
hidden = [8]
[train]
epochs = 4
lr = 0.05
)");
  const auto arms = run_gsnr_experiment(cfg);
  CHECK(arms.count("real") == 1);
  CHECK(arms.count("random") == 1);
  CHECK(arms.at("real").series.rows.size() == 4);
}

TEST_CASE("dynamics experiment needs a positive learning rate") {
  const std::string text = R"(
[experiment]
kind = "dynamics"
[data]
task = "regression"
n = 30
n_test = 50
[model]
hidden = [4]
[train]
epochs = 3
lr = LR
)";
  auto with_lr = [&](const std::string& lr) {
    std::string t = text;
    t.replace(t.find("LR"), 2, lr);
    return t;
  };
  CHECK_THROWS_AS(parse_config(with_lr("0.0")), ConfigError);
  ExperimentConfig cfg = parse_config(with_lr("0.01"));
  const DynamicsResult r = run_dynamics_experiment(cfg);
  CHECK(r.features.size() == 4);
  CHECK(r.run.series.snapshots.empty());
  cfg.train.lr = 0.0;
  CHECK_THROWS_AS(run_dynamics_experiment(cfg), ConfigError);
}
