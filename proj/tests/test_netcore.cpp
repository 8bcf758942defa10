#include "doctest.h"

#include "helpers.hpp"

#include "gsnr/errors.hpp"
#include "gsnr/netcore.hpp"
#include "gsnr/rng.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace gsnr;
using testing::rel_err;

namespace {

Dataset one_sample(const Eigen::VectorXd& x, double y, Task task = Task::regression, int classes = 2) {
  Dataset d;
  d.spec.task = task;
  d.spec.input_dim = static_cast<int>(x.size());
  d.spec.n = 1;
  d.spec.num_classes = classes;
  d.inputs = x.transpose();
  d.targets = Eigen::VectorXd::Constant(1, y);
  return d;
}

MlpSpec linear_spec() {
  MlpSpec s;
  s.layer_dims = {1, 1};
  s.loss = LossKind::mse;
  return s;
}

}  // namespace

TEST_CASE("parameter count and flat layout") {
  const MlpSpec s = MlpSpec::regression({2, 20, 1});
  CHECK(s.param_count() == 81);
  CHECK(s.weight_range(0).offset == 0);
  CHECK(s.weight_range(0).size == 40);
  CHECK(s.bias_range(0).offset == 40);
  CHECK(s.bias_range(0).size == 20);
  CHECK(s.weight_range(1).offset == 60);
  CHECK(s.bias_range(1).offset == 80);
  CHECK(s.layer_range(1).size == 21);

  const MlpParams p = init_params(s, 3);
  const Eigen::VectorXd flat = p.flatten();
  // W row-major (c, s): flat[c * fan_in + s].
  CHECK(flat[1 * 2 + 1] == p.weights[0](1, 1));
  CHECK(flat[60 + 7] == p.weights[1](0, 7));
}

TEST_CASE("flatten and unflatten are inverse") {
  const MlpSpec s = MlpSpec::classifier({5, 7, 3, 4});
  const MlpParams p = init_params(s, 9);
  const Eigen::VectorXd flat = p.flatten();
  const MlpParams q = MlpParams::unflatten(s, flat);
  CHECK((q.flatten().array() == flat.array()).all());
  CHECK_THROWS(MlpParams::unflatten(s, Eigen::VectorXd::Zero(3)));
}

TEST_CASE("init_params: deterministic, zero biases, Glorot bounds") {
  const MlpSpec s = MlpSpec::regression({2, 20, 1});
  const MlpParams a = init_params(s, 1);
  const MlpParams b = init_params(s, 1);
  CHECK((a.flatten().array() == b.flatten().array()).all());
  CHECK_FALSE((a.flatten().array() == init_params(s, 2).flatten().array()).all());
  for (int l = 0; l < 2; ++l) {
    CHECK(a.biases[l].cwiseAbs().maxCoeff() == 0.0);
    const double limit = std::sqrt(6.0 / (s.fan_in(l) + s.fan_out(l)));
    CHECK(a.weights[l].cwiseAbs().maxCoeff() <= limit);
  }
}

TEST_CASE("spec validation") {
  MlpSpec s;
  s.layer_dims = {3};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(MlpSpec::regression({2, 4, 2}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(MlpSpec::classifier({2, 4, 1}).validate(), std::invalid_argument);
  s = MlpSpec::regression({2, 4, 1});
  s.hidden_activations.clear();
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("forward pass") {
  SUBCASE("identity activations compose to a hand-computable linear map") {
    MlpSpec s;
    s.layer_dims = {2, 2, 1};
    s.hidden_activations = {Activation::identity};
    MlpParams p = init_params(s, 1);
    p.weights[0] << 1, 2, 3, 4;
    p.biases[0] << 0.5, -0.5;
    p.weights[1] << 1, -1;
    p.biases[1] << 2;
    const ForwardTrace t = forward(p, Eigen::Vector2d(1, 1));
    // hidden = (3.5, 6.5); out = 3.5 - 6.5 + 2
    CHECK(t.products[0][0] == 3.0);
    CHECK(t.activations[1][1] == 6.5);
    CHECK(t.prediction[0] == doctest::Approx(-1.0));
  }
  SUBCASE("all-negative relu pre-activations give the output bias") {
    MlpParams p = init_params(MlpSpec::regression({2, 5, 1}), 4);
    p.weights[0].setConstant(-1.0);
    p.biases[1] << 0.25;
    const ForwardTrace t = forward(p, Eigen::Vector2d(0.5, 0.5));
    CHECK(t.activations[1].cwiseAbs().maxCoeff() == 0.0);
    CHECK(t.prediction[0] == 0.25);
  }
  SUBCASE("x = 0 makes hidden pre-activations equal the biases") {
    MlpParams p = init_params(MlpSpec::regression({3, 4, 1}), 5);
    p.biases[0] << 0.1, -0.2, 0.3, -0.4;
    const ForwardTrace t = forward(p, Eigen::Vector3d::Zero());
    CHECK(t.products[0].cwiseAbs().maxCoeff() == 0.0);
    CHECK(t.activations[1][0] == 0.1);
    CHECK(t.activations[1][1] == 0.0);
  }
  SUBCASE("dimension mismatch") {
    const MlpParams p = init_params(MlpSpec::regression({3, 4, 1}), 5);
    CHECK_THROWS(forward(p, Eigen::Vector2d::Zero()));
  }
  SUBCASE("batched forward agrees with per-sample forward") {
    const MlpParams p = init_params(MlpSpec::classifier({4, 6, 5, 3}), 6);
    const Dataset d = testing::class_data(20, 4, 3, 1);
    const BatchForward b = forward_batch(p, d.inputs);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      const Eigen::VectorXd single = forward(p, d.inputs.row(i).transpose()).prediction;
      CHECK(rel_err(single, b.predictions.row(i).transpose()) < 1e-14);
    }
  }
}

TEST_CASE("sample and batch losses") {
  CHECK(prediction_loss(LossKind::mse, Eigen::VectorXd::Constant(1, 0.3), 0.3) == 0.0);
  CHECK(prediction_loss(LossKind::mse, Eigen::VectorXd::Constant(1, 1.0), 0.0) == 1.0);
  CHECK(prediction_loss(LossKind::softmax_cross_entropy, Eigen::VectorXd::Zero(10), 4.0) ==
        doctest::Approx(2.302585092994046));
  // Large logits stay finite.
  Eigen::VectorXd big(2);
  big << 1000.0, 0.0;
  CHECK(prediction_loss(LossKind::softmax_cross_entropy, big, 1.0) == doctest::Approx(1000.0));
  CHECK(prediction_loss(LossKind::softmax_cross_entropy, big, 0.0) == doctest::Approx(0.0));
  CHECK_THROWS(prediction_loss(LossKind::softmax_cross_entropy, big, 2.0));

  MlpParams p = init_params(linear_spec(), 1);
  p.weights[0] << 1.0;
  p.biases[0] << 0.0;
  Dataset d = testing::regression_data(2, 1, 1);
  d.inputs << 1.0, 1.0;
  d.targets << 1.0, 1.0 - std::sqrt(2.0);
  CHECK(batch_loss(p, d) == doctest::Approx(1.0));

  const Dataset single = one_sample(Eigen::VectorXd::Constant(1, 0.7), 0.2);
  CHECK(batch_loss(p, single) == sample_loss(p, single.inputs.row(0).transpose(), 0.2));

  Dataset twice = d;
  twice.inputs.resize(4, 1);
  twice.inputs << 1.0, 1.0, 1.0, 1.0;
  twice.targets.resize(4);
  twice.targets << d.targets[0], d.targets[1], d.targets[0], d.targets[1];
  CHECK(batch_loss(p, twice) == doctest::Approx(batch_loss(p, d)));

  Dataset empty = d;
  empty.inputs.resize(0, 1);
  empty.targets.resize(0);
  CHECK_THROWS(batch_loss(p, empty));
}

TEST_CASE("hand derivative of a linear model") {
  // d/dw (w x - y)^2 at x = 1, y = 0, w = 2 is 4; d/db is 4 as well.
  MlpParams p = init_params(linear_spec(), 1);
  p.weights[0] << 2.0;
  p.biases[0] << 0.0;
  const Dataset d = one_sample(Eigen::VectorXd::Constant(1, 1.0), 0.0);
  const GradMatrix g = per_sample_grads(p, d);
  CHECK(g.values(0, 0) == 4.0);
  CHECK(g.values(0, 1) == 4.0);

  // Central differences of a quadratic are exact up to rounding.
  const Eigen::VectorXd fd = finite_diff_grad(p, d.inputs.row(0).transpose(), 0.0, 1e-6);
  CHECK(std::abs(fd[0] - 4.0) <= 1e-8);
  CHECK(std::abs(fd[1] - 4.0) <= 1e-8);
  CHECK_THROWS(finite_diff_grad(p, d.inputs.row(0).transpose(), 0.0, 0.0));
}

TEST_CASE("hand derivative of softmax cross-entropy") {
  // Single linear layer: dL/dz = softmax(z) - onehot(y), dL/dW = (dL/dz) x^T.
  MlpSpec s;
  s.layer_dims = {2, 3};
  s.loss = LossKind::softmax_cross_entropy;
  MlpParams p = init_params(s, 2);
  const Eigen::Vector2d x(0.3, -0.8);
  const int y = 2;
  const Eigen::VectorXd z = p.weights[0] * x + p.biases[0];
  const Eigen::VectorXd prob = z.array().exp() / z.array().exp().sum();
  Eigen::VectorXd dz = prob;
  dz[y] -= 1.0;
  const Eigen::VectorXd g = sample_grad(p, x, y);
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < 2; ++k) CHECK(g[c * 2 + k] == doctest::Approx(dz[c] * x[k]).epsilon(1e-12));
    CHECK(g[6 + c] == doctest::Approx(dz[c]).epsilon(1e-12));
  }
}

TEST_CASE("per-sample gradients match central differences away from relu kinks") {
  Rng rng(123);
  int checked = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const bool classify = trial % 2 == 1;
    const MlpSpec s = classify ? MlpSpec::classifier({3, 6, 5, 4}) : MlpSpec::regression({2, 8, 1});
    const MlpParams p = init_params(s, derive_seed(77, static_cast<std::uint64_t>(trial)));
    Eigen::VectorXd x(s.input_dim());
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = rng.uniform(-1, 1);
    if (min_hidden_preactivation(p, x) < 1e-4) continue;
    const double y = classify ? static_cast<double>(rng.below(4)) : rng.uniform(-1, 1);
    const Eigen::VectorXd exact = sample_grad(p, x, y);
    const Eigen::VectorXd fd = finite_diff_grad(p, x, y, 1e-6);
    CHECK(rel_err(exact, fd) <= 1e-5);
    ++checked;
  }
  CHECK(checked > 30);
}

TEST_CASE("relu subgradient at the kink is zero") {
  MlpParams p = init_params(MlpSpec::regression({1, 1, 1}), 1);
  p.weights[0] << 1.0;
  p.biases[0] << -0.5;
  p.weights[1] << 2.0;
  const Eigen::VectorXd g = sample_grad(p, Eigen::VectorXd::Constant(1, 0.5), 1.0);
  CHECK(g[0] == 0.0); // W^(0)
  CHECK(g[1] == 0.0); // b^(0)
}

TEST_CASE("column mean of per-sample gradients equals the batch gradient") {
  for (int classify = 0; classify < 2; ++classify) {
    const MlpSpec s = classify ? MlpSpec::classifier({4, 9, 3}) : MlpSpec::regression({4, 9, 7, 1});
    const MlpParams p = init_params(s, 31);
    const Dataset d = classify ? testing::class_data(37, 4, 3, 2) : testing::regression_data(37, 2, 4);
    const GradMatrix g = per_sample_grads(p, d);
    CHECK(g.rows() == 37);
    CHECK(static_cast<std::size_t>(g.cols()) == s.param_count());
    const Eigen::VectorXd bg = batch_grad(p, d);
    CHECK((g.column_mean().array() == bg.array()).all());
    for (Eigen::Index i = 0; i < d.size(); i += 9) {
      const Eigen::VectorXd row = sample_grad(p, d.inputs.row(i).transpose(), d.targets[i]);
      CHECK(rel_err(row, g.values.row(i).transpose()) <= 1e-14);
    }
  }
}

TEST_CASE("batch gradient matches central differences of the batch loss") {
  const MlpParams p = init_params(MlpSpec::regression({2, 6, 1}), 8);
  const Dataset d = testing::regression_data(25, 5);
  const Eigen::VectorXd g = batch_grad(p, d);
  const Eigen::VectorXd theta = p.flatten();
  const double h = 1e-6;
  Eigen::VectorXd fd(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    Eigen::VectorXd up = theta, down = theta;
    up[j] += h;
    down[j] -= h;
    fd[j] = (batch_loss(MlpParams::unflatten(p.spec, up), d) - batch_loss(MlpParams::unflatten(p.spec, down), d)) /
            (2 * h);
  }
  CHECK(rel_err(g, fd) <= 1e-5);
}

TEST_CASE("identical samples give identical gradient rows") {
  const MlpParams p = init_params(MlpSpec::regression({2, 5, 1}), 3);
  Dataset d = testing::regression_data(2, 4);
  d.inputs.row(1) = d.inputs.row(0);
  d.targets[1] = d.targets[0];
  const GradMatrix g = per_sample_grads(p, d);
  CHECK((g.values.row(0).array() == g.values.row(1).array()).all());
}

TEST_CASE("gd_step") {
  const MlpSpec s = MlpSpec::regression({2, 4, 1});
  const MlpParams p = init_params(s, 1);
  const Eigen::VectorXd grad = Eigen::VectorXd::LinSpaced(static_cast<Eigen::Index>(s.param_count()), -1, 1);

  SUBCASE("plain update") {
    const MlpParams q = gd_step(p, grad, 0.001, FreezeMask{});
    CHECK(rel_err(q.flatten(), p.flatten() - 0.001 * grad) <= 1e-15);
  }
  SUBCASE("zero gradient and fully frozen mask leave params unchanged") {
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(grad.size());
    CHECK((gd_step(p, zero, 0.1, FreezeMask{}).flatten().array() == p.flatten().array()).all());
    CHECK((gd_step(p, grad, 0.1, FreezeMask::all(s.param_count())).flatten().array() == p.flatten().array()).all());
  }
  SUBCASE("layer mask freezes exactly that layer") {
    const FreezeMask mask = FreezeMask::layers(s, {0});
    CHECK(mask.frozen_count() == 12);
    const MlpParams q = gd_step(p, grad, 0.1, mask);
    CHECK((q.weights[0].array() == p.weights[0].array()).all());
    CHECK((q.biases[0].array() == p.biases[0].array()).all());
    CHECK_FALSE((q.weights[1].array() == p.weights[1].array()).all());
  }
  SUBCASE("two steps on a constant gradient equal one combined step") {
    const MlpParams two = gd_step(gd_step(p, grad, 0.25, FreezeMask{}), grad, 0.5, FreezeMask{});
    const MlpParams one = gd_step(p, grad, 0.75, FreezeMask{});
    CHECK(rel_err(two.flatten(), one.flatten()) <= 1e-15);
  }
  SUBCASE("rejections") {
    Eigen::VectorXd bad = grad;
    bad[3] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(gd_step(p, bad, 0.1, FreezeMask{}), NumericalError);
    CHECK_THROWS(gd_step(p, grad, -0.1, FreezeMask{}));
    CHECK_THROWS(gd_step(p, grad.head(3), 0.1, FreezeMask{}));
    CHECK_THROWS(gd_step(p, grad, 0.1, FreezeMask::none(3)));
  }
}

TEST_CASE("frozen parameters still receive their true gradient") {
  // Freezing affects the update only; per-sample gradients ignore the mask entirely.
  const MlpParams p = init_params(MlpSpec::regression({2, 4, 1}), 1);
  const Dataset d = testing::regression_data(10, 2);
  CHECK(per_sample_grads(p, d).values.leftCols(8).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("parameter file round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "gsnr_params_test";
  std::filesystem::create_directories(dir);
  const MlpParams p = init_params(MlpSpec::classifier({3, 5, 2}), 12);
  const auto path = dir / "p.bin";
  save_params(p, path);
  const MlpParams q = load_params(path);
  CHECK(q.spec == p.spec);
  CHECK((q.flatten().array() == p.flatten().array()).all());
  CHECK(std::filesystem::file_size(path) == p.size() * 8);

  std::filesystem::resize_file(path, p.size() * 8 - 8);
  CHECK_THROWS(load_params(path));
  std::filesystem::remove_all(dir);
}
