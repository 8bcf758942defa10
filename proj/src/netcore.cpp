#include "gsnr/netcore.hpp"

#include "gsnr/errors.hpp"
#include "gsnr/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gsnr {

std::string_view to_string(Activation act) {
  return act == Activation::relu ? "relu" : "identity";
}

std::string_view to_string(LossKind loss) {
  return loss == LossKind::mse ? "mse" : "softmax_cross_entropy";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument(fmt::format("unknown activation '{}'", name));
}

LossKind parse_loss(std::string_view name) {
  if (name == "mse") return LossKind::mse;
  if (name == "softmax_cross_entropy" || name == "cross_entropy") {
    return LossKind::softmax_cross_entropy;
  }
  throw std::invalid_argument(fmt::format("unknown loss '{}'", name));
}

// ---------------------------------------------------------------------------
// MlpSpec

MlpSpec MlpSpec::regression(std::vector<int> dims) {
  MlpSpec spec;
  spec.hidden_activations.assign(dims.size() >= 2 ? dims.size() - 2 : 0, Activation::relu);
  spec.layer_dims = std::move(dims);
  spec.loss = LossKind::mse;
  return spec;
}

MlpSpec MlpSpec::classifier(std::vector<int> dims) {
  MlpSpec spec = regression(std::move(dims));
  spec.loss = LossKind::softmax_cross_entropy;
  return spec;
}

std::size_t MlpSpec::param_count() const {
  std::size_t total = 0;
  for (int l = 0; l < num_layers(); ++l) {
    total += static_cast<std::size_t>(fan_out(l)) * (fan_in(l) + 1);
  }
  return total;
}

ParamRange MlpSpec::layer_range(int layer) const {
  if (layer < 0 || layer >= num_layers()) {
    throw std::out_of_range(fmt::format("layer {} out of range [0, {})", layer, num_layers()));
  }
  std::size_t offset = 0;
  for (int l = 0; l < layer; ++l) offset += static_cast<std::size_t>(fan_out(l)) * (fan_in(l) + 1);
  return {offset, static_cast<std::size_t>(fan_out(layer)) * (fan_in(layer) + 1)};
}

ParamRange MlpSpec::weight_range(int layer) const {
  const ParamRange r = layer_range(layer);
  return {r.offset, static_cast<std::size_t>(fan_out(layer)) * fan_in(layer)};
}

ParamRange MlpSpec::bias_range(int layer) const {
  const ParamRange w = weight_range(layer);
  return {w.offset + w.size, static_cast<std::size_t>(fan_out(layer))};
}

void MlpSpec::validate() const {
  if (layer_dims.size() < 2) {
    throw std::invalid_argument("MlpSpec needs at least input and output dims");
  }
  for (int d : layer_dims) {
    if (d < 1) throw std::invalid_argument("MlpSpec layer dims must be positive");
  }
  if (hidden_activations.size() != layer_dims.size() - 2) {
    throw std::invalid_argument(fmt::format("MlpSpec has {} hidden layers but {} activations",
                                            layer_dims.size() - 2, hidden_activations.size()));
  }
  if (loss == LossKind::mse && output_dim() != 1) {
    throw std::invalid_argument("mse loss requires a single output");
  }
  if (loss == LossKind::softmax_cross_entropy && output_dim() < 2) {
    throw std::invalid_argument("cross-entropy loss requires at least two outputs");
  }
}

// ---------------------------------------------------------------------------
// MlpParams

Eigen::VectorXd MlpParams::flatten() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(size()));
  Eigen::Index k = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const auto& w = weights[l];
    for (Eigen::Index c = 0; c < w.rows(); ++c) {
      for (Eigen::Index s = 0; s < w.cols(); ++s) flat[k++] = w(c, s);
    }
    for (Eigen::Index c = 0; c < biases[l].size(); ++c) flat[k++] = biases[l][c];
  }
  return flat;
}

MlpParams MlpParams::unflatten(const MlpSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& flat) {
  spec.validate();
  if (static_cast<std::size_t>(flat.size()) != spec.param_count()) {
    throw std::invalid_argument(fmt::format("flat vector has {} entries, spec needs {}",
                                            flat.size(), spec.param_count()));
  }
  MlpParams p;
  p.spec = spec;
  Eigen::Index k = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    Eigen::MatrixXd w(spec.fan_out(l), spec.fan_in(l));
    for (Eigen::Index c = 0; c < w.rows(); ++c) {
      for (Eigen::Index s = 0; s < w.cols(); ++s) w(c, s) = flat[k++];
    }
    Eigen::VectorXd b(spec.fan_out(l));
    for (Eigen::Index c = 0; c < b.size(); ++c) b[c] = flat[k++];
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

// ---------------------------------------------------------------------------
// FreezeMask

FreezeMask FreezeMask::none(std::size_t param_count) { return FreezeMask(param_count, false); }

FreezeMask FreezeMask::all(std::size_t param_count) { return FreezeMask(param_count, true); }

FreezeMask FreezeMask::layers(const MlpSpec& spec, const std::vector<int>& frozen_layers) {
  FreezeMask mask = none(spec.param_count());
  for (int l : frozen_layers) {
    const ParamRange r = spec.layer_range(l);
    for (std::size_t j = r.offset; j < r.offset + r.size; ++j) mask.set(j, true);
  }
  return mask;
}

std::size_t FreezeMask::frozen_count() const {
  return static_cast<std::size_t>(std::count(frozen_.begin(), frozen_.end(), std::uint8_t{1}));
}

Eigen::VectorXd GradMatrix::column_mean() const {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(cols());
  for (Eigen::Index i = 0; i < rows(); ++i) {
    for (Eigen::Index j = 0; j < cols(); ++j) sum[j] += values(i, j);
  }
  return sum / static_cast<double>(rows());
}

// ---------------------------------------------------------------------------
// Forward

namespace {

double activate(Activation act, double z) {
  return act == Activation::relu ? (z > 0.0 ? z : 0.0) : z;
}

// Relu subgradient at 0 is 0.
double activate_slope(Activation act, double z) {
  return act == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

void check_input(const MlpSpec& spec, Eigen::Index dim) {
  if (dim != spec.input_dim()) {
    throw std::invalid_argument(
        fmt::format("input has dimension {}, network expects {}", dim, spec.input_dim()));
  }
}

int checked_label(double target, int classes) {
  const auto label = static_cast<int>(target);
  if (label < 0 || label >= classes || static_cast<double>(label) != target) {
    throw std::invalid_argument(fmt::format("class label {} outside [0, {})", target, classes));
  }
  return label;
}

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& z) {
  const double m = z.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index k = 0; k < z.size(); ++k) sum += std::exp(z[k] - m);
  return m + std::log(sum);
}

// Reusable buffers for one forward/backward pass at a time.
class Backprop {
 public:
  explicit Backprop(const MlpParams& params) : params_(params) {
    const MlpSpec& spec = params.spec;
    const int layers = spec.num_layers();
    act_.resize(layers);
    pre_.resize(layers);
    delta_.resize(layers);
    for (int l = 0; l < layers; ++l) {
      act_[l].resize(spec.fan_in(l));
      pre_[l].resize(spec.fan_out(l));
      delta_[l].resize(spec.fan_out(l));
    }
  }

  // Writes the gradient of the sample loss into grad (length P); returns the loss.
  double run(const Eigen::Ref<const Eigen::VectorXd>& x, double target, double* grad) {
    const MlpSpec& spec = params_.spec;
    const int layers = spec.num_layers();
    act_[0] = x;
    for (int l = 0; l < layers; ++l) {
      pre_[l].noalias() = params_.weights[l] * act_[l];
      pre_[l] += params_.biases[l];
      if (l + 1 < layers) {
        const Activation a = spec.hidden_activations[l];
        for (Eigen::Index k = 0; k < pre_[l].size(); ++k) act_[l + 1][k] = activate(a, pre_[l][k]);
      }
    }

    const Eigen::VectorXd& out = pre_[layers - 1];
    Eigen::VectorXd& d_out = delta_[layers - 1];
    double loss = 0.0;
    if (spec.loss == LossKind::mse) {
      const double r = out[0] - target;
      loss = r * r;
      d_out[0] = 2.0 * r;
    } else {
      const int y = checked_label(target, spec.output_dim());
      const double lse = log_sum_exp(out);
      loss = lse - out[y];
      for (Eigen::Index k = 0; k < out.size(); ++k) d_out[k] = std::exp(out[k] - lse);
      d_out[y] -= 1.0;
    }

    for (int l = layers - 1; l >= 0; --l) {
      const ParamRange w = spec.weight_range(l);
      const Eigen::Index fan_in = spec.fan_in(l);
      const Eigen::VectorXd& d = delta_[l];
      for (Eigen::Index c = 0; c < d.size(); ++c) {
        double* row = grad + w.offset + static_cast<std::size_t>(c * fan_in);
        for (Eigen::Index s = 0; s < fan_in; ++s) row[s] = d[c] * act_[l][s];
        grad[w.offset + w.size + static_cast<std::size_t>(c)] = d[c];
      }
      if (l > 0) {
        Eigen::VectorXd& prev = delta_[l - 1];
        prev.noalias() = params_.weights[l].transpose() * d;
        const Activation a = spec.hidden_activations[l - 1];
        for (Eigen::Index k = 0; k < prev.size(); ++k) prev[k] *= activate_slope(a, pre_[l - 1][k]);
      }
    }
    return loss;
  }

 private:
  const MlpParams& params_;
  std::vector<Eigen::VectorXd> act_;   // a^(l)
  std::vector<Eigen::VectorXd> pre_;   // o^(l) + b^(l)
  std::vector<Eigen::VectorXd> delta_; // dL / d(o^(l) + b^(l))
};

}  // namespace

MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  MlpParams p;
  p.spec = spec;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / (spec.fan_in(l) + spec.fan_out(l)));
    Eigen::MatrixXd w(spec.fan_out(l), spec.fan_in(l));
    for (Eigen::Index c = 0; c < w.rows(); ++c) {
      for (Eigen::Index s = 0; s < w.cols(); ++s) w(c, s) = rng.uniform(-limit, limit);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(spec.fan_out(l)));
  }
  return p;
}

ForwardTrace forward(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& x) {
  const MlpSpec& spec = params.spec;
  check_input(spec, x.size());
  ForwardTrace trace;
  Eigen::VectorXd a = x;
  for (int l = 0; l < spec.num_layers(); ++l) {
    Eigen::VectorXd o = params.weights[l] * a;
    trace.activations.push_back(a);
    Eigen::VectorXd z = o + params.biases[l];
    trace.products.push_back(std::move(o));
    if (l + 1 < spec.num_layers()) {
      const Activation act = spec.hidden_activations[l];
      a = z.unaryExpr([act](double v) { return activate(act, v); });
    } else {
      trace.prediction = std::move(z);
    }
  }
  return trace;
}

BatchForward forward_batch(const MlpParams& params, const RowMatrix& inputs) {
  const MlpSpec& spec = params.spec;
  check_input(spec, inputs.cols());
  BatchForward out;
  RowMatrix a = inputs;
  for (int l = 0; l < spec.num_layers(); ++l) {
    RowMatrix z = a * params.weights[l].transpose();
    z.rowwise() += params.biases[l].transpose();
    out.activations.push_back(std::move(a));
    if (l + 1 < spec.num_layers()) {
      const Activation act = spec.hidden_activations[l];
      a = z.unaryExpr([act](double v) { return activate(act, v); });
    } else {
      out.predictions = std::move(z);
    }
  }
  return out;
}

double prediction_loss(LossKind loss, const Eigen::Ref<const Eigen::VectorXd>& prediction,
                       double target) {
  if (loss == LossKind::mse) {
    const double r = prediction[0] - target;
    return r * r;
  }
  const int y = checked_label(target, static_cast<int>(prediction.size()));
  return log_sum_exp(prediction) - prediction[y];
}

double sample_loss(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                   double target) {
  return prediction_loss(params.spec.loss, forward(params, x).prediction, target);
}

double batch_loss(const MlpParams& params, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("batch_loss on an empty dataset");
  const BatchForward fwd = forward_batch(params, data.inputs);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    sum += prediction_loss(params.spec.loss, fwd.predictions.row(i).transpose(), data.targets[i]);
  }
  return sum / static_cast<double>(data.size());
}

GradMatrix per_sample_grads(const MlpParams& params, const Dataset& data) {
  GradMatrix g;
  g.values.resize(data.size(), static_cast<Eigen::Index>(params.size()));
  check_input(params.spec, data.inputs.cols());
  Backprop bp(params);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    bp.run(data.inputs.row(i).transpose(), data.targets[i], g.values.row(i).data());
  }
  return g;
}

Eigen::VectorXd batch_grad(const MlpParams& params, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("batch_grad on an empty dataset");
  check_input(params.spec, data.inputs.cols());
  const auto count = static_cast<Eigen::Index>(params.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(count);
  Eigen::VectorXd row(count);
  Backprop bp(params);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    bp.run(data.inputs.row(i).transpose(), data.targets[i], row.data());
    for (Eigen::Index j = 0; j < count; ++j) sum[j] += row[j];
  }
  return sum / static_cast<double>(data.size());
}

Eigen::VectorXd sample_grad(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                            double target) {
  check_input(params.spec, x.size());
  Eigen::VectorXd g(static_cast<Eigen::Index>(params.size()));
  Backprop(params).run(x, target, g.data());
  return g;
}

MlpParams gd_step(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& grad_mean,
                  double lr, const FreezeMask& mask) {
  if (!std::isfinite(lr) || lr < 0.0) {
    throw std::invalid_argument(fmt::format("learning rate must be finite and >= 0, got {}", lr));
  }
  const std::size_t count = params.size();
  const bool masked = mask.size() != 0;
  if (static_cast<std::size_t>(grad_mean.size()) != count || (masked && mask.size() != count)) {
    throw std::invalid_argument("gd_step: gradient or mask length differs from parameter count");
  }
  for (Eigen::Index j = 0; j < grad_mean.size(); ++j) {
    if (!std::isfinite(grad_mean[j])) {
      throw NumericalError(fmt::format("non-finite gradient at flat index {}", j));
    }
  }
  Eigen::VectorXd flat = params.flatten();
  for (std::size_t j = 0; j < count; ++j) {
    if (!masked || !mask.frozen(j)) flat[static_cast<Eigen::Index>(j)] -= lr * grad_mean[static_cast<Eigen::Index>(j)];
  }
  return MlpParams::unflatten(params.spec, flat);
}

Eigen::VectorXd finite_diff_grad(const MlpParams& params,
                                 const Eigen::Ref<const Eigen::VectorXd>& x, double target,
                                 double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  Eigen::VectorXd flat = params.flatten();
  Eigen::VectorXd g(flat.size());
  for (Eigen::Index j = 0; j < flat.size(); ++j) {
    const double saved = flat[j];
    flat[j] = saved + h;
    const double up = sample_loss(MlpParams::unflatten(params.spec, flat), x, target);
    flat[j] = saved - h;
    const double down = sample_loss(MlpParams::unflatten(params.spec, flat), x, target);
    flat[j] = saved;
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

double min_hidden_preactivation(const MlpParams& params,
                                const Eigen::Ref<const Eigen::VectorXd>& x) {
  const ForwardTrace t = forward(params, x);
  double best = std::numeric_limits<double>::infinity();
  for (int l = 0; l + 1 < params.spec.num_layers(); ++l) {
    best = std::min(best, (t.products[l] + params.biases[l]).cwiseAbs().minCoeff());
  }
  return best;
}

}  // namespace gsnr
