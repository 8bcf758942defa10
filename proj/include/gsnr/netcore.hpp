#pragma once

// Fully connected networks: parameters and their flat layout, forward pass,
// losses, exact per-sample gradients by reverse-mode differentiation, one
// gradient-descent step and a central-difference gradient oracle.
//
// Layers are indexed from 0. Layer l maps a^(l) (fan_in) to
// o^(l) = W^(l) a^(l) (fan_out); the next activation is act(o^(l) + b^(l)).
// The output layer has no activation: it is the regression prediction or the
// logits of a softmax folded into the cross-entropy loss.

#include "gsnr/dataset.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace gsnr {

enum class Activation { relu, identity };
enum class LossKind { mse, softmax_cross_entropy };

std::string_view to_string(Activation act);
std::string_view to_string(LossKind loss);
Activation parse_activation(std::string_view name);
LossKind parse_loss(std::string_view name);

// Contiguous slice of the flat parameter vector.
struct ParamRange {
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct MlpSpec {
  std::vector<int> layer_dims;               // input, hidden..., output
  std::vector<Activation> hidden_activations; // one per hidden layer
  LossKind loss = LossKind::mse;

  // Relu hidden layers with mse (regression) or softmax cross-entropy.
  static MlpSpec regression(std::vector<int> dims);
  static MlpSpec classifier(std::vector<int> dims);

  int num_layers() const { return static_cast<int>(layer_dims.size()) - 1; }
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  int fan_in(int layer) const { return layer_dims[layer]; }
  int fan_out(int layer) const { return layer_dims[layer + 1]; }

  // P = sum over layers of fan_out * fan_in + fan_out.
  std::size_t param_count() const;

  // Flat order: layer by layer, W^(l) row-major (c, s) followed by b^(l).
  ParamRange weight_range(int layer) const;
  ParamRange bias_range(int layer) const;
  ParamRange layer_range(int layer) const;

  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

struct MlpParams {
  MlpSpec spec;
  std::vector<Eigen::MatrixXd> weights; // fan_out x fan_in
  std::vector<Eigen::VectorXd> biases;  // fan_out

  std::size_t size() const { return spec.param_count(); }
  Eigen::VectorXd flatten() const;
  static MlpParams unflatten(const MlpSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& flat);
};

// One flag per flat parameter; true means the update skips it.
class FreezeMask {
 public:
  FreezeMask() = default;
  static FreezeMask none(std::size_t param_count);
  static FreezeMask all(std::size_t param_count);
  // Freezes weights and biases of the listed layers.
  static FreezeMask layers(const MlpSpec& spec, const std::vector<int>& frozen_layers);

  std::size_t size() const { return frozen_.size(); }
  bool frozen(std::size_t j) const { return frozen_[j] != 0; }
  void set(std::size_t j, bool value) { frozen_[j] = value ? 1 : 0; }
  std::size_t frozen_count() const;

 private:
  explicit FreezeMask(std::size_t n, bool value) : frozen_(n, value ? 1 : 0) {}
  std::vector<std::uint8_t> frozen_;
};

struct ForwardTrace {
  std::vector<Eigen::VectorXd> activations; // a^(l), l = 0..L-1; a^(0) = x
  std::vector<Eigen::VectorXd> products;    // o^(l) = W^(l) a^(l)
  Eigen::VectorXd prediction;               // o^(L-1) + b^(L-1)
};

// Forward pass over a whole input matrix.
struct BatchForward {
  std::vector<RowMatrix> activations; // n x layer_dims[l]
  RowMatrix predictions;              // n x output_dim
};

// Per-sample gradients; row i is g_i(theta) in flat order.
struct GradMatrix {
  RowMatrix values;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  // Column mean, summed in row order.
  Eigen::VectorXd column_mean() const;
};

// Glorot-uniform weights, zero biases.
MlpParams init_params(const MlpSpec& spec, std::uint64_t seed);

ForwardTrace forward(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& x);
BatchForward forward_batch(const MlpParams& params, const RowMatrix& inputs);

double prediction_loss(LossKind loss, const Eigen::Ref<const Eigen::VectorXd>& prediction,
                       double target);
double sample_loss(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                   double target);
// Mean sample loss. Throws on an empty dataset.
double batch_loss(const MlpParams& params, const Dataset& data);

GradMatrix per_sample_grads(const MlpParams& params, const Dataset& data);
// Gradient of batch_loss; equals per_sample_grads(...).column_mean() bit for bit.
Eigen::VectorXd batch_grad(const MlpParams& params, const Dataset& data);
// Gradient of one sample's loss.
Eigen::VectorXd sample_grad(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& x,
                            double target);

// theta_j -= lr * grad_mean_j for every unfrozen j. An empty mask freezes nothing.
MlpParams gd_step(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& grad_mean,
                  double lr, const FreezeMask& mask);

// Central differences of sample_loss, one coordinate at a time.
Eigen::VectorXd finite_diff_grad(const MlpParams& params,
                                 const Eigen::Ref<const Eigen::VectorXd>& x, double target,
                                 double h);

// Smallest |o^(l) + b^(l)| over the hidden layers for input x: distance to the
// nearest relu kink. Infinity for networks without hidden layers.
double min_hidden_preactivation(const MlpParams& params,
                                const Eigen::Ref<const Eigen::VectorXd>& x);

// Flat little-endian float64 file in flat order, plus a JSON shape header at
// the same path with extension ".json".
void save_params(const MlpParams& params, const std::filesystem::path& bin_path);
MlpParams load_params(const std::filesystem::path& bin_path);

}  // namespace gsnr
