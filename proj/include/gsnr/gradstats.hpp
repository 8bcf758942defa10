#pragma once

// Per-parameter statistics of per-sample gradients: mean, population
// variance, GSNR r_j = mean_j^2 / var_j, and gradient sign agreement.

#include "gsnr/netcore.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

namespace gsnr {

struct GradMoments {
  Eigen::VectorXd mean; // g_D per parameter
  Eigen::VectorXd var;  // rho^2 per parameter, divide-by-n convention
  Eigen::Index n = 0;
};

struct GsnrVector {
  Eigen::VectorXd r;
  std::vector<bool> floored; // var fell below the floor
  std::size_t floored_count = 0;
};

struct SignStats {
  Eigen::VectorXd p_same_sign;
  std::vector<Eigen::Index> positive_count;
  std::vector<Eigen::Index> negative_count;
  std::vector<Eigen::Index> zero_count;

  // Mean of p_same_sign over parameters with at least one nonzero gradient.
  double mean_p_same_sign() const;
};

struct AvgGsnr {
  double value = 0.0;
  std::size_t used = 0;     // parameters in the average
  std::size_t excluded = 0; // floored parameters left out
};

constexpr double kDefaultGsnrFloor = 1e-20;

// Throws std::invalid_argument for fewer than two rows.
GradMoments moments(const GradMatrix& g);

GsnrVector gsnr(const GradMoments& m, double eps = kDefaultGsnrFloor);

// Flat parameter indices.
using ParamSubset = std::vector<std::size_t>;

ParamSubset all_params(std::size_t param_count);
// Weights and biases of one layer.
ParamSubset layer_params(const MlpSpec& spec, int layer);
ParamSubset layer_weights(const MlpSpec& spec, int layer);
ParamSubset unfrozen_params(const FreezeMask& mask);

// Mean of r over the subset, floored parameters excluded. Throws on an empty
// subset or when every parameter in it is floored.
AvgGsnr avg_gsnr(const GsnrVector& r, const ParamSubset& subset);

// p_same_sign_j = max(pos_j, neg_j) / (pos_j + neg_j); exact zeros are
// excluded from both counts and from the denominator. A column with no nonzero
// entry gets 0.5.
SignStats same_sign_proportion(const GradMatrix& g);

// Product-moment correlation. Throws DegenerateInputError when either input
// has zero variance, std::invalid_argument on length mismatch or length < 2.
double pearson(std::span<const double> x, std::span<const double> y);
double pearson(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y);

}  // namespace gsnr
