#pragma once

#include "gsnr/dataset.hpp"
#include "gsnr/netcore.hpp"
#include "gsnr/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace testing {

inline double max_abs(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// max |a - b| / max(max |a|, max |b|)
inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(max_abs(a), max_abs(b));
  if (scale == 0.0) return 0.0;
  return max_abs(a - b) / scale;
}

inline gsnr::Dataset regression_data(int n, std::uint64_t seed, int dim = 2) {
  gsnr::Rng rng(seed);
  gsnr::Dataset d;
  d.spec.task = gsnr::Task::regression;
  d.spec.input_dim = dim;
  d.spec.n = n;
  d.inputs.resize(n, dim);
  d.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k) d.inputs(i, k) = rng.uniform(-1, 1);
    d.targets[i] = rng.uniform(-1, 1);
  }
  return d;
}

inline gsnr::Dataset class_data(int n, int dim, int classes, std::uint64_t seed) {
  gsnr::Rng rng(seed);
  gsnr::Dataset d;
  d.spec.task = gsnr::Task::classification;
  d.spec.input_dim = dim;
  d.spec.n = n;
  d.spec.num_classes = classes;
  d.inputs.resize(n, dim);
  d.targets.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k) d.inputs(i, k) = rng.uniform(-1, 1);
    d.targets[i] = static_cast<double>(rng.below(classes));
  }
  return d;
}

}  // namespace testing
