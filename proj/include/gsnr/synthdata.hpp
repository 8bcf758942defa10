#pragma once

// Synthetic datasets: the product task y = x0 * x1 + eps and a classification
// task labelled by a fixed random teacher network.

#include "gsnr/dataset.hpp"
#include "gsnr/netcore.hpp"

#include <cstdint>
#include <vector>

namespace gsnr {

struct DatasetBundle {
  std::vector<Dataset> train_sets; // M sets of n rows
  Dataset test_set;                // n_test rows

  int M() const { return static_cast<int>(train_sets.size()); }
};

// Rows x0, x1 ~ U[-1, 1]; y = x0 * x1 + eps, eps ~ U[-noise, noise].
Dataset gen_regression(const DataSpec& spec, std::uint64_t seed);

// Teacher architecture input_dim -> 16 -> num_classes with relu.
constexpr int kTeacherHidden = 16;

struct Teacher {
  MlpParams net;
};

// Deterministic in spec.teacher_seed. Does not check degeneracy.
Teacher make_teacher(const DataSpec& spec);

// Argmax labels; ties resolve to the lowest class index.
Eigen::VectorXd teacher_labels(const Teacher& teacher, const RowMatrix& inputs);

// Throws ConfigError when some class gets less than 5% of a fixed probe sample.
void check_teacher(const Teacher& teacher, const DataSpec& spec);

// Inputs ~ U[-1, 1]^input_dim, labels from the checked teacher.
Dataset gen_classification(const DataSpec& spec, std::uint64_t seed);

// Dispatches on spec.task.
Dataset generate(const DataSpec& spec, std::uint64_t seed);

// Each label is replaced with probability p_random by a uniform draw over all
// classes (the original class included).
Dataset corrupt_labels(const Dataset& data, double p_random, std::uint64_t seed);

// Test set from sub-seed 0, train set m from sub-seed m + 1.
DatasetBundle split_bundle(const DataSpec& spec, int M, int n, int n_test, std::uint64_t seed);

}  // namespace gsnr
