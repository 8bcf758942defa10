#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string_view>

namespace gsnr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Task { regression, classification };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

struct DataSpec {
  Task task = Task::regression;
  int input_dim = 2;
  int n = 1;
  double noise_half_width = 0.0;  // regression only
  int num_classes = 2;            // classification only
  std::uint64_t teacher_seed = 0; // classification only

  // Throws std::invalid_argument on a violated invariant.
  void validate() const;
};

// Immutable after construction. Classification targets hold class indices
// stored as exact small integers.
struct Dataset {
  RowMatrix inputs;        // n x input_dim
  Eigen::VectorXd targets; // n
  DataSpec spec;

  Eigen::Index size() const { return inputs.rows(); }
  int label(Eigen::Index i) const { return static_cast<int>(targets[i]); }
};

}  // namespace gsnr
