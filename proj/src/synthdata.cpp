#include "gsnr/synthdata.hpp"

#include "gsnr/errors.hpp"
#include "gsnr/rng.hpp"

#include <fmt/format.h>

#include <cmath>
#include <stdexcept>

namespace gsnr {

std::string_view to_string(Task task) {
  return task == Task::regression ? "regression" : "classification";
}

Task parse_task(std::string_view name) {
  if (name == "regression") return Task::regression;
  if (name == "classification") return Task::classification;
  throw std::invalid_argument(fmt::format("unknown task '{}'", name));
}

void DataSpec::validate() const {
  if (n < 1) throw std::invalid_argument("DataSpec.n must be >= 1");
  if (input_dim < 1) throw std::invalid_argument("DataSpec.input_dim must be >= 1");
  if (!(noise_half_width >= 0.0) || !std::isfinite(noise_half_width)) {
    throw std::invalid_argument("DataSpec.noise_half_width must be finite and >= 0");
  }
  if (task == Task::classification && num_classes < 2) {
    throw std::invalid_argument("classification needs num_classes >= 2");
  }
}

Dataset gen_regression(const DataSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.task != Task::regression) throw std::invalid_argument("gen_regression: task is not regression");
  if (spec.input_dim != 2) {
    throw std::invalid_argument(
        fmt::format("the product task is two-dimensional, got input_dim={}", spec.input_dim));
  }
  Rng rng(seed);
  Dataset d;
  d.spec = spec;
  d.inputs.resize(spec.n, 2);
  d.targets.resize(spec.n);
  const double eta = spec.noise_half_width;
  for (int i = 0; i < spec.n; ++i) {
    const double x0 = rng.uniform(-1.0, 1.0);
    const double x1 = rng.uniform(-1.0, 1.0);
    const double eps = eta > 0.0 ? rng.uniform(-eta, eta) : 0.0;
    d.inputs(i, 0) = x0;
    d.inputs(i, 1) = x1;
    d.targets[i] = x0 * x1 + eps;
  }
  return d;
}

Teacher make_teacher(const DataSpec& spec) {
  spec.validate();
  Teacher t{init_params(MlpSpec::classifier({spec.input_dim, kTeacherHidden, spec.num_classes}),
                        derive_seed(spec.teacher_seed, 0))};
  // Small random biases so the hidden units do not all pass through the origin.
  Rng rng(derive_seed(spec.teacher_seed, 1));
  for (auto& b : t.net.biases) {
    for (Eigen::Index k = 0; k < b.size(); ++k) b[k] = rng.uniform(-0.1, 0.1);
  }
  return t;
}

Eigen::VectorXd teacher_labels(const Teacher& teacher, const RowMatrix& inputs) {
  const BatchForward fwd = forward_batch(teacher.net, inputs);
  Eigen::VectorXd labels(inputs.rows());
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    Eigen::Index best = 0;
    fwd.predictions.row(i).maxCoeff(&best);
    labels[i] = static_cast<double>(best);
  }
  return labels;
}

namespace {

RowMatrix uniform_inputs(int n, int dim, Rng& rng) {
  RowMatrix x(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < dim; ++k) x(i, k) = rng.uniform(-1.0, 1.0);
  }
  return x;
}

constexpr int kProbeSamples = 4096;
constexpr double kMinClassFrequency = 0.05;

}  // namespace

void check_teacher(const Teacher& teacher, const DataSpec& spec) {
  Rng rng(derive_seed(spec.teacher_seed, 2));
  const Eigen::VectorXd labels =
      teacher_labels(teacher, uniform_inputs(kProbeSamples, spec.input_dim, rng));
  std::vector<int> counts(static_cast<std::size_t>(spec.num_classes), 0);
  for (Eigen::Index i = 0; i < labels.size(); ++i) ++counts[static_cast<std::size_t>(labels[i])];
  for (int c = 0; c < spec.num_classes; ++c) {
    const double freq = static_cast<double>(counts[static_cast<std::size_t>(c)]) / kProbeSamples;
    if (freq < kMinClassFrequency) {
      throw ConfigError(fmt::format(
          "teacher_seed={} gives a degenerate teacher (class {} has frequency {:.4f} < {}); "
          "choose a different teacher_seed",
          spec.teacher_seed, c, freq, kMinClassFrequency));
    }
  }
}

Dataset gen_classification(const DataSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.task != Task::classification) {
    throw std::invalid_argument("gen_classification: task is not classification");
  }
  const Teacher teacher = make_teacher(spec);
  check_teacher(teacher, spec);
  Rng rng(seed);
  Dataset d;
  d.spec = spec;
  d.inputs = uniform_inputs(spec.n, spec.input_dim, rng);
  d.targets = teacher_labels(teacher, d.inputs);
  return d;
}

Dataset generate(const DataSpec& spec, std::uint64_t seed) {
  return spec.task == Task::regression ? gen_regression(spec, seed) : gen_classification(spec, seed);
}

Dataset corrupt_labels(const Dataset& data, double p_random, std::uint64_t seed) {
  if (data.spec.task != Task::classification) {
    throw std::invalid_argument("corrupt_labels applies to classification datasets only");
  }
  if (!(p_random >= 0.0 && p_random <= 1.0)) {
    throw std::invalid_argument(fmt::format("p_random must lie in [0, 1], got {}", p_random));
  }
  Dataset out = data;
  Rng rng(seed);
  const auto classes = static_cast<std::uint64_t>(data.spec.num_classes);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (rng.unit() < p_random) out.targets[i] = static_cast<double>(rng.below(classes));
  }
  return out;
}

DatasetBundle split_bundle(const DataSpec& spec, int M, int n, int n_test, std::uint64_t seed) {
  if (M < 2) throw std::invalid_argument("split_bundle needs M >= 2");
  if (n < 1 || n_test < 1) throw std::invalid_argument("split_bundle sizes must be >= 1");
  DataSpec train_spec = spec;
  train_spec.n = n;
  DataSpec test_spec = spec;
  test_spec.n = n_test;
  DatasetBundle bundle;
  bundle.test_set = generate(test_spec, derive_seed(seed, 0));
  bundle.train_sets.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    bundle.train_sets.push_back(generate(train_spec, derive_seed(seed, static_cast<std::uint64_t>(m) + 1)));
  }
  return bundle;
}

}  // namespace gsnr
