#include "gsnr/gradstats.hpp"

#include "gsnr/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gsnr {

GradMoments moments(const GradMatrix& g) {
  const Eigen::Index n = g.rows();
  if (n < 2) throw std::invalid_argument(fmt::format("moments need n >= 2 rows, got {}", n));
  GradMoments m;
  m.n = n;
  m.mean = g.column_mean();
  m.var = Eigen::VectorXd::Zero(g.cols());
  // Two-pass: squared deviations from the mean.
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const double d = g.values(i, j) - m.mean[j];
      m.var[j] += d * d;
    }
  }
  m.var /= static_cast<double>(n);
  return m;
}

GsnrVector gsnr(const GradMoments& m, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("gsnr floor must be positive");
  GsnrVector out;
  out.r.resize(m.mean.size());
  out.floored.assign(static_cast<std::size_t>(m.mean.size()), false);
  for (Eigen::Index j = 0; j < m.mean.size(); ++j) {
    const bool floored = m.var[j] < eps;
    out.r[j] = m.mean[j] * m.mean[j] / std::max(m.var[j], eps);
    if (floored) {
      out.floored[static_cast<std::size_t>(j)] = true;
      ++out.floored_count;
    }
  }
  return out;
}

ParamSubset all_params(std::size_t param_count) {
  ParamSubset s(param_count);
  for (std::size_t j = 0; j < param_count; ++j) s[j] = j;
  return s;
}

namespace {

ParamSubset range_subset(ParamRange r) {
  ParamSubset s(r.size);
  for (std::size_t k = 0; k < r.size; ++k) s[k] = r.offset + k;
  return s;
}

}  // namespace

ParamSubset layer_params(const MlpSpec& spec, int layer) { return range_subset(spec.layer_range(layer)); }

ParamSubset layer_weights(const MlpSpec& spec, int layer) { return range_subset(spec.weight_range(layer)); }

ParamSubset unfrozen_params(const FreezeMask& mask) {
  ParamSubset s;
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (!mask.frozen(j)) s.push_back(j);
  }
  return s;
}

AvgGsnr avg_gsnr(const GsnrVector& r, const ParamSubset& subset) {
  if (subset.empty()) throw std::invalid_argument("avg_gsnr over an empty subset");
  AvgGsnr out;
  double sum = 0.0;
  for (std::size_t j : subset) {
    if (j >= static_cast<std::size_t>(r.r.size())) throw std::out_of_range("avg_gsnr index out of range");
    if (r.floored[j]) {
      ++out.excluded;
    } else {
      sum += r.r[static_cast<Eigen::Index>(j)];
      ++out.used;
    }
  }
  if (out.used == 0) throw DegenerateInputError("avg_gsnr: every parameter in the subset is floored");
  out.value = sum / static_cast<double>(out.used);
  return out;
}

SignStats same_sign_proportion(const GradMatrix& g) {
  if (g.rows() < 1) throw std::invalid_argument("same_sign_proportion needs at least one row");
  const auto cols = static_cast<std::size_t>(g.cols());
  SignStats s;
  s.positive_count.assign(cols, 0);
  s.negative_count.assign(cols, 0);
  s.zero_count.assign(cols, 0);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = g.values(i, static_cast<Eigen::Index>(j));
      if (v > 0.0) {
        ++s.positive_count[j];
      } else if (v < 0.0) {
        ++s.negative_count[j];
      } else {
        ++s.zero_count[j];
      }
    }
  }
  s.p_same_sign.resize(g.cols());
  for (std::size_t j = 0; j < cols; ++j) {
    const Eigen::Index signed_count = s.positive_count[j] + s.negative_count[j];
    s.p_same_sign[static_cast<Eigen::Index>(j)] =
        signed_count == 0 ? 0.5
                          : static_cast<double>(std::max(s.positive_count[j], s.negative_count[j])) /
                                static_cast<double>(signed_count);
  }
  return s;
}

double SignStats::mean_p_same_sign() const {
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < positive_count.size(); ++j) {
    if (positive_count[j] + negative_count[j] == 0) continue;
    sum += p_same_sign[static_cast<Eigen::Index>(j)];
    ++used;
  }
  return used == 0 ? 0.5 : sum / static_cast<double>(used);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument(fmt::format("pearson: lengths differ ({} vs {})", x.size(), y.size()));
  }
  if (x.size() < 2) throw std::invalid_argument("pearson needs at least two points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    throw DegenerateInputError("pearson: an input has zero variance");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pearson(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
  return pearson(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                 std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

}  // namespace gsnr
