#include "gsnr/report.hpp"

#include "json.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gsnr {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  for (Eigen::Index k = 0; k < data.inputs.cols(); ++k) out << 'x' << k << ',';
  out << "y\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index k = 0; k < data.inputs.cols(); ++k) out << format_number(data.inputs(i, k)) << ',';
    if (data.spec.task == Task::classification) {
      out << data.label(i) << '\n';
    } else {
      out << format_number(data.targets[i]) << '\n';
    }
  }
}

std::string dataset_sidecar_json(const DataSpec& spec, std::uint64_t seed, const std::string& role) {
  nlohmann::ordered_json j;
  j["role"] = role;
  j["seed"] = seed;
  j["task"] = std::string(to_string(spec.task));
  j["input_dim"] = spec.input_dim;
  j["n"] = spec.n;
  if (spec.task == Task::regression) {
    j["noise_half_width"] = spec.noise_half_width;
  } else {
    j["num_classes"] = spec.num_classes;
    j["teacher_seed"] = spec.teacher_seed;
  }
  return j.dump(2) + "\n";
}

void write_grid_csv(std::ostream& out, const GridResult& grid) {
  out << "setting_id,epoch,n,lhs,rhs,pearson_window\n";
  for (const OsgrPoint& p : grid.points) {
    out << p.setting_id << ',' << p.epoch << ',' << p.n << ',' << format_number(p.lhs) << ','
        << format_number(p.rhs19) << ',' << format_number(grid.fit_at(p.epoch).pearson) << '\n';
  }
}

void write_fit_csv(std::ostream& out, const GridResult& grid) {
  out << "epoch,pearson,slope,intercept,n_points\n";
  for (const EpochFit& f : grid.fits) {
    out << f.epoch << ',' << format_number(f.pearson) << ',' << format_number(f.slope) << ','
        << format_number(f.intercept) << ',' << f.n_points << '\n';
  }
}

void write_probes_csv(std::ostream& out, const ProbeSeries& series) {
  const int layers = series.num_layers;
  out << "epoch,train_loss,test_loss,avg_gsnr_all,avg_gsnr_layer2,p_same_sign_mean";
  for (const char* prefix : {"dgw_corr_l", "dgw_corr_top10_l", "opp_sign_l", "opp_sign_top10_l"}) {
    for (int l = 1; l <= layers; ++l) out << ',' << prefix << l;
  }
  out << '\n';
  for (const ProbeRow& r : series.rows) {
    out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.test_loss) << ','
        << format_number(r.avg_gsnr_all) << ',' << format_number(r.avg_gsnr_layer) << ','
        << format_number(r.p_same_sign_mean);
    for (const auto* column : {&r.dgw_corr, &r.dgw_corr_top, &r.opp_sign, &r.opp_sign_top}) {
      for (double v : *column) out << ',' << format_number(v);
    }
    out << '\n';
  }
}

void write_features_csv(std::ostream& out, const std::vector<FeatureCorrRecord>& records) {
  auto corr = [](const std::optional<double>& c) { return c ? format_number(*c) : std::string("degenerate"); };
  out << "unit,c_t0,t_max,c_tmax\n";
  for (const FeatureCorrRecord& r : records) {
    out << r.unit << ',' << corr(r.c_t0) << ',' << r.t_max << ',' << corr(r.c_tmax) << '\n';
  }
}

std::string identities_json(const IdentityReport& report) {
  nlohmann::ordered_json j;
  const VarianceCheck& v = report.variance;
  const GapCheck& g = report.gap;
  j["variance_relation"] = {{"trials", v.trials},
                            {"n", v.n},
                            {"empirical_sum_var_mean_grad", v.empirical},
                            {"predicted_sum_rho2_over_n", v.predicted},
                            {"relative_error", v.relative_error},
                            {"tolerance", report.variance_tolerance},
                            {"pass", report.variance_pass()}};
  j["gap_increment"] = {{"trials", g.trials},
                        {"n", g.n},
                        {"lr", g.lr},
                        {"mean_gap", g.mean_gap},
                        {"standard_error", g.standard_error},
                        {"predicted", g.predicted},
                        {"relative_error", g.relative_error},
                        {"tolerance", report.gap_tolerance},
                        {"pass", report.gap_pass()}};
  j["lr_halving"] = {{"mean_gap_half_lr", g.mean_gap_half_lr},
                     {"ratio", g.halving_ratio},
                     {"tolerance", report.halving_tolerance},
                     {"pass", report.halving_pass()}};
  j["pass"] = report.pass();
  return j.dump(2) + "\n";
}

void write_file(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path path = dir / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << content;
}

}  // namespace gsnr
