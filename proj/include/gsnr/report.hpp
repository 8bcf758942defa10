#pragma once

// CSV and JSON emission. Numbers are written in shortest round-trip form so
// identical runs produce identical bytes.

#include "gsnr/config.hpp"
#include "gsnr/dynamics.hpp"
#include "gsnr/harness.hpp"

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace gsnr {

std::string format_number(double v);

// Header x0,...,x{d-1},y.
void write_dataset_csv(std::ostream& out, const Dataset& data);
std::string dataset_sidecar_json(const DataSpec& spec, std::uint64_t seed, const std::string& role);

// setting_id,epoch,n,lhs,rhs,pearson_window
void write_grid_csv(std::ostream& out, const GridResult& grid);
// epoch,pearson,slope,intercept,n_points
void write_fit_csv(std::ostream& out, const GridResult& grid);

// epoch,train_loss,test_loss,avg_gsnr_all,avg_gsnr_layer2,p_same_sign_mean,
// dgw_corr_l{1..},dgw_corr_top10_l{1..},opp_sign_l{1..},opp_sign_top10_l{1..}
void write_probes_csv(std::ostream& out, const ProbeSeries& series);

// unit,c_t0,t_max,c_tmax; degenerate correlations are written as "degenerate".
void write_features_csv(std::ostream& out, const std::vector<FeatureCorrRecord>& records);

std::string identities_json(const IdentityReport& report);

// Writes `content` to dir / name, creating dir.
void write_file(const std::filesystem::path& dir, const std::string& name, const std::string& content);

}  // namespace gsnr
