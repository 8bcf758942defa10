#include "gsnr/netcore.hpp"

#include "json.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gsnr {

namespace {

std::filesystem::path header_path(const std::filesystem::path& bin_path) {
  std::filesystem::path p = bin_path;
  p.replace_extension(".json");
  return p;
}

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace

void save_params(const MlpParams& params, const std::filesystem::path& bin_path) {
  const MlpSpec& spec = params.spec;
  nlohmann::json header;
  header["format"] = "gsnr-lab-params";
  header["version"] = 1;
  header["layer_dims"] = spec.layer_dims;
  std::vector<std::string> acts;
  for (Activation a : spec.hidden_activations) acts.emplace_back(to_string(a));
  header["hidden_activations"] = acts;
  header["loss"] = std::string(to_string(spec.loss));
  header["param_count"] = spec.param_count();
  header["dtype"] = "float64-le";

  std::ofstream hdr(header_path(bin_path));
  if (!hdr) throw std::runtime_error(fmt::format("cannot write {}", header_path(bin_path).string()));
  hdr << header.dump(2) << '\n';

  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error(fmt::format("cannot write {}", bin_path.string()));
  const Eigen::VectorXd flat = params.flatten();
  for (Eigen::Index j = 0; j < flat.size(); ++j) {
    const std::uint64_t word = to_little_endian(std::bit_cast<std::uint64_t>(flat[j]));
    char bytes[8];
    std::memcpy(bytes, &word, 8);
    bin.write(bytes, 8);
  }
}

MlpParams load_params(const std::filesystem::path& bin_path) {
  std::ifstream hdr(header_path(bin_path));
  if (!hdr) throw std::runtime_error(fmt::format("cannot read {}", header_path(bin_path).string()));
  const nlohmann::json header = nlohmann::json::parse(hdr);
  if (header.value("format", "") != "gsnr-lab-params") {
    throw std::runtime_error("parameter header has an unknown format tag");
  }
  MlpSpec spec;
  spec.layer_dims = header.at("layer_dims").get<std::vector<int>>();
  for (const auto& a : header.at("hidden_activations")) {
    spec.hidden_activations.push_back(parse_activation(a.get<std::string>()));
  }
  spec.loss = parse_loss(header.at("loss").get<std::string>());
  spec.validate();

  const auto count = static_cast<Eigen::Index>(spec.param_count());
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error(fmt::format("cannot read {}", bin_path.string()));
  Eigen::VectorXd flat(count);
  for (Eigen::Index j = 0; j < count; ++j) {
    char bytes[8];
    if (!bin.read(bytes, 8)) {
      throw std::runtime_error(fmt::format("{} is truncated at entry {}", bin_path.string(), j));
    }
    std::uint64_t word = 0;
    std::memcpy(&word, bytes, 8);
    flat[j] = std::bit_cast<double>(to_little_endian(word));
  }
  if (bin.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error(fmt::format("{} has trailing bytes", bin_path.string()));
  }
  return MlpParams::unflatten(spec, flat);
}

}  // namespace gsnr
