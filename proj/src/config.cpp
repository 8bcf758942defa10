#include "gsnr/config.hpp"

#include "gsnr/errors.hpp"

#define TOML_EXCEPTIONS 1
#include <tomlplusplus/toml.hpp>

#include "json.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace gsnr {

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::gen_data: return "gen_data";
    case ExperimentKind::osgr_verify: return "osgr_verify";
    case ExperimentKind::gsnr_curve: return "gsnr_curve";
    case ExperimentKind::dynamics: return "dynamics";
    case ExperimentKind::check_identities: return "check_identities";
  }
  return "unknown";
}

ExperimentKind parse_kind(std::string_view name) {
  for (auto k : {ExperimentKind::gen_data, ExperimentKind::osgr_verify, ExperimentKind::gsnr_curve,
                 ExperimentKind::dynamics, ExperimentKind::check_identities}) {
    std::string dashed(to_string(k));
    for (char& c : dashed) c = c == '_' ? '-' : c;
    if (name == to_string(k) || name == dashed) return k;
  }
  throw ConfigError(fmt::format("unknown experiment kind '{}'", name));
}

MlpSpec ExperimentConfig::model() const {
  std::vector<int> dims{data.input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(data.task == Task::regression ? 1 : data.num_classes);
  MlpSpec spec = data.task == Task::regression ? MlpSpec::regression(dims) : MlpSpec::classifier(dims);
  spec.hidden_activations.assign(hidden.size(), activation);
  return spec;
}

MlpSpec ExperimentConfig::model_with_width(int width) const {
  ExperimentConfig copy = *this;
  copy.hidden = {width};
  return copy.model();
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, std::string_view what) {
    if (!ok) throw ConfigError(std::string(what));
  };
  try {
    data.validate();
    model().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(data.task != Task::regression || data.input_dim == 2, "regression task needs data.input_dim = 2");
  require(n_test >= 1, "data.n_test must be >= 1");
  require(p_random >= 0.0 && p_random <= 1.0, "data.p_random must lie in [0, 1]");
  require(jobs >= 1, "experiment.jobs must be >= 1");
  require(train.epochs >= 1, "train.epochs must be >= 1");
  require(train.lr >= 0.0 && std::isfinite(train.lr), "train.lr must be finite and >= 0");
  require(train.schedule.every >= 1, "train.record_every must be >= 1");
  require(train.schedule.dense_until >= 0, "train.dense_until must be >= 0");
  require(train.probes.top_frac > 0.0 && train.probes.top_frac <= 1.0, "train.top_frac must lie in (0, 1]");
  if (kind == ExperimentKind::osgr_verify) {
    require(!grid.n.empty() && !grid.width.empty(), "grid.n and grid.width must be nonempty");
    require(M >= 2, "grid.M must be >= 2");
    for (int v : grid.n) require(v >= 1, "grid.n entries must be >= 1");
    for (int v : grid.width) require(v >= 1, "grid.width entries must be >= 1");
    if (data.task == Task::regression) {
      require(!grid.noise.empty(), "grid.noise must be nonempty for regression");
      for (double v : grid.noise) require(v >= 0.0, "grid.noise entries must be >= 0");
    } else {
      require(!grid.p_random.empty(), "grid.p_random must be nonempty for classification");
      for (double v : grid.p_random) require(v >= 0.0 && v <= 1.0, "grid.p_random entries must lie in [0, 1]");
    }
  }
  if (kind == ExperimentKind::dynamics) {
    require(train.lr > 0.0, "dynamics needs train.lr > 0 (the delta-g probe is degenerate at lr = 0)");
  }
  if (kind == ExperimentKind::check_identities) {
    require(data.task == Task::regression, "check_identities runs on the regression task");
    require(identities.n >= 1, "identities.n must be >= 1");
    require(identities.trials >= 100 && identities.gap_trials >= 100, "identity checks need >= 100 trials");
    require(identities.lr > 0.0 && identities.lr <= 1e-3, "identities.lr must lie in (0, 1e-3]");
  }
}

namespace {

// Reads one TOML table and remembers which keys were consumed.
class TableReader {
 public:
  TableReader(const toml::table* table, std::string name) : table_(table), name_(std::move(name)) {}

  template <typename T>
  void get(std::string_view key, T& out) {
    const toml::node* node = find(key);
    if (node == nullptr) return;
    out = convert<T>(*node, key);
  }

  template <typename T>
  void get_list(std::string_view key, std::vector<T>& out) {
    const toml::node* node = find(key);
    if (node == nullptr) return;
    const toml::array* arr = node->as_array();
    if (arr == nullptr) throw ConfigError(fmt::format("{}.{} must be an array", name_, key));
    out.clear();
    for (const toml::node& item : *arr) out.push_back(convert<T>(item, key));
  }

  bool has(std::string_view key) const { return table_ != nullptr && table_->contains(key); }

  void reject_unknown() const {
    if (table_ == nullptr) return;
    for (auto&& [key, value] : *table_) {
      if (!used_.contains(std::string(key.str()))) {
        throw ConfigError(fmt::format("unknown key '{}.{}'", name_, key.str()));
      }
    }
  }

 private:
  const toml::node* find(std::string_view key) {
    used_.insert(std::string(key));
    if (table_ == nullptr) return nullptr;
    return table_->get(key);
  }

  template <typename T>
  T convert(const toml::node& node, std::string_view key) const {
    if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node.value<std::string>()) return *v;
      throw ConfigError(fmt::format("{}.{} must be a string", name_, key));
    } else if constexpr (std::is_same_v<T, bool>) {
      if (node.is_boolean()) return *node.value<bool>();
      throw ConfigError(fmt::format("{}.{} must be a boolean", name_, key));
    } else if constexpr (std::is_same_v<T, double>) {
      if (node.is_floating_point() || node.is_integer()) return *node.value<double>();
      throw ConfigError(fmt::format("{}.{} must be a number", name_, key));
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (node.is_integer() && *node.value<std::int64_t>() >= 0) {
        return static_cast<std::uint64_t>(*node.value<std::int64_t>());
      }
      throw ConfigError(fmt::format("{}.{} must be a nonnegative integer", name_, key));
    } else {
      static_assert(std::is_same_v<T, int>);
      if (node.is_integer()) {
        const std::int64_t v = *node.value<std::int64_t>();
        if (v >= std::numeric_limits<int>::min() && v <= std::numeric_limits<int>::max()) {
          return static_cast<int>(v);
        }
      }
      throw ConfigError(fmt::format("{}.{} must be an integer", name_, key));
    }
  }

  const toml::table* table_;
  std::string name_;
  std::set<std::string> used_;
};

}  // namespace

ExperimentConfig parse_config(std::string_view toml_text, std::string_view source,
                              std::optional<ExperimentKind> expected) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << e;
    throw ConfigError(fmt::format("cannot parse {}: {}", source, msg.str()));
  }
  static const std::set<std::string> sections{"experiment", "data", "model", "train", "grid", "identities"};
  for (auto&& [key, value] : root) {
    if (!sections.contains(std::string(key.str()))) {
      throw ConfigError(fmt::format("unknown section '{}'", key.str()));
    }
    if (!value.is_table()) throw ConfigError(fmt::format("'{}' must be a table", key.str()));
  }

  ExperimentConfig cfg;

  TableReader exp(root["experiment"].as_table(), "experiment");
  std::string kind;
  exp.get("kind", kind);
  if (!kind.empty()) cfg.kind = parse_kind(kind);
  if (expected) {
    if (!kind.empty() && cfg.kind != *expected) {
      throw ConfigError(fmt::format("config declares kind '{}' but '{}' was requested", to_string(cfg.kind),
                                    to_string(*expected)));
    }
    cfg.kind = *expected;
  } else if (kind.empty()) {
    throw ConfigError("experiment.kind is missing");
  }
  exp.get("seed", cfg.seed);
  exp.get("jobs", cfg.jobs);
  std::string out;
  exp.get("out", out);
  if (!out.empty()) cfg.out_dir = out;
  exp.reject_unknown();

  TableReader data(root["data"].as_table(), "data");
  std::string task = "regression";
  data.get("task", task);
  try {
    cfg.data.task = parse_task(task);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.data.task == Task::classification) {
    cfg.data.input_dim = 10;
    cfg.data.num_classes = 2;
  }
  data.get("input_dim", cfg.data.input_dim);
  data.get("n", cfg.data.n);
  data.get("n_test", cfg.n_test);
  data.get("noise", cfg.data.noise_half_width);
  data.get("num_classes", cfg.data.num_classes);
  data.get("teacher_seed", cfg.data.teacher_seed);
  data.get("p_random", cfg.p_random);
  data.reject_unknown();

  TableReader model(root["model"].as_table(), "model");
  model.get_list("hidden", cfg.hidden);
  std::string activation = "relu";
  model.get("activation", activation);
  try {
    cfg.activation = parse_activation(activation);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  model.reject_unknown();

  TableReader train(root["train"].as_table(), "train");
  train.get("epochs", cfg.train.epochs);
  train.get("lr", cfg.train.lr);
  if (cfg.kind == ExperimentKind::osgr_verify && !train.has("record_every") && !train.has("dense_until")) {
    cfg.train.schedule = RecordSchedule{50, 10};
  }
  train.get("record_every", cfg.train.schedule.every);
  train.get("dense_until", cfg.train.schedule.dense_until);
  train.get("top_frac", cfg.train.probes.top_frac);
  std::vector<int> frozen;
  train.get_list("freeze_layers", frozen);
  train.reject_unknown();

  TableReader grid(root["grid"].as_table(), "grid");
  grid.get_list("n", cfg.grid.n);
  grid.get_list("noise", cfg.grid.noise);
  grid.get_list("width", cfg.grid.width);
  grid.get_list("p_random", cfg.grid.p_random);
  grid.get("M", cfg.M);
  grid.reject_unknown();

  TableReader ids(root["identities"].as_table(), "identities");
  ids.get("n", cfg.identities.n);
  ids.get("trials", cfg.identities.trials);
  ids.get("gap_trials", cfg.identities.gap_trials);
  ids.get("lr", cfg.identities.lr);
  ids.get("reference_size", cfg.identities.reference_size);
  ids.get("variance_tolerance", cfg.identities.variance_tolerance);
  ids.get("gap_tolerance", cfg.identities.gap_tolerance);
  ids.get("halving_tolerance", cfg.identities.halving_tolerance);
  ids.reject_unknown();

  if (cfg.data.task == Task::regression && cfg.grid.p_random.empty()) cfg.grid.p_random = {0.0};
  if (cfg.data.task == Task::classification && cfg.grid.noise.empty()) cfg.grid.noise = {0.0};

  cfg.validate();
  if (!frozen.empty()) {
    const MlpSpec spec = cfg.model();
    std::vector<int> layers;
    for (int l : frozen) {
      if (l < 1 || l > spec.num_layers()) {
        throw ConfigError(fmt::format("train.freeze_layers entry {} outside [1, {}]", l, spec.num_layers()));
      }
      layers.push_back(l - 1);
    }
    cfg.train.freeze = FreezeMask::layers(spec, layers);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, std::optional<ExperimentKind> expected) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config file {}", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string(), expected);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(cfg.kind));
  j["seed"] = cfg.seed;
  j["data"] = {{"task", std::string(to_string(cfg.data.task))},
               {"input_dim", cfg.data.input_dim},
               {"n", cfg.data.n},
               {"n_test", cfg.n_test},
               {"noise", cfg.data.noise_half_width},
               {"num_classes", cfg.data.num_classes},
               {"teacher_seed", cfg.data.teacher_seed},
               {"p_random", cfg.p_random}};
  const MlpSpec spec = cfg.model();
  j["model"] = {{"layer_dims", spec.layer_dims},
                {"activation", std::string(to_string(cfg.activation))},
                {"loss", std::string(to_string(spec.loss))}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"lr", cfg.train.lr},
                {"record_every", cfg.train.schedule.every},
                {"dense_until", cfg.train.schedule.dense_until},
                {"top_frac", cfg.train.probes.top_frac},
                {"frozen_params", cfg.train.freeze.frozen_count()}};
  j["grid"] = {{"n", cfg.grid.n},
               {"noise", cfg.grid.noise},
               {"width", cfg.grid.width},
               {"p_random", cfg.grid.p_random},
               {"M", cfg.M}};
  j["identities"] = {{"n", cfg.identities.n},
                     {"trials", cfg.identities.trials},
                     {"gap_trials", cfg.identities.gap_trials},
                     {"lr", cfg.identities.lr},
                     {"reference_size", cfg.identities.reference_size}};
  return j.dump(2);
}

}  // namespace gsnr
