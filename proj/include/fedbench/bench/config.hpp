#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbench/core/error.hpp"
#include "fedbench/core/model.hpp"
#include "fedbench/core/optimizer.hpp"
#include "fedbench/data/partition.hpp"
#include "fedbench/protocol/engine.hpp"
#include "fedbench/protocol/network.hpp"
#include "fedbench/protocol/strategy.hpp"

#ifndef FEDBENCH_SOURCE_DIR
#define FEDBENCH_SOURCE_DIR "."
#endif

namespace fedbench {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigSchema = 1;

struct DatasetConfig {
  std::string source = "synth";  // mnist | synth | dir
  std::string images;
  std::string labels;
  std::string dir;
  std::size_t offset = 0;  // first source row used
  std::size_t limit = 0;   // 0 = all rows
  std::size_t synth_n = 1000;
  std::size_t synth_classes = 10;
  std::size_t synth_side = 8;
  double synth_sigma = 0.1;
  std::size_t n_clients = 10;
  std::size_t max_per_client = 100;
  PartitionMode partition = PartitionMode::iid;
  std::size_t k = 1;
  double size_jitter = 0.0;
  std::optional<std::uint64_t> seed;  // defaults to the experiment seed
};

struct ModelConfig {
  std::string name = "mlp";  // mlp | mlp512 | lenet | custom
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::relu;
  double dropout = 0.0;
  std::string spec;  // canonical text; authoritative when set
};

struct BaselineConfig {
  bool enabled = false;
  std::optional<std::size_t> B = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::optional<double> lr;  // defaults to strategy lr
};

struct ExperimentConfig {
  int schema = kConfigSchema;
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  ModelConfig model;
  StrategyConfig strategy;
  NetworkModel network;
  StopRule stop;
  DurationsMode durations = DurationsMode::simulated;
  ValidationMode validation = ValidationMode::all;
  bool dropout_at_train = true;
  CostModel cost;
  BaselineConfig baselines;
  std::string output = "records.jsonl";
  Json sweep;   // raw; parsed by SweepSpec
  Json attack;  // raw; parsed by AttackSpec
};

namespace detail {

// Walks one JSON object, tracking the dotted path for error messages and
// rejecting unknown keys.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  std::string at(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }
  std::string where() const { return path_.empty() ? "config" : path_; }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) && !j_[key].is_null();
  }

  // Present, possibly null.
  bool contains(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  const Json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(j_[key], at(key));
  }

  template <typename T>
  static T convert(const Json& v, const std::string& path) {
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (v.is_number_integer() && v.get<std::int64_t>() < 0) throw ConfigError(path + " must be non-negative");
        if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
      }
      if constexpr (std::is_same_v<T, double>)
        if (!v.is_number()) throw ConfigError(path + " must be a number");
      if constexpr (std::is_same_v<T, bool>)
        if (!v.is_boolean()) throw ConfigError(path + " must be true or false");
      if constexpr (std::is_same_v<T, std::string>)
        if (!v.is_string()) throw ConfigError(path + " must be a string");
      return v.get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path + " has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!used_.count(k)) throw ConfigError("unknown field " + at(k));
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// "inf" (or null) means full batch.
inline std::optional<std::size_t> parse_batch(const Json& v, const std::string& path) {
  if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf")) return std::nullopt;
  const auto b = Fields::convert<std::size_t>(v, path);
  if (b < 1) throw ConfigError(path + " must be >= 1 or \"inf\"");
  return b;
}

inline Json batch_json(const std::optional<std::size_t>& b) { return b ? Json(*b) : Json("inf"); }

template <typename F>
auto parse_enum(const std::string& path, const std::string& text, F parse) {
  try {
    return parse(text);
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline PartitionMode parse_partition(std::string_view s) {
  if (s == "iid") return PartitionMode::iid;
  if (s == "k_class") return PartitionMode::k_class;
  throw ConfigError("unknown partition mode '" + std::string(s) + "'");
}

inline std::string_view to_string(PartitionMode m) { return m == PartitionMode::iid ? "iid" : "k_class"; }

inline std::string resolve_path(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal().string();
}

}  // namespace detail

inline std::filesystem::path default_mnist_dir() {
  if (const char* env = std::getenv("FEDBENCH_DATA")) return env;
  return std::filesystem::path(FEDBENCH_SOURCE_DIR) / "data" / "mnist";
}

inline ModelSpec build_model(const ModelConfig& m, const Shape& input, std::size_t classes) {
  if (!m.spec.empty()) {
    try {
      return parse_model_spec(m.spec);
    } catch (const Error& e) {
      throw ConfigError(std::string("model.spec: ") + e.what());
    }
  }
  if (m.name == "mlp") return make_mlp(input, m.hidden, classes, m.activation, m.dropout);
  if (m.name == "mlp512") return make_mlp(input, {512, 512}, classes, m.activation, m.dropout);
  if (m.name == "lenet") return make_lenet_lite(input, classes, m.activation);
  throw ConfigError("model.name must be mlp, mlp512, lenet or custom (with model.spec)");
}

inline std::string model_label(const ModelConfig& m) {
  if (m.name == "lenet") return "LeNet";
  if (m.name == "mlp" || m.name == "mlp512") return "MLP";
  return m.name;
}

// Parses a config object. `base` resolves relative paths. Missing fields
// take defaults; unknown fields are errors.
inline ExperimentConfig parse_config(const Json& j, const std::filesystem::path& base = ".") {
  using detail::Fields;
  ExperimentConfig c;
  Fields top(j, "");
  c.schema = top.get<int>("schema", kConfigSchema);
  if (c.schema != kConfigSchema) throw ConfigError("schema must be " + std::to_string(kConfigSchema));
  c.seed = top.get<std::uint64_t>("seed", 0);
  c.output = top.get<std::string>("output", c.output);
  if (top.has("durations")) {
    const auto d = top.get<std::string>("durations", "");
    if (d != "measured" && d != "simulated") throw ConfigError("durations must be measured or simulated");
    c.durations = d == "measured" ? DurationsMode::measured : DurationsMode::simulated;
  }
  if (top.has("validation")) {
    const auto v = top.get<std::string>("validation", "");
    if (v != "all" && v != "lazy") throw ConfigError("validation must be all or lazy");
    c.validation = v == "all" ? ValidationMode::all : ValidationMode::lazy;
  }
  c.dropout_at_train = top.get<bool>("dropout_at_train", c.dropout_at_train);

  if (top.has("dataset")) {
    Fields f(top.raw("dataset"), "dataset");
    auto& d = c.dataset;
    d.source = f.get<std::string>("source", d.source);
    if (d.source != "mnist" && d.source != "synth" && d.source != "dir")
      throw ConfigError("dataset.source must be mnist, synth or dir");
    d.images = detail::resolve_path(f.get<std::string>("images", ""), base);
    d.labels = detail::resolve_path(f.get<std::string>("labels", ""), base);
    d.dir = detail::resolve_path(f.get<std::string>("dir", ""), base);
    d.offset = f.get<std::size_t>("offset", d.offset);
    d.limit = f.get<std::size_t>("limit", d.limit);
    if (f.has("synth")) {
      Fields s(f.raw("synth"), "dataset.synth");
      d.synth_n = s.get<std::size_t>("n", d.synth_n);
      d.synth_classes = s.get<std::size_t>("classes", d.synth_classes);
      d.synth_side = s.get<std::size_t>("side", d.synth_side);
      d.synth_sigma = s.get<double>("sigma", d.synth_sigma);
      s.finish();
    }
    d.n_clients = f.get<std::size_t>("n_clients", d.n_clients);
    d.max_per_client = f.get<std::size_t>("max_per_client", d.max_per_client);
    if (f.has("partition"))
      d.partition = detail::parse_enum("dataset.partition", f.get<std::string>("partition", ""), detail::parse_partition);
    d.k = f.get<std::size_t>("k", d.k);
    d.size_jitter = f.get<double>("size_jitter", d.size_jitter);
    if (f.has("seed")) d.seed = f.get<std::uint64_t>("seed", 0);
    f.finish();
  }
  if (c.dataset.source == "mnist") {
    if (c.dataset.images.empty()) c.dataset.images = (default_mnist_dir() / "mnist10k-images-idx3-ubyte.gz").string();
    if (c.dataset.labels.empty()) c.dataset.labels = (default_mnist_dir() / "mnist10k-labels-idx1-ubyte.gz").string();
  }

  if (top.has("model")) {
    Fields f(top.raw("model"), "model");
    auto& m = c.model;
    m.name = f.get<std::string>("name", m.name);
    if (f.has("hidden")) {
      m.hidden.clear();
      const Json& h = f.raw("hidden");
      if (!h.is_array()) throw ConfigError("model.hidden must be a list");
      for (std::size_t i = 0; i < h.size(); ++i)
        m.hidden.push_back(Fields::convert<std::size_t>(h[i], "model.hidden[" + std::to_string(i) + "]"));
    }
    if (f.has("activation"))
      m.activation = detail::parse_enum("model.activation", f.get<std::string>("activation", ""), parse_activation);
    m.dropout = f.get<double>("dropout", m.dropout);
    m.spec = f.get<std::string>("spec", m.spec);
    f.finish();
  }

  if (top.has("strategy")) {
    Fields f(top.raw("strategy"), "strategy");
    auto& s = c.strategy;
    if (f.has("name")) s.name = detail::parse_enum("strategy.name", f.get<std::string>("name", ""), parse_strategy);
    if (f.contains("B")) s.B = detail::parse_batch(f.raw("B"), "strategy.B");
    s.C = f.get<double>("C", s.C);
    s.E = f.get<std::size_t>("E", s.E);
    if (f.has("optimizer"))
      s.optimizer.kind = detail::parse_enum("strategy.optimizer", f.get<std::string>("optimizer", ""), parse_optimizer);
    s.optimizer.lr = f.get<double>("lr", s.optimizer.lr);
    s.optimizer.momentum = f.get<double>("momentum", s.optimizer.momentum);
    s.optimizer.beta1 = f.get<double>("beta1", s.optimizer.beta1);
    s.optimizer.beta2 = f.get<double>("beta2", s.optimizer.beta2);
    s.optimizer.epsilon = f.get<double>("epsilon", s.optimizer.epsilon);
    s.aggregate_moments = f.get<bool>("aggregate_moments", s.aggregate_moments);
    f.finish();
  }

  if (top.has("network")) {
    Fields f(top.raw("network"), "network");
    auto& n = c.network;
    n.client_bandwidth_bps = f.get<double>("client_bandwidth_bps", n.client_bandwidth_bps);
    if (f.has("server_bandwidth_bps")) n.server_bandwidth_bps = f.get<double>("server_bandwidth_bps", 0.0);
    n.latency_s = f.get<double>("latency_s", n.latency_s);
    if (f.has("precision")) {
      const auto p = f.get<std::string>("precision", "");
      if (p != "f32" && p != "f64") throw ConfigError("network.precision must be f32 or f64");
      n.precision = p == "f32" ? WirePrecision::f32 : WirePrecision::f64;
    }
    f.finish();
  }

  if (top.has("stop")) {
    Fields f(top.raw("stop"), "stop");
    c.stop.max_round = f.get<std::size_t>("max_round", c.stop.max_round);
    c.stop.patience = f.get<std::size_t>("patience", c.stop.patience);
    f.finish();
  }

  if (top.has("cost")) {
    Fields f(top.raw("cost"), "cost");
    c.cost.seconds_per_flop = f.get<double>("seconds_per_flop", c.cost.seconds_per_flop);
    c.cost.server_overhead_s = f.get<double>("server_overhead_s", c.cost.server_overhead_s);
    f.finish();
  }

  if (top.has("baselines")) {
    Fields f(top.raw("baselines"), "baselines");
    auto& b = c.baselines;
    b.enabled = f.get<bool>("enabled", b.enabled);
    if (f.contains("B")) b.B = detail::parse_batch(f.raw("B"), "baselines.B");
    b.max_epochs = f.get<std::size_t>("max_epochs", b.max_epochs);
    b.patience = f.get<std::size_t>("patience", b.patience);
    if (f.has("lr")) b.lr = f.get<double>("lr", 0.0);
    f.finish();
  }

  if (top.has("sweep")) c.sweep = top.raw("sweep");
  if (top.has("attack")) c.attack = top.raw("attack");
  top.finish();
  return c;
}

// Range checks that need the whole config.
inline void validate_config(const ExperimentConfig& c) {
  c.strategy.validate();
  try {
    c.network.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
  const auto& d = c.dataset;
  if (d.n_clients < 1) throw ConfigError("dataset.n_clients must be >= 1");
  if (d.source != "dir" && d.max_per_client < 3) throw ConfigError("dataset.max_per_client must be >= 3");
  if (d.partition == PartitionMode::k_class && d.k < 1) throw ConfigError("dataset.k must be >= 1");
  if (d.size_jitter < 0.0 || d.size_jitter >= 1.0) throw ConfigError("dataset.size_jitter must be in [0,1)");
  if (c.model.dropout < 0.0 || c.model.dropout >= 1.0) throw ConfigError("model.dropout must be in [0,1)");
  if (d.source == "mnist") {
    if (!std::filesystem::exists(d.images)) throw ConfigError("dataset.images: file not found: " + d.images);
    if (!std::filesystem::exists(d.labels)) throw ConfigError("dataset.labels: file not found: " + d.labels);
  }
  if (d.source == "dir" && !std::filesystem::is_directory(std::filesystem::path(d.dir) / "clients"))
    throw ConfigError("dataset.dir: no clients/ directory under " + d.dir);
  if (d.source == "synth" && d.synth_n < d.synth_classes) throw ConfigError("dataset.synth.n must be >= classes");
  if (c.cost.seconds_per_flop < 0.0 || c.cost.server_overhead_s < 0.0) throw ConfigError("cost values must be >= 0");
  if (c.baselines.lr && !(*c.baselines.lr > 0.0)) throw ConfigError("baselines.lr must be > 0");
}

// Fully materialized config: every default written out.
inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["schema"] = c.schema;
  j["seed"] = c.seed;
  const auto& d = c.dataset;
  Json dj;
  dj["source"] = d.source;
  if (d.source == "mnist") {
    dj["images"] = d.images;
    dj["labels"] = d.labels;
  }
  if (d.source == "dir") dj["dir"] = d.dir;
  dj["offset"] = d.offset;
  dj["limit"] = d.limit;
  if (d.source == "synth")
    dj["synth"] = {{"n", d.synth_n}, {"classes", d.synth_classes}, {"side", d.synth_side}, {"sigma", d.synth_sigma}};
  dj["n_clients"] = d.n_clients;
  dj["max_per_client"] = d.max_per_client;
  dj["partition"] = detail::to_string(d.partition);
  dj["k"] = d.k;
  dj["size_jitter"] = d.size_jitter;
  dj["seed"] = d.seed.value_or(c.seed);
  j["dataset"] = dj;
  j["model"] = {{"name", c.model.name},
                {"hidden", c.model.hidden},
                {"activation", std::string(to_string(c.model.activation))},
                {"dropout", c.model.dropout},
                {"spec", c.model.spec}};
  const auto& s = c.strategy;
  j["strategy"] = {{"name", std::string(to_string(s.name))},
                   {"B", detail::batch_json(s.B)},
                   {"C", s.C},
                   {"E", s.E},
                   {"optimizer", std::string(to_string(s.optimizer.kind))},
                   {"lr", s.optimizer.lr},
                   {"momentum", s.optimizer.momentum},
                   {"beta1", s.optimizer.beta1},
                   {"beta2", s.optimizer.beta2},
                   {"epsilon", s.optimizer.epsilon},
                   {"aggregate_moments", s.aggregate_moments}};
  j["network"] = {{"client_bandwidth_bps", c.network.client_bandwidth_bps},
                  {"server_bandwidth_bps", c.network.server_bandwidth_bps ? Json(*c.network.server_bandwidth_bps) : Json(nullptr)},
                  {"latency_s", c.network.latency_s},
                  {"precision", c.network.precision == WirePrecision::f32 ? "f32" : "f64"}};
  j["stop"] = {{"max_round", c.stop.max_round}, {"patience", c.stop.patience}};
  j["durations"] = std::string(to_string(c.durations));
  j["validation"] = std::string(to_string(c.validation));
  j["dropout_at_train"] = c.dropout_at_train;
  j["cost"] = {{"seconds_per_flop", c.cost.seconds_per_flop}, {"server_overhead_s", c.cost.server_overhead_s}};
  j["baselines"] = {{"enabled", c.baselines.enabled},
                    {"B", detail::batch_json(c.baselines.B)},
                    {"max_epochs", c.baselines.max_epochs},
                    {"patience", c.baselines.patience},
                    {"lr", c.baselines.lr.value_or(s.optimizer.lr)}};
  j["output"] = c.output;
  if (!c.sweep.is_null()) j["sweep"] = c.sweep;
  if (!c.attack.is_null()) j["attack"] = c.attack;
  return j;
}

// Materializes defaults that depend on other fields (dataset seed, model
// spec text) so the emitted config alone reproduces the run.
inline ExperimentConfig resolve(ExperimentConfig c, const Shape& input, std::size_t classes) {
  if (!c.dataset.seed) c.dataset.seed = c.seed;
  if (!c.baselines.lr) c.baselines.lr = c.strategy.optimizer.lr;
  if (c.model.spec.empty()) c.model.spec = to_string(build_model(c.model, input, classes));
  c.strategy = c.strategy.normalized();
  return c;
}

// FEDBENCH_SEED overrides the top-level seed.
inline void apply_env_overrides(ExperimentConfig& c) {
  if (const char* s = std::getenv("FEDBENCH_SEED"); s && *s) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(s, &used);
      if (used != std::string_view(s).size()) throw std::invalid_argument("trailing characters");
      c.seed = v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("FEDBENCH_SEED is not an unsigned integer: ") + s);
    }
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(in, nullptr, true, true);  // comments allowed
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto c = parse_config(j, path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path());
  apply_env_overrides(c);
  return c;
}

}  // namespace fedbench
