#include "fedlips/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fedlips/error.hpp"

namespace fedlips {

using nlohmann::json;

std::string_view to_string(DatasetKind k) {
  return k == DatasetKind::kSynthetic ? "synthetic" : "cifar10";
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kSeparate: return "separate";
    case Method::kFedAvg: return "fedavg";
    case Method::kFedBN: return "fedbn";
    case Method::kLips: return "lips";
  }
  return "?";
}

std::string_view to_string(FixVariant v) {
  return v == FixVariant::kFreeze ? "freeze" : "aggregate_only";
}

Method parse_method(std::string_view id) {
  if (id == "separate") return Method::kSeparate;
  if (id == "fedavg") return Method::kFedAvg;
  if (id == "fedbn") return Method::kFedBN;
  if (id == "lips") return Method::kLips;
  throw ArgumentError("unknown method '" + std::string(id) + "'");
}

namespace {

// Typed accessors that turn nlohmann type errors into ConfigErrors naming
// the field.
class Reader {
 public:
  Reader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
  }

  void allow(std::initializer_list<std::string_view> keys) const {
    std::set<std::string_view> ok(keys);
    for (const auto& [k, _] : obj_.items()) {
      if (!ok.contains(k)) throw ConfigError(path(k), "unknown key");
    }
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  const json& at(const char* key) const { return obj_.at(key); }
  std::string path(std::string_view key) const {
    return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key);
  }

  void require(const char* key) const {
    if (!obj_.contains(key)) throw ConfigError(path(key), "required key missing");
  }

  template <class T>
  void read(const char* key, T& out) const {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path(key), "expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(path(key), "expected a number");
      out = v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path(key), "expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(path(key), "expected a non-negative integer");
      }
      out = static_cast<T>(v.get<std::uint64_t>());
    } else {
      if (!v.is_number_integer()) throw ConfigError(path(key), "expected an integer");
      out = static_cast<T>(v.get<std::int64_t>());
    }
  }

  template <class Enum, class Parse>
  void read_enum(const char* key, Enum& out, Parse parse) const {
    std::string s;
    read(key, s);
    if (!has(key)) return;
    try {
      out = parse(s);
    } catch (const ArgumentError& e) {
      throw ConfigError(path(key), e.what());
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
};

void read_dataset(const json& node, DatasetConfig& ds) {
  if (node.is_string()) {
    const auto id = node.get<std::string>();
    if (id == "synthetic") ds.kind = DatasetKind::kSynthetic;
    else if (id == "cifar10") ds.kind = DatasetKind::kCifar10;
    else throw ConfigError("dataset", "unknown dataset '" + id + "'");
    return;
  }
  Reader r(node, "dataset");
  r.allow({"kind", "num_classes", "sample_shape", "n_per_class", "class_separation", "noise",
           "directory"});
  r.require("kind");
  std::string kind;
  r.read("kind", kind);
  if (kind == "synthetic") ds.kind = DatasetKind::kSynthetic;
  else if (kind == "cifar10") ds.kind = DatasetKind::kCifar10;
  else throw ConfigError("dataset.kind", "unknown dataset '" + kind + "'");
  r.read("num_classes", ds.num_classes);
  if (r.has("sample_shape")) {
    const json& s = r.at("sample_shape");
    if (!s.is_array() || s.empty()) throw ConfigError("dataset.sample_shape", "expected a non-empty array");
    ds.sample_shape.clear();
    for (const auto& d : s) {
      if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) {
        throw ConfigError("dataset.sample_shape", "dimensions must be positive integers");
      }
      ds.sample_shape.push_back(d.get<std::size_t>());
    }
  }
  r.read("n_per_class", ds.n_per_class);
  r.read("class_separation", ds.class_separation);
  r.read("noise", ds.noise);
  r.read("directory", ds.directory);
}

void read_lips(const json& node, LipsConfig& l) {
  Reader r(node, "lips");
  r.allow({"tau0", "k", "criterion", "reinit", "hold_mask", "scope"});
  r.read("tau0", l.tau0);
  r.read("k", l.k);
  r.read_enum("criterion", l.criterion, lips::parse_criterion);
  r.read_enum("reinit", l.reinit, lips::parse_reinit);
  r.read("hold_mask", l.hold_mask);
  if (r.has("scope")) {
    const json& s = r.at("scope");
    if (!s.is_array()) throw ConfigError("lips.scope", "expected an array of layer names");
    std::vector<std::string> names;
    for (const auto& n : s) {
      if (!n.is_string()) throw ConfigError("lips.scope", "expected an array of layer names");
      names.push_back(n.get<std::string>());
    }
    l.scope = std::move(names);
  }
}

}  // namespace

void validate(const ExperimentConfig& c) {
  auto fail = [](const char* field, const std::string& what) { throw ConfigError(field, what); };
  const auto& d = c.dataset;
  if (d.kind == DatasetKind::kSynthetic) {
    if (d.num_classes < 2) fail("dataset.num_classes", "must be at least 2");
    if (!(d.class_separation > 0.0)) fail("dataset.class_separation", "must be positive");
    if (!(d.noise > 0.0)) fail("dataset.noise", "must be positive");
  } else if (d.directory.empty()) {
    fail("dataset.directory", "required for cifar10");
  }
  if (c.n_clients == 0) fail("n_clients", "must be positive");
  if (c.samples_per_client == 0) fail("samples_per_client", "must be positive");
  if (c.test_per_client == 0) fail("test_per_client", "must be positive");
  if (!(c.alpha > 0.0)) fail("alpha", "must be positive");
  if (c.rounds < 0) fail("rounds", "must be non-negative");
  if (c.local_epochs < 1) fail("local_epochs", "must be positive");
  if (c.batch_size == 0) fail("batch_size", "must be positive");
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) fail("lr", "must be a finite non-negative number");
  if (!(c.lips.tau0 >= 0.0 && c.lips.tau0 < 1.0)) fail("lips.tau0", "must be in [0, 1)");
  if (c.lips.k < 1) fail("lips.k", "must be at least 1");
  if (c.fix_round && *c.fix_round < 1) fail("fix_round", "must be at least 1");
  if (c.metrics_t0 < 1) fail("metrics_t0", "must be at least 1");
  if (c.rounds > 0 && c.metrics_t0 >= c.rounds) fail("metrics_t0", "must be below rounds");
  if (!(c.participation > 0.0 && c.participation <= 1.0)) {
    fail("participation", "must be in (0, 1]");
  }
  if (c.parallel_workers < 1) fail("parallel_workers", "must be at least 1");
  if (d.kind == DatasetKind::kSynthetic) {
    const std::size_t need = c.n_clients * (c.samples_per_client + c.test_per_client);
    if (d.n_per_class != 0 && d.n_per_class * d.num_classes < need) {
      fail("dataset.n_per_class", "dataset of " + std::to_string(d.n_per_class * d.num_classes) +
                                      " samples cannot cover " + std::to_string(need));
    }
  }
}

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
  Reader r(root, "");
  r.allow({"dataset", "arch", "width", "n_clients", "samples_per_client", "test_per_client",
           "alpha", "rounds", "local_epochs", "batch_size", "lr", "method", "lips", "fix_round",
           "fix_variant", "metrics_t0", "participation", "common_init", "seed", "output_dir",
           "parallel_workers"});
  r.require("dataset");
  r.require("method");
  r.require("seed");

  ExperimentConfig c;
  read_dataset(root.at("dataset"), c.dataset);
  r.read_enum("arch", c.arch, [](std::string_view s) { return model::parse_arch(s); });
  r.read("width", c.width);
  r.read("n_clients", c.n_clients);
  r.read("samples_per_client", c.samples_per_client);
  r.read("test_per_client", c.test_per_client);
  r.read("alpha", c.alpha);
  r.read("rounds", c.rounds);
  r.read("local_epochs", c.local_epochs);
  r.read("batch_size", c.batch_size);
  r.read("lr", c.lr);
  r.read_enum("method", c.method, parse_method);
  if (r.has("lips")) read_lips(root.at("lips"), c.lips);
  if (r.has("fix_round")) {
    int v = 0;
    r.read("fix_round", v);
    c.fix_round = v;
  }
  r.read_enum("fix_variant", c.fix_variant, [](std::string_view s) {
    if (s == "freeze") return FixVariant::kFreeze;
    if (s == "aggregate_only") return FixVariant::kAggregateOnly;
    throw ArgumentError("unknown fix variant '" + std::string(s) + "'");
  });
  r.read("metrics_t0", c.metrics_t0);
  r.read("participation", c.participation);
  r.read("common_init", c.common_init);
  r.read("seed", c.seed);
  r.read("output_dir", c.output_dir);
  r.read("parallel_workers", c.parallel_workers);
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  auto& d = j["dataset"];
  d["kind"] = to_string(c.dataset.kind);
  if (c.dataset.kind == DatasetKind::kSynthetic) {
    d["num_classes"] = c.dataset.num_classes;
    d["sample_shape"] = c.dataset.sample_shape;
    d["n_per_class"] = c.dataset.n_per_class;
    d["class_separation"] = c.dataset.class_separation;
    d["noise"] = c.dataset.noise;
  } else {
    d["directory"] = c.dataset.directory;
  }
  j["arch"] = model::to_string(c.arch);
  j["width"] = c.width;
  j["n_clients"] = c.n_clients;
  j["samples_per_client"] = c.samples_per_client;
  j["test_per_client"] = c.test_per_client;
  j["alpha"] = c.alpha;
  j["rounds"] = c.rounds;
  j["local_epochs"] = c.local_epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["method"] = to_string(c.method);
  auto& l = j["lips"];
  l["tau0"] = c.lips.tau0;
  l["k"] = c.lips.k;
  l["criterion"] = lips::to_string(c.lips.criterion);
  l["reinit"] = lips::to_string(c.lips.reinit);
  l["hold_mask"] = c.lips.hold_mask;
  l["scope"] = c.lips.scope ? nlohmann::ordered_json(*c.lips.scope) : nlohmann::ordered_json();
  j["fix_round"] = c.fix_round ? nlohmann::ordered_json(*c.fix_round) : nlohmann::ordered_json();
  j["fix_variant"] = to_string(c.fix_variant);
  j["metrics_t0"] = c.metrics_t0;
  j["participation"] = c.participation;
  j["common_init"] = c.common_init;
  j["seed"] = c.seed;
  return j.dump(2) + "\n";
}

std::size_t resolved_samples_per_class(const ExperimentConfig& c) {
  if (c.dataset.n_per_class != 0) return c.dataset.n_per_class;
  // Twice the requested volume, so that skewed clients rarely drain a class.
  const std::size_t need = c.n_clients * (c.samples_per_client + c.test_per_client);
  return (2 * need + c.dataset.num_classes - 1) / c.dataset.num_classes;
}

}  // namespace fedlips
