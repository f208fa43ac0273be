#ifndef ROBUSTMON_CONFIG_HPP
#define ROBUSTMON_CONFIG_HPP

// Experiment configuration: a strict JSON schema (unknown keys are errors)
// that round-trips losslessly.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmon/apsim.hpp"
#include "robustmon/error.hpp"
#include "robustmon/monitors.hpp"

namespace robustmon::config {

using Json = nlohmann::ordered_json;

struct CorpusSection {
  std::vector<apsim::PatientProfile> profiles = apsim::reference_profiles();
  int episodes_per_profile = 50;
  long horizon = 288;
  std::uint64_t seed = 1;
  apsim::MealPlan meals;
  apsim::FaultCampaign faults;
  apsim::SimOptions sim;
};

struct FeatureSection {
  int window_len = 6;
  int horizon = 6;  // T
  long delta = 6;   // tolerance window
  int train_stride = 1;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::uint64_t split_seed = 1;
  rules::RuleParams rule_params;
};

struct ModelSpec {
  monitors::MonitorKind kind = monitors::MonitorKind::mlp;
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.001;
  std::vector<int> hidden;  // empty = architecture default
  double w = 0.5;           // semantic weight, custom kinds only

  bool is_custom() const {
    return kind == monitors::MonitorKind::mlp_custom || kind == monitors::MonitorKind::lstm_custom;
  }
  bool is_neural() const { return kind != monitors::MonitorKind::rule; }
};

struct GaussianSection {
  std::vector<double> sigma{0.1, 0.25, 0.5, 0.75, 1.0};
  std::uint64_t seed = 1;
};

struct FgsmSection {
  std::vector<double> epsilon{0.01, 0.05, 0.1, 0.2};
};

struct BlackboxSection {
  std::vector<std::string> models{"lstm"};
  std::vector<double> epsilon{0.1, 0.2};
  std::size_t query_budget = 0;  // 0 = the whole training split
  int epochs = 10;
  int batch_size = 64;
  std::vector<int> hidden{128, 64};
  std::uint64_t seed = 1;
};

struct ExperimentConfig {
  std::string output_dir = "runs/default";
  CorpusSection corpus;
  FeatureSection features;
  std::vector<ModelSpec> models;
  std::vector<std::uint64_t> seeds{1};
  GaussianSection gaussian;
  FgsmSection fgsm;
  BlackboxSection blackbox;
};

// ---------------------------------------------------------------------------
// Strict reader

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
  }

  void allow(std::initializer_list<const char*> keys, std::initializer_list<const char*> required = {}) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!ok.count(k)) throw ConfigError(path_ + "/" + k, "unknown key");
    }
    for (const char* k : required) {
      if (!j_.contains(k)) throw ConfigError(path_ + "/" + k, "required key is missing");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  std::string at(const char* key) const { return path_ + "/" + key; }
  const nlohmann::json& raw(const char* key) const { return j_.at(key); }
  Reader sub(const char* key) const { return Reader(j_.at(key), at(key)); }

  template <class T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), at(key));
  }

  template <class T>
  static T convert(const nlohmann::json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<long long>() < 0) throw ConfigError(path, "expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path, "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path, "expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError(path, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "/" + std::to_string(i)));
      }
      return out;
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
};

inline std::pair<double, double> read_range(const nlohmann::json& v, const std::string& path) {
  const auto r = Reader::convert<std::vector<double>>(v, path);
  if (r.size() != 2) throw ConfigError(path, "expected [min, max]");
  if (r[0] > r[1]) throw ConfigError(path, "min exceeds max");
  return {r[0], r[1]};
}

inline apsim::PatientProfile read_profile(const nlohmann::json& v, const std::string& path) {
  if (v.is_string()) {
    for (const auto& p : apsim::reference_profiles()) {
      if (p.id == v.get<std::string>()) return p;
    }
    throw ConfigError(path, "unknown built-in profile '" + v.get<std::string>() + "'");
  }
  Reader r(v, path);
  r.allow({"id", "basal_glucose", "basal_insulin", "insulin_sensitivity", "carb_ratio"},
          {"id", "basal_glucose", "basal_insulin", "insulin_sensitivity", "carb_ratio"});
  std::string id;
  double gb = 0, basal = 0, isf = 0, cr = 0;
  r.get("id", id);
  r.get("basal_glucose", gb);
  r.get("basal_insulin", basal);
  r.get("insulin_sensitivity", isf);
  r.get("carb_ratio", cr);
  try {
    return apsim::make_profile(id, gb, basal, isf, cr);
  } catch (const InvalidArgument& e) {
    throw ConfigError(path, e.what());
  }
}

inline CorpusSection read_corpus(const Reader& r) {
  r.allow({"profiles", "episodes_per_profile", "horizon", "seed", "fault_mix", "fault_start", "fault_duration",
           "fault_magnitude", "meals", "sensor_noise_sd", "bgt", "hypo_threshold", "hyper_threshold"},
          {"seed"});
  CorpusSection c;
  if (r.has("profiles")) {
    const auto& arr = r.raw("profiles");
    if (!arr.is_array() || arr.empty()) throw ConfigError(r.at("profiles"), "expected a nonempty array");
    c.profiles.clear();
    std::set<std::string> ids;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.profiles.push_back(read_profile(arr[i], r.at("profiles") + "/" + std::to_string(i)));
      if (!ids.insert(c.profiles.back().id).second) {
        throw ConfigError(r.at("profiles") + "/" + std::to_string(i), "duplicate profile id");
      }
    }
  }
  r.get("episodes_per_profile", c.episodes_per_profile);
  if (c.episodes_per_profile < 1) throw ConfigError(r.at("episodes_per_profile"), "must be >= 1");
  r.get("horizon", c.horizon);
  if (c.horizon < 1) throw ConfigError(r.at("horizon"), "must be >= 1");
  r.get("seed", c.seed);
  if (r.has("fault_mix")) {
    const auto& m = r.raw("fault_mix");
    if (!m.is_object()) throw ConfigError(r.at("fault_mix"), "expected an object");
    c.faults.mix.clear();
    for (const auto& [k, v] : m.items()) {
      const auto p = r.at("fault_mix") + "/" + k;
      if (k != "none") {
        try {
          apsim::fault_kind_from_string(k);
        } catch (const InvalidArgument&) {
          throw ConfigError(p, "unknown fault kind");
        }
      }
      c.faults.mix[k] = Reader::convert<double>(v, p);
    }
  }
  if (r.has("fault_start")) {
    const auto [lo, hi] = read_range(r.raw("fault_start"), r.at("fault_start"));
    c.faults.start_min = static_cast<long>(lo);
    c.faults.start_max = static_cast<long>(hi);
  }
  if (r.has("fault_duration")) {
    const auto [lo, hi] = read_range(r.raw("fault_duration"), r.at("fault_duration"));
    c.faults.duration_min = static_cast<long>(lo);
    c.faults.duration_max = static_cast<long>(hi);
  }
  if (r.has("fault_magnitude")) {
    const auto m = r.sub("fault_magnitude");
    m.allow({"sensor_bias", "sensor_freeze", "command_overwrite", "command_scale"});
    for (const char* k : {"sensor_bias", "sensor_freeze", "command_overwrite", "command_scale"}) {
      if (m.has(k)) c.faults.magnitude[k] = read_range(m.raw(k), m.at(k));
    }
  }
  try {
    c.faults.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(r.at("fault_mix"), e.what());
  }
  if (r.has("meals")) {
    const auto m = r.sub("meals");
    m.allow({"base_steps", "jitter", "carbs", "announce_error"});
    m.get("base_steps", c.meals.base_steps);
    m.get("jitter", c.meals.jitter);
    if (m.has("carbs")) {
      const auto [lo, hi] = read_range(m.raw("carbs"), m.at("carbs"));
      if (lo < 0) throw ConfigError(m.at("carbs"), "carbs must be >= 0");
      c.meals.carbs_min = lo;
      c.meals.carbs_max = hi;
    }
    m.get("announce_error", c.meals.announce_error);
  }
  r.get("sensor_noise_sd", c.sim.sensor_noise_sd);
  if (c.sim.sensor_noise_sd < 0) throw ConfigError(r.at("sensor_noise_sd"), "must be >= 0");
  r.get("bgt", c.sim.bgt);
  r.get("hypo_threshold", c.sim.hypo_threshold);
  r.get("hyper_threshold", c.sim.hyper_threshold);
  return c;
}

inline FeatureSection read_features(const Reader& r) {
  r.allow({"window_len", "T", "delta", "train_stride", "train_fraction", "val_fraction", "split_seed",
           "bg_slope_deadband", "iob_slope_deadband", "action_deadband"},
          {"split_seed"});
  FeatureSection f;
  r.get("window_len", f.window_len);
  if (f.window_len < 2) throw ConfigError(r.at("window_len"), "must be >= 2");
  r.get("T", f.horizon);
  if (f.horizon < 1) throw ConfigError(r.at("T"), "must be >= 1");
  r.get("delta", f.delta);
  if (f.delta < 0) throw ConfigError(r.at("delta"), "must be >= 0");
  r.get("train_stride", f.train_stride);
  if (f.train_stride < 1) throw ConfigError(r.at("train_stride"), "must be >= 1");
  r.get("train_fraction", f.train_fraction);
  r.get("val_fraction", f.val_fraction);
  if (!(f.train_fraction > 0) || f.val_fraction < 0 || f.train_fraction + f.val_fraction >= 1) {
    throw ConfigError(r.at("train_fraction"), "fractions must leave a nonempty test split");
  }
  r.get("split_seed", f.split_seed);
  r.get("bg_slope_deadband", f.rule_params.bg_slope_deadband);
  r.get("iob_slope_deadband", f.rule_params.iob_slope_deadband);
  r.get("action_deadband", f.rule_params.action_deadband);
  return f;
}

inline ModelSpec read_model(const Reader& r) {
  r.allow({"kind", "epochs", "batch_size", "lr", "hidden", "w"}, {"kind"});
  ModelSpec m;
  std::string kind;
  r.get("kind", kind);
  try {
    m.kind = monitors::monitor_kind_from_string(kind);
  } catch (const InvalidArgument&) {
    throw ConfigError(r.at("kind"), "unknown monitor kind '" + kind + "'");
  }
  if (!m.is_neural()) {
    r.allow({"kind"});
    return m;
  }
  r.get("epochs", m.epochs);
  if (m.epochs < 1) throw ConfigError(r.at("epochs"), "must be >= 1");
  r.get("batch_size", m.batch_size);
  if (m.batch_size < 1) throw ConfigError(r.at("batch_size"), "must be >= 1");
  r.get("lr", m.lr);
  if (!(m.lr > 0)) throw ConfigError(r.at("lr"), "must be > 0");
  r.get("hidden", m.hidden);
  for (int h : m.hidden) {
    if (h < 1) throw ConfigError(r.at("hidden"), "layer sizes must be >= 1");
  }
  if (r.has("w")) {
    if (!m.is_custom()) throw ConfigError(r.at("w"), "only custom monitors take a semantic weight");
    r.get("w", m.w);
    if (!(m.w >= 0) || !std::isfinite(m.w)) throw ConfigError(r.at("w"), "must be finite and >= 0");
  }
  return m;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  Reader r(j, "");
  r.allow({"output_dir", "corpus", "features", "models", "seeds", "perturbations"},
          {"corpus", "features", "models", "seeds"});
  ExperimentConfig c;
  r.get("output_dir", c.output_dir);
  c.corpus = read_corpus(r.sub("corpus"));
  c.features = read_features(r.sub("features"));
  const auto& models = r.raw("models");
  if (!models.is_array() || models.empty()) throw ConfigError("/models", "expected a nonempty array");
  std::set<std::string> kinds;
  for (std::size_t i = 0; i < models.size(); ++i) {
    c.models.push_back(read_model(Reader(models[i], "/models/" + std::to_string(i))));
    if (!kinds.insert(monitors::to_string(c.models.back().kind)).second) {
      throw ConfigError("/models/" + std::to_string(i), "duplicate monitor kind");
    }
  }
  r.get("seeds", c.seeds);
  if (c.seeds.empty()) throw ConfigError("/seeds", "expected at least one seed");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw ConfigError("/seeds", "seeds must be distinct");
  }
  c.gaussian.sigma.clear();
  c.fgsm.epsilon.clear();
  c.blackbox.models.clear();
  c.blackbox.epsilon.clear();
  if (r.has("perturbations")) {
    const auto p = r.sub("perturbations");
    p.allow({"gaussian", "fgsm", "blackbox"});
    auto positive_list = [](const Reader& s, const char* key, std::vector<double>& out) {
      s.get(key, out);
      for (double v : out) {
        if (!(v > 0) || !std::isfinite(v)) throw ConfigError(s.at(key), "values must be finite and > 0");
      }
      if (std::set<double>(out.begin(), out.end()).size() != out.size()) {
        throw ConfigError(s.at(key), "values must be distinct");
      }
    };
    if (p.has("gaussian")) {
      const auto g = p.sub("gaussian");
      g.allow({"sigma", "seed"}, {"sigma", "seed"});
      positive_list(g, "sigma", c.gaussian.sigma);
      g.get("seed", c.gaussian.seed);
    }
    if (p.has("fgsm")) {
      const auto f = p.sub("fgsm");
      f.allow({"epsilon"}, {"epsilon"});
      positive_list(f, "epsilon", c.fgsm.epsilon);
    }
    if (p.has("blackbox")) {
      const auto b = p.sub("blackbox");
      b.allow({"models", "epsilon", "query_budget", "epochs", "batch_size", "hidden", "seed"},
              {"models", "epsilon", "seed"});
      b.get("models", c.blackbox.models);
      for (std::size_t i = 0; i < c.blackbox.models.size(); ++i) {
        const auto& name = c.blackbox.models[i];
        const bool listed = kinds.count(name) > 0;
        if (!listed || name == "rule") {
          throw ConfigError(b.at("models") + "/" + std::to_string(i), "must name a neural monitor from /models");
        }
      }
      positive_list(b, "epsilon", c.blackbox.epsilon);
      b.get("query_budget", c.blackbox.query_budget);
      b.get("epochs", c.blackbox.epochs);
      if (c.blackbox.epochs < 1) throw ConfigError(b.at("epochs"), "must be >= 1");
      b.get("batch_size", c.blackbox.batch_size);
      if (c.blackbox.batch_size < 1) throw ConfigError(b.at("batch_size"), "must be >= 1");
      b.get("hidden", c.blackbox.hidden);
      if (c.blackbox.hidden.empty()) throw ConfigError(b.at("hidden"), "expected at least one layer");
      b.get("seed", c.blackbox.seed);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Canonical serialization

inline Json to_json(const CorpusSection& c) {
  Json profiles = Json::array();
  for (const auto& p : c.profiles) {
    profiles.push_back({{"id", p.id},
                        {"basal_glucose", p.basal_glucose},
                        {"basal_insulin", p.basal_insulin},
                        {"insulin_sensitivity", p.insulin_sensitivity},
                        {"carb_ratio", p.carb_ratio}});
  }
  Json mix = Json::object();
  for (const auto& [k, v] : c.faults.mix) mix[k] = v;
  Json mag = Json::object();
  for (const auto& [k, v] : c.faults.magnitude) mag[k] = {v.first, v.second};
  return {{"profiles", profiles},
          {"episodes_per_profile", c.episodes_per_profile},
          {"horizon", c.horizon},
          {"seed", c.seed},
          {"fault_mix", mix},
          {"fault_start", {c.faults.start_min, c.faults.start_max}},
          {"fault_duration", {c.faults.duration_min, c.faults.duration_max}},
          {"fault_magnitude", mag},
          {"meals",
           {{"base_steps", c.meals.base_steps},
            {"jitter", c.meals.jitter},
            {"carbs", {c.meals.carbs_min, c.meals.carbs_max}},
            {"announce_error", c.meals.announce_error}}},
          {"sensor_noise_sd", c.sim.sensor_noise_sd},
          {"bgt", c.sim.bgt},
          {"hypo_threshold", c.sim.hypo_threshold},
          {"hyper_threshold", c.sim.hyper_threshold}};
}

inline Json to_json(const FeatureSection& f) {
  return {{"window_len", f.window_len},
          {"T", f.horizon},
          {"delta", f.delta},
          {"train_stride", f.train_stride},
          {"train_fraction", f.train_fraction},
          {"val_fraction", f.val_fraction},
          {"split_seed", f.split_seed},
          {"bg_slope_deadband", f.rule_params.bg_slope_deadband},
          {"iob_slope_deadband", f.rule_params.iob_slope_deadband},
          {"action_deadband", f.rule_params.action_deadband}};
}

inline Json to_json(const ModelSpec& m) {
  Json j{{"kind", monitors::to_string(m.kind)}};
  if (!m.is_neural()) return j;
  j["epochs"] = m.epochs;
  j["batch_size"] = m.batch_size;
  j["lr"] = m.lr;
  if (!m.hidden.empty()) j["hidden"] = m.hidden;
  if (m.is_custom()) j["w"] = m.w;
  return j;
}

inline Json perturbations_json(const ExperimentConfig& c) {
  Json p = Json::object();
  if (!c.gaussian.sigma.empty()) p["gaussian"] = {{"sigma", c.gaussian.sigma}, {"seed", c.gaussian.seed}};
  if (!c.fgsm.epsilon.empty()) p["fgsm"] = {{"epsilon", c.fgsm.epsilon}};
  if (!c.blackbox.models.empty()) {
    p["blackbox"] = {{"models", c.blackbox.models},     {"epsilon", c.blackbox.epsilon},
                     {"query_budget", c.blackbox.query_budget}, {"epochs", c.blackbox.epochs},
                     {"batch_size", c.blackbox.batch_size}, {"hidden", c.blackbox.hidden},
                     {"seed", c.blackbox.seed}};
  }
  return p;
}

inline Json to_json(const ExperimentConfig& c) {
  Json models = Json::array();
  for (const auto& m : c.models) models.push_back(to_json(m));
  return {{"output_dir", c.output_dir},
          {"corpus", to_json(c.corpus)},
          {"features", to_json(c.features)},
          {"models", models},
          {"seeds", c.seeds},
          {"perturbations", perturbations_json(c)}};
}

inline ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError("/", e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("/", std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace robustmon::config

#endif  // ROBUSTMON_CONFIG_HPP
