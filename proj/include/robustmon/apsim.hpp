#ifndef ROBUSTMON_APSIM_HPP
#define ROBUSTMON_APSIM_HPP

// Closed-loop glucose-insulin simulation: a Bergman-style minimal patient
// model, a basal-bolus controller, fault injection and hazard labeling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmon/error.hpp"
#include "robustmon/util.hpp"

namespace robustmon::apsim {

inline constexpr double kStepMinutes = 5.0;

struct DynamicsParams {
  double glucose_decay = 0.002;          // p1, 1/min
  double remote_insulin_decay = 0.025;   // p2, 1/min
  double insulin_action_gain = 0.0;      // p3, 1/min^2 per U
  double insulin_clearance = 0.12;       // n, 1/min
  double carb_absorption = 0.015;        // gut emptying rate, 1/min
};

struct PatientProfile {
  std::string id;
  double basal_glucose = 120.0;        // mg/dL
  double basal_insulin = 1.0;          // U/h
  double insulin_sensitivity = 40.0;   // (mg/dL)/U
  double carb_ratio = 10.0;            // g/U
  DynamicsParams dynamics;
  double iob_decay = 0.0115525;        // 1/min (60 min half-life)

  /// Plasma insulin at the basal steady state.
  double basal_plasma_insulin() const {
    return basal_insulin / 60.0 / dynamics.insulin_clearance;
  }
  /// Insulin on board at the basal steady state.
  double basal_iob() const {
    return basal_insulin * kStepMinutes / 60.0 / (1.0 - std::exp(-iob_decay * kStepMinutes));
  }
  /// BG rise per gram of absorbed carbohydrate.
  double carb_glucose_gain() const { return insulin_sensitivity / carb_ratio; }

  void validate() const {
    auto positive = [&](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw InvalidArgument("profile " + id + ": " + name + " must be > 0");
      }
    };
    positive(dynamics.glucose_decay, "glucose_decay");
    positive(dynamics.remote_insulin_decay, "remote_insulin_decay");
    positive(dynamics.insulin_action_gain, "insulin_action_gain");
    positive(dynamics.insulin_clearance, "insulin_clearance");
    positive(dynamics.carb_absorption, "carb_absorption");
    positive(iob_decay, "iob_decay");
    positive(basal_insulin, "basal_insulin");
    positive(insulin_sensitivity, "insulin_sensitivity");
    positive(carb_ratio, "carb_ratio");
    if (!(basal_glucose >= 80.0 && basal_glucose <= 160.0)) {
      throw InvalidArgument("profile " + id + ": basal_glucose outside [80, 160]");
    }
  }
};

/// Builds a profile whose insulin-action gain matches the stated sensitivity
/// around the basal glucose.
inline PatientProfile make_profile(std::string id, double basal_glucose, double basal_insulin,
                                   double insulin_sensitivity, double carb_ratio,
                                   DynamicsParams dyn = {}) {
  PatientProfile p;
  p.id = std::move(id);
  p.basal_glucose = basal_glucose;
  p.basal_insulin = basal_insulin;
  p.insulin_sensitivity = insulin_sensitivity;
  p.carb_ratio = carb_ratio;
  dyn.insulin_action_gain = insulin_sensitivity / basal_glucose * dyn.insulin_clearance *
                            dyn.remote_insulin_decay;
  p.dynamics = dyn;
  p.validate();
  return p;
}

inline std::vector<PatientProfile> reference_profiles() {
  return {
      make_profile("adult-1", 110.0, 0.8, 45.0, 12.0),
      make_profile("adult-2", 120.0, 1.0, 40.0, 10.0),
      make_profile("adult-3", 130.0, 1.2, 35.0, 9.0),
      make_profile("adult-4", 115.0, 0.9, 50.0, 11.0),
  };
}

struct SimState {
  long t = 0;
  double bg = 0.0;                     // mg/dL
  double remote_insulin_action = 0.0;  // 1/min
  double plasma_insulin = 0.0;         // U
  double iob = 0.0;                    // U
  double carbs_active = 0.0;           // g
};

inline SimState fixed_point_state(const PatientProfile& p) {
  return SimState{0, p.basal_glucose, 0.0, p.basal_plasma_insulin(), p.basal_iob(), 0.0};
}

struct ControlCommand {
  double insulin_rate = 0.0;  // U/h
  double bolus = 0.0;         // U

  double delivered_units() const { return insulin_rate * kStepMinutes / 60.0 + bolus; }
  /// Rate-equivalent of everything delivered during one step, bolus included.
  double delivered_rate() const { return insulin_rate + bolus * 60.0 / kStepMinutes; }
};

enum class FaultKind { sensor_bias, sensor_freeze, command_overwrite, command_scale };

inline const char* to_string(FaultKind k) {
  switch (k) {
    case FaultKind::sensor_bias: return "sensor_bias";
    case FaultKind::sensor_freeze: return "sensor_freeze";
    case FaultKind::command_overwrite: return "command_overwrite";
    case FaultKind::command_scale: return "command_scale";
  }
  return "?";
}

inline FaultKind fault_kind_from_string(const std::string& s) {
  if (s == "sensor_bias") return FaultKind::sensor_bias;
  if (s == "sensor_freeze") return FaultKind::sensor_freeze;
  if (s == "command_overwrite") return FaultKind::command_overwrite;
  if (s == "command_scale") return FaultKind::command_scale;
  throw InvalidArgument("unknown fault kind: " + s);
}

struct FaultSpec {
  FaultKind kind = FaultKind::sensor_bias;
  long start = 0;
  long duration = 1;
  double magnitude = 0.0;

  bool active(long t) const { return t >= start && t < start + duration; }
  void validate() const {
    if (duration < 1) throw InvalidArgument("fault duration must be >= 1");
    if (start < 0) throw InvalidArgument("fault start must be >= 0");
  }
};

enum class Hazard : std::uint8_t { none = 0, H1 = 1, H2 = 2 };

struct SimOptions {
  double bgt = 120.0;
  double hypo_threshold = 70.0;
  double hyper_threshold = 180.0;
  double sensor_noise_sd = 0.0;  // mg/dL
};

inline Hazard hazard_of(double bg_true, const SimOptions& opt = {}) {
  if (bg_true < opt.hypo_threshold) return Hazard::H1;
  if (bg_true > opt.hyper_threshold) return Hazard::H2;
  return Hazard::none;
}

struct Meal {
  long step = 0;
  double carbs = 0.0;      // g ingested
  double announced = 0.0;  // g reported to the controller
};

struct SimTrace {
  std::string id;
  std::string profile_id;
  std::vector<SimState> states;
  std::vector<double> sensed_bg;
  std::vector<ControlCommand> commands;
  std::vector<double> meal_carbs;
  std::vector<std::uint8_t> fault_active;
  std::vector<Hazard> hazard;

  std::size_t size() const { return states.size(); }

  void check_consistent() const {
    const auto n = states.size();
    if (sensed_bg.size() != n || commands.size() != n || meal_carbs.size() != n ||
        fault_active.size() != n || hazard.size() != n) {
      throw ShapeError("trace " + id + ": per-step arrays differ in length");
    }
  }
};

/// Recomputes hazard labels from the true BG series.
inline std::vector<Hazard> label_hazards(const SimTrace& tr, const SimOptions& opt = {}) {
  std::vector<Hazard> out;
  out.reserve(tr.size());
  for (const auto& s : tr.states) out.push_back(hazard_of(s.bg, opt));
  return out;
}

/// One explicit-Euler step of 5 minutes.
inline SimState step_patient(const SimState& s, const PatientProfile& p, const ControlCommand& cmd,
                             double meal_carbs) {
  if (meal_carbs < 0.0 || !std::isfinite(meal_carbs)) {
    throw InvalidArgument("meal_carbs must be finite and >= 0");
  }
  if (cmd.insulin_rate < 0.0 || cmd.bolus < 0.0) {
    throw InvalidArgument("insulin command must be >= 0");
  }
  const auto& d = p.dynamics;
  const double dt = kStepMinutes;
  const double gut = s.carbs_active + meal_carbs;
  const double appearance = d.carb_absorption * gut * p.carb_glucose_gain();

  SimState n;
  n.t = s.t + 1;
  n.bg = s.bg + dt * (-(d.glucose_decay + s.remote_insulin_action) * s.bg +
                      d.glucose_decay * p.basal_glucose + appearance);
  n.remote_insulin_action =
      s.remote_insulin_action +
      dt * (-d.remote_insulin_decay * s.remote_insulin_action +
            d.insulin_action_gain * (s.plasma_insulin - p.basal_plasma_insulin()));
  n.plasma_insulin =
      s.plasma_insulin - dt * d.insulin_clearance * s.plasma_insulin + cmd.delivered_units();
  n.iob = s.iob * std::exp(-p.iob_decay * dt) + cmd.delivered_units();
  n.carbs_active = gut - dt * d.carb_absorption * gut;

  if (!std::isfinite(n.bg) || !std::isfinite(n.remote_insulin_action) ||
      !std::isfinite(n.plasma_insulin) || !std::isfinite(n.iob) ||
      !std::isfinite(n.carbs_active)) {
    throw DivergenceError("patient dynamics diverged", s.t);
  }
  n.bg = std::clamp(n.bg, 1.0, 1000.0);
  n.plasma_insulin = std::max(n.plasma_insulin, 0.0);
  n.carbs_active = std::max(n.carbs_active, 0.0);
  return n;
}

/// Basal-bolus law: basal rate always, IOB-subtracted correction above
/// target, carb-ratio meal bolus.
inline ControlCommand controller_step(double sensed_bg, double iob, double announced_carbs,
                                      const PatientProfile& p, double bgt = 120.0) {
  ControlCommand c;
  c.insulin_rate = p.basal_insulin;
  if (sensed_bg > bgt) {
    c.bolus += std::max(0.0, (sensed_bg - bgt) / p.insulin_sensitivity - iob);
  }
  c.bolus += std::max(0.0, announced_carbs) / p.carb_ratio;
  return c;
}

inline SimTrace run_episode(const PatientProfile& profile, long horizon,
                            const std::vector<Meal>& meals,
                            const std::optional<FaultSpec>& fault, std::uint64_t seed,
                            const SimOptions& opt = {}, std::string trace_id = {}) {
  if (horizon < 1) throw InvalidArgument("horizon must be >= 1");
  profile.validate();
  if (fault) fault->validate();

  std::vector<double> meal_at(static_cast<std::size_t>(horizon), 0.0);
  std::vector<double> announced_at(static_cast<std::size_t>(horizon), 0.0);
  for (const auto& m : meals) {
    if (m.step < 0 || m.step >= horizon) continue;
    meal_at[static_cast<std::size_t>(m.step)] += m.carbs;
    announced_at[static_cast<std::size_t>(m.step)] += m.announced;
  }

  SimTrace tr;
  tr.id = trace_id.empty() ? profile.id : std::move(trace_id);
  tr.profile_id = profile.id;
  const auto n = static_cast<std::size_t>(horizon);
  tr.states.reserve(n);
  tr.sensed_bg.reserve(n);
  tr.commands.reserve(n);
  tr.meal_carbs.reserve(n);
  tr.fault_active.reserve(n);
  tr.hazard.reserve(n);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  double frozen_reading = 0.0;

  SimState s = fixed_point_state(profile);
  for (long t = 0; t < horizon; ++t) {
    double sensed = s.bg;
    if (opt.sensor_noise_sd > 0.0) sensed += opt.sensor_noise_sd * noise(rng);
    const bool faulted = fault && fault->active(t);
    if (fault && t == fault->start) frozen_reading = sensed;
    if (faulted) {
      if (fault->kind == FaultKind::sensor_bias) sensed += fault->magnitude;
      if (fault->kind == FaultKind::sensor_freeze) sensed = frozen_reading;
    }
    sensed = std::clamp(sensed, 1.0, 1000.0);

    const auto i = static_cast<std::size_t>(t);
    ControlCommand cmd = controller_step(sensed, s.iob, announced_at[i], profile, opt.bgt);
    if (faulted) {
      if (fault->kind == FaultKind::command_overwrite) {
        cmd.insulin_rate = std::max(0.0, fault->magnitude);
        cmd.bolus = 0.0;
      }
      if (fault->kind == FaultKind::command_scale) {
        cmd.insulin_rate *= std::max(0.0, fault->magnitude);
        cmd.bolus *= std::max(0.0, fault->magnitude);
      }
    }

    tr.states.push_back(s);
    tr.sensed_bg.push_back(sensed);
    tr.commands.push_back(cmd);
    tr.meal_carbs.push_back(meal_at[i]);
    tr.fault_active.push_back(faulted ? 1 : 0);
    tr.hazard.push_back(hazard_of(s.bg, opt));

    s = step_patient(s, profile, cmd, meal_at[i]);
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Corpus generation

struct MealPlan {
  std::vector<long> base_steps{84, 144, 216};
  long jitter = 12;
  double carbs_min = 30.0;
  double carbs_max = 60.0;
  double announce_error = 0.15;  // relative, uniform
};

struct FaultCampaign {
  /// Fraction per kind; the key "none" is the fault-free share.
  std::map<std::string, double> mix{{"none", 1.0}};
  long start_min = 40;
  long start_max = 160;
  long duration_min = 48;
  long duration_max = 120;
  std::map<std::string, std::pair<double, double>> magnitude{
      {"sensor_bias", {150.0, 300.0}},
      {"sensor_freeze", {0.0, 0.0}},
      {"command_overwrite", {0.0, 0.0}},
      {"command_scale", {2.5, 4.0}},
  };

  void validate() const {
    if (mix.empty()) throw InvalidArgument("fault_mix is empty");
    double sum = 0.0;
    for (const auto& [k, v] : mix) {
      if (k != "none") fault_kind_from_string(k);
      if (!(v >= 0.0)) throw InvalidArgument("fault_mix fraction for " + k + " is negative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("fault_mix fractions must sum to 1");
    if (start_min < 0 || start_max < start_min) throw InvalidArgument("bad fault start range");
    if (duration_min < 1 || duration_max < duration_min) {
      throw InvalidArgument("bad fault duration range");
    }
  }
};

struct CorpusConfig {
  std::vector<PatientProfile> profiles;
  int episodes_per_profile = 1;
  long horizon = 288;
  MealPlan meals;
  FaultCampaign faults;
  SimOptions sim;
  std::uint64_t seed = 1;
};

struct CorpusMetadata {
  std::uint64_t seed = 0;
  std::vector<std::string> profile_ids;
  std::map<std::string, double> fault_mix;
  int episodes_per_profile = 0;
  long horizon = 0;
  std::size_t n_traces = 0;
  std::size_t n_steps = 0;
  double unsafe_fraction = 0.0;
};

struct Corpus {
  std::vector<SimTrace> traces;
  CorpusMetadata meta;
};

inline std::string episode_id(const std::string& profile_id, int episode) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", episode);
  return profile_id + "-e" + buf;
}

/// Fraction of steps carrying a hazard label.
inline double unsafe_fraction(const std::vector<SimTrace>& traces) {
  std::size_t total = 0, unsafe = 0;
  for (const auto& tr : traces) {
    total += tr.size();
    for (auto h : tr.hazard) unsafe += (h != Hazard::none) ? 1 : 0;
  }
  return total == 0 ? 0.0 : static_cast<double>(unsafe) / static_cast<double>(total);
}

inline Corpus generate_corpus(const CorpusConfig& cfg) {
  if (cfg.profiles.empty()) throw InvalidArgument("profile list is empty");
  if (cfg.episodes_per_profile < 1) throw InvalidArgument("episodes_per_profile must be >= 1");
  cfg.faults.validate();

  Corpus corpus;
  for (std::size_t pi = 0; pi < cfg.profiles.size(); ++pi) {
    const auto& profile = cfg.profiles[pi];
    for (int e = 0; e < cfg.episodes_per_profile; ++e) {
      std::mt19937_64 rng(derive_seed(cfg.seed, pi, static_cast<std::uint64_t>(e)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
      auto uniform_int = [&](long lo, long hi) {
        return lo + static_cast<long>(std::floor(unit(rng) * static_cast<double>(hi - lo + 1)));
      };

      std::vector<Meal> meals;
      for (long base : cfg.meals.base_steps) {
        Meal m;
        m.step = base + uniform_int(-cfg.meals.jitter, cfg.meals.jitter);
        m.carbs = uniform(cfg.meals.carbs_min, cfg.meals.carbs_max);
        m.announced =
            m.carbs * uniform(1.0 - cfg.meals.announce_error, 1.0 + cfg.meals.announce_error);
        meals.push_back(m);
      }

      std::optional<FaultSpec> fault;
      const double draw = unit(rng);
      double acc = 0.0;
      std::string kind = "none";
      for (const auto& [k, frac] : cfg.faults.mix) {
        acc += frac;
        if (draw < acc) {
          kind = k;
          break;
        }
      }
      if (kind != "none") {
        FaultSpec f;
        f.kind = fault_kind_from_string(kind);
        f.start = uniform_int(cfg.faults.start_min, cfg.faults.start_max);
        f.duration = uniform_int(cfg.faults.duration_min, cfg.faults.duration_max);
        auto it = cfg.faults.magnitude.find(kind);
        f.magnitude = it == cfg.faults.magnitude.end()
                          ? 0.0
                          : uniform(it->second.first, it->second.second);
        fault = f;
      }
      const std::uint64_t noise_seed = rng();
      corpus.traces.push_back(run_episode(profile, cfg.horizon, meals, fault, noise_seed,
                                          cfg.sim, episode_id(profile.id, e)));
    }
  }
  std::sort(corpus.traces.begin(), corpus.traces.end(),
            [](const SimTrace& a, const SimTrace& b) { return a.id < b.id; });

  auto& m = corpus.meta;
  m.seed = cfg.seed;
  for (const auto& p : cfg.profiles) m.profile_ids.push_back(p.id);
  m.fault_mix = cfg.faults.mix;
  m.episodes_per_profile = cfg.episodes_per_profile;
  m.horizon = cfg.horizon;
  m.n_traces = corpus.traces.size();
  for (const auto& tr : corpus.traces) m.n_steps += tr.size();
  m.unsafe_fraction = unsafe_fraction(corpus.traces);
  return corpus;
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr const char* kTraceCsvHeader =
    "t,bg_true,bg_sensed,iob,insulin_rate,bolus,carbs,fault_active,hazard";

inline std::string trace_to_csv(const SimTrace& tr) {
  tr.check_consistent();
  std::string out = kTraceCsvHeader;
  out += '\n';
  for (std::size_t i = 0; i < tr.size(); ++i) {
    out += std::to_string(tr.states[i].t);
    out += ',' + format_double(tr.states[i].bg);
    out += ',' + format_double(tr.sensed_bg[i]);
    out += ',' + format_double(tr.states[i].iob);
    out += ',' + format_double(tr.commands[i].insulin_rate);
    out += ',' + format_double(tr.commands[i].bolus);
    out += ',' + format_double(tr.meal_carbs[i]);
    out += ',' + std::to_string(static_cast<int>(tr.fault_active[i]));
    out += ',' + std::to_string(static_cast<int>(tr.hazard[i]));
    out += '\n';
  }
  return out;
}

/// Parses a trace CSV. Only the persisted fields of SimState (t, bg, iob) are restored.
inline SimTrace trace_from_csv(const std::string& text, std::string id = {},
                               std::string profile_id = {}) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTraceCsvHeader) {
    throw InvalidArgument("trace CSV header mismatch");
  }
  SimTrace tr;
  tr.id = std::move(id);
  tr.profile_id = std::move(profile_id);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != 9) throw InvalidArgument("trace CSV row has wrong column count");
    SimState s;
    s.t = parse_long(f[0]);
    s.bg = parse_double(f[1]);
    s.iob = parse_double(f[3]);
    tr.states.push_back(s);
    tr.sensed_bg.push_back(parse_double(f[2]));
    tr.commands.push_back({parse_double(f[4]), parse_double(f[5])});
    tr.meal_carbs.push_back(parse_double(f[6]));
    tr.fault_active.push_back(static_cast<std::uint8_t>(parse_long(f[7])));
    const long h = parse_long(f[8]);
    if (h < 0 || h > 2) throw InvalidArgument("hazard code out of range");
    tr.hazard.push_back(static_cast<Hazard>(h));
  }
  return tr;
}

inline nlohmann::json to_json(const CorpusMetadata& m) {
  return nlohmann::json{{"seed", m.seed},
                        {"profiles", m.profile_ids},
                        {"fault_mix", m.fault_mix},
                        {"episodes_per_profile", m.episodes_per_profile},
                        {"horizon", m.horizon},
                        {"n_traces", m.n_traces},
                        {"n_steps", m.n_steps},
                        {"unsafe_fraction", m.unsafe_fraction}};
}

inline CorpusMetadata corpus_metadata_from_json(const nlohmann::json& j) {
  CorpusMetadata m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.profile_ids = j.at("profiles").get<std::vector<std::string>>();
  m.fault_mix = j.at("fault_mix").get<std::map<std::string, double>>();
  m.episodes_per_profile = j.at("episodes_per_profile").get<int>();
  m.horizon = j.at("horizon").get<long>();
  m.n_traces = j.at("n_traces").get<std::size_t>();
  m.n_steps = j.at("n_steps").get<std::size_t>();
  m.unsafe_fraction = j.at("unsafe_fraction").get<double>();
  return m;
}

}  // namespace robustmon::apsim

#endif  // ROBUSTMON_APSIM_HPP
