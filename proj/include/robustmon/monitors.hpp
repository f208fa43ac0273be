#ifndef ROBUSTMON_MONITORS_HPP
#define ROBUSTMON_MONITORS_HPP

// Windowed datasets built from simulation traces, and the five monitor
// variants (rule-based, MLP, LSTM and their semantic-loss counterparts).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmon/apsim.hpp"
#include "robustmon/error.hpp"
#include "robustmon/neural/network.hpp"
#include "robustmon/rules.hpp"
#include "robustmon/util.hpp"
#include "robustmon/verdict.hpp"

namespace robustmon::monitors {

using neural::Tensor2;

// ---------------------------------------------------------------------------
// Features

enum Channel : int {
  kBgSensed = 0,
  kIob,
  kBgSlope,
  kIobSlope,
  kInsulinRate,
  kActionU1,
  kActionU2,
  kActionU3,
  kActionU4,
  kChannelCount
};

inline constexpr std::array<const char*, kChannelCount> kChannelNames{
    "bg_sensed", "iob", "bg_slope", "iob_slope", "insulin_rate",
    "action_u1", "action_u2", "action_u3", "action_u4"};

inline int channel_from_name(const std::string& name) {
  for (int c = 0; c < kChannelCount; ++c) {
    if (name == kChannelNames[static_cast<std::size_t>(c)]) return c;
  }
  throw InvalidArgument("unknown channel: " + name);
}

inline std::vector<int> sensor_channels() { return {kBgSensed, kIob, kBgSlope, kIobSlope}; }
inline std::vector<int> all_channels() {
  std::vector<int> out(kChannelCount);
  for (int c = 0; c < kChannelCount; ++c) out[static_cast<std::size_t>(c)] = c;
  return out;
}

/// Per-step raw feature rows for a trace (steps x channels). Slopes are
/// backward differences; the action compares each delivered rate with the
/// previous step's.
inline Tensor2 step_features(const apsim::SimTrace& tr, double action_deadband = 0.05) {
  tr.check_consistent();
  const auto n = static_cast<Eigen::Index>(tr.size());
  Tensor2 f = Tensor2::Zero(n, kChannelCount);
  for (Eigen::Index t = 0; t < n; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const auto prev = t > 0 ? i - 1 : i;
    f(t, kBgSensed) = tr.sensed_bg[i];
    f(t, kIob) = tr.states[i].iob;
    f(t, kBgSlope) = tr.sensed_bg[i] - tr.sensed_bg[prev];
    f(t, kIobSlope) = tr.states[i].iob - tr.states[prev].iob;
    const double rate = tr.commands[i].delivered_rate();
    f(t, kInsulinRate) = rate;
    const auto a = rules::discretize(rate, tr.commands[prev].delivered_rate(), action_deadband);
    f(t, kActionU1 + rules::action_index(a)) = 1.0;
  }
  return f;
}

struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  int channels() const { return static_cast<int>(mean.size()); }

  /// Normalizes flattened windows in place (columns cycle through channels).
  void normalize(Tensor2& x) const {
    const auto c = static_cast<Eigen::Index>(mean.size());
    if (c == 0 || x.cols() % c != 0) throw ShapeError("normalization channel mismatch");
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const auto ch = static_cast<std::size_t>(k % c);
        x(r, k) = (x(r, k) - mean[ch]) / stddev[ch];
      }
    }
  }
  void denormalize(Tensor2& x) const {
    const auto c = static_cast<Eigen::Index>(mean.size());
    if (c == 0 || x.cols() % c != 0) throw ShapeError("normalization channel mismatch");
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index k = 0; k < x.cols(); ++k) {
        const auto ch = static_cast<std::size_t>(k % c);
        x(r, k) = x(r, k) * stddev[ch] + mean[ch];
      }
    }
  }
  /// Normalized encoding of a raw value on channel `ch`.
  double encode(int ch, double raw) const {
    return (raw - mean[static_cast<std::size_t>(ch)]) / stddev[static_cast<std::size_t>(ch)];
  }
  double decode(int ch, double v) const {
    return v * stddev[static_cast<std::size_t>(ch)] + mean[static_cast<std::size_t>(ch)];
  }

  bool operator==(const Normalization&) const = default;
};

/// Per-channel mean and population std over the rows of `steps`; constant
/// channels get std = 1.
inline Normalization fit_normalization(const std::vector<Tensor2>& steps) {
  Normalization n;
  n.mean.assign(kChannelCount, 0.0);
  n.stddev.assign(kChannelCount, 1.0);
  double count = 0.0;
  for (const auto& s : steps) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      for (int c = 0; c < kChannelCount; ++c) n.mean[static_cast<std::size_t>(c)] += s(r, c);
    }
    count += static_cast<double>(s.rows());
  }
  if (count == 0.0) throw InvalidArgument("cannot fit normalization on an empty split");
  for (auto& m : n.mean) m /= count;
  std::vector<double> var(kChannelCount, 0.0);
  for (const auto& s : steps) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      for (int c = 0; c < kChannelCount; ++c) {
        const double d = s(r, c) - n.mean[static_cast<std::size_t>(c)];
        var[static_cast<std::size_t>(c)] += d * d;
      }
    }
  }
  for (int c = 0; c < kChannelCount; ++c) {
    const double sd = std::sqrt(var[static_cast<std::size_t>(c)] / count);
    n.stddev[static_cast<std::size_t>(c)] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Datasets

struct FeatureSpec {
  int window_len = 6;
  int horizon = 6;  // label lookahead T
  double bgt = 120.0;
  rules::RuleParams rule_params;
  Normalization norm;

  int channels() const { return kChannelCount; }
  int input_size() const { return window_len * kChannelCount; }
};

struct SampleSource {
  std::string trace_id;
  long t = 0;       // last step of the window
  int hazard = 0;   // hazard code of the trace at step t
};

/// A set of windows. `x` holds normalized, flattened (step-major) windows.
struct Split {
  Tensor2 x;
  std::vector<int> labels;
  std::vector<int> indicators;
  std::vector<SampleSource> sources;

  std::size_t size() const { return labels.size(); }
  double positive_fraction() const {
    if (labels.empty()) return 0.0;
    std::size_t p = 0;
    for (int y : labels) p += static_cast<std::size_t>(y);
    return static_cast<double>(p) / static_cast<double>(labels.size());
  }
  Split rows(const std::vector<std::size_t>& idx) const {
    Split s;
    s.x.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      s.x.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(idx[k]));
      s.labels.push_back(labels[idx[k]]);
      s.indicators.push_back(indicators[idx[k]]);
      s.sources.push_back(sources[idx[k]]);
    }
    return s;
  }
};

struct Dataset {
  FeatureSpec spec;
  Split train;
  Split val;
  Split test;
};

struct DatasetOptions {
  int window_len = 6;
  int horizon = 6;
  double bgt = 120.0;
  rules::RuleParams rule_params;
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  std::uint64_t split_seed = 1;
  int train_stride = 1;  // keep every k-th training window
};

/// Label of the window ending at `t`: a hazard occurs in (t, t + horizon].
inline int window_label(const apsim::SimTrace& tr, long t, int horizon) {
  for (long k = t + 1; k <= t + horizon; ++k) {
    if (tr.hazard[static_cast<std::size_t>(k)] != apsim::Hazard::none) return 1;
  }
  return 0;
}

/// Raw (un-normalized) windows of one trace with labels and indicators.
inline Split trace_windows(const apsim::SimTrace& tr, const DatasetOptions& opt,
                           const rules::RuleSet& rule_set) {
  const long len = static_cast<long>(tr.size());
  if (len < opt.window_len + opt.horizon) {
    throw InvalidArgument("trace " + tr.id + " is shorter than window_len + T");
  }
  const Tensor2 f = step_features(tr, opt.rule_params.action_deadband);
  const long first = opt.window_len - 1;
  const long last = len - 1 - opt.horizon;
  Split s;
  s.x.resize(last - first + 1, opt.window_len * kChannelCount);
  std::vector<double> bg(static_cast<std::size_t>(opt.window_len));
  std::vector<double> iob(bg.size()), rate(bg.size());
  for (long t = first; t <= last; ++t) {
    const auto row = t - first;
    for (int k = 0; k < opt.window_len; ++k) {
      const auto step = t - opt.window_len + 1 + k;
      s.x.block(row, k * kChannelCount, 1, kChannelCount) = f.row(step);
      bg[static_cast<std::size_t>(k)] = f(step, kBgSensed);
      iob[static_cast<std::size_t>(k)] = f(step, kIob);
      rate[static_cast<std::size_t>(k)] = f(step, kInsulinRate);
    }
    const auto ctx = rules::aggregate_context({bg, iob, rate}, opt.bgt, opt.rule_params.action_deadband);
    s.labels.push_back(window_label(tr, t, opt.horizon));
    s.indicators.push_back(rules::indicator(rule_set, ctx));
    s.sources.push_back({tr.id, t, static_cast<int>(tr.hazard[static_cast<std::size_t>(t)])});
  }
  return s;
}

inline Split concat(const std::vector<Split>& parts, Eigen::Index cols) {
  Split out;
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.x.rows();
  out.x.resize(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.x.rows() > 0) out.x.middleRows(r, p.x.rows()) = p.x;
    r += p.x.rows();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    out.indicators.insert(out.indicators.end(), p.indicators.begin(), p.indicators.end());
    out.sources.insert(out.sources.end(), p.sources.begin(), p.sources.end());
  }
  return out;
}

/// Sliding windows over every trace, split by episode per profile.
inline Dataset build_dataset(const std::vector<apsim::SimTrace>& corpus, const DatasetOptions& opt) {
  if (corpus.empty()) throw InvalidArgument("corpus is empty");
  if (opt.horizon < 1) throw InvalidArgument("T must be >= 1");
  if (opt.window_len < 2) throw InvalidArgument("window_len must be >= 2");
  if (opt.train_stride < 1) throw InvalidArgument("train_stride must be >= 1");
  if (!(opt.train_fraction > 0.0) || opt.val_fraction < 0.0 ||
      opt.train_fraction + opt.val_fraction >= 1.0) {
    throw InvalidArgument("split fractions must leave a nonempty test split");
  }
  const auto rule_set = rules::aps_rules(opt.rule_params);

  // episode -> split assignment, stratified by profile
  std::map<std::string, std::vector<std::size_t>> by_profile;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_profile[corpus[i].profile_id].push_back(i);
  std::vector<int> which(corpus.size(), 2);
  std::uint64_t salt = 0;
  for (auto& [pid, idx] : by_profile) {
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return corpus[a].id < corpus[b].id; });
    std::mt19937_64 rng(derive_seed(opt.split_seed, salt++));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    auto n_train = static_cast<std::size_t>(std::llround(opt.train_fraction * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(opt.val_fraction * static_cast<double>(n)));
    n_train = std::max<std::size_t>(1, std::min(n_train, n));
    n_val = std::min(n_val, n - n_train);
    for (std::size_t k = 0; k < n; ++k) which[idx[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
  }

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return corpus[a].id < corpus[b].id; });

  std::vector<Split> parts[3];
  std::vector<Tensor2> train_steps;
  for (auto i : order) {
    auto w = trace_windows(corpus[i], opt, rule_set);
    if (which[i] == 0) {
      train_steps.push_back(step_features(corpus[i], opt.rule_params.action_deadband));
      if (opt.train_stride > 1) {
        std::vector<std::size_t> keep;
        for (std::size_t k = 0; k < w.size(); k += static_cast<std::size_t>(opt.train_stride)) keep.push_back(k);
        w = w.rows(keep);
      }
    }
    parts[which[i]].push_back(std::move(w));
  }

  Dataset ds;
  ds.spec.window_len = opt.window_len;
  ds.spec.horizon = opt.horizon;
  ds.spec.bgt = opt.bgt;
  ds.spec.rule_params = opt.rule_params;
  if (train_steps.empty()) throw InvalidArgument("training split is empty");
  ds.spec.norm = fit_normalization(train_steps);
  const auto cols = static_cast<Eigen::Index>(opt.window_len * kChannelCount);
  ds.train = concat(parts[0], cols);
  ds.val = concat(parts[1], cols);
  ds.test = concat(parts[2], cols);
  ds.spec.norm.normalize(ds.train.x);
  ds.spec.norm.normalize(ds.val.x);
  ds.spec.norm.normalize(ds.test.x);
  return ds;
}

// ---------------------------------------------------------------------------
// Monitor models

enum class MonitorKind { rule, mlp, lstm, mlp_custom, lstm_custom };

inline const char* to_string(MonitorKind k) {
  switch (k) {
    case MonitorKind::rule: return "rule";
    case MonitorKind::mlp: return "mlp";
    case MonitorKind::lstm: return "lstm";
    case MonitorKind::mlp_custom: return "mlp_custom";
    case MonitorKind::lstm_custom: return "lstm_custom";
  }
  return "?";
}

inline MonitorKind monitor_kind_from_string(const std::string& s) {
  if (s == "rule") return MonitorKind::rule;
  if (s == "mlp") return MonitorKind::mlp;
  if (s == "lstm") return MonitorKind::lstm;
  if (s == "mlp_custom") return MonitorKind::mlp_custom;
  if (s == "lstm_custom") return MonitorKind::lstm_custom;
  throw InvalidArgument("unknown monitor kind: " + s);
}

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.001;
  std::vector<int> mlp_hidden{256, 128};
  std::vector<int> lstm_hidden{128, 64};
  bool class_balance = true;  // inverse-frequency cross-entropy weights
};

struct TrainingHistory {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_semantic;
};

struct MonitorModel {
  std::string id;
  MonitorKind kind = MonitorKind::rule;
  FeatureSpec spec;
  std::optional<neural::Network> network;
  std::optional<neural::SemanticLossConfig> semantic;
  TrainConfig training;
  std::uint64_t seed = 0;
  std::vector<double> class_weights;

  bool supports_gradients() const { return network.has_value(); }
};

inline MonitorModel make_rule_monitor(const FeatureSpec& spec, std::string id = "rule") {
  MonitorModel m;
  m.id = std::move(id);
  m.kind = MonitorKind::rule;
  m.spec = spec;
  return m;
}

/// Probability of the unsafe class for every row of a normalized batch.
inline std::vector<double> predict_proba(const MonitorModel& m, const Tensor2& x) {
  if (x.cols() != m.spec.input_size()) {
    throw ShapeError("batch has " + std::to_string(x.cols()) + " features, monitor expects " +
                     std::to_string(m.spec.input_size()));
  }
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  if (m.kind == MonitorKind::rule) {
    const auto rs = rules::aps_rules(m.spec.rule_params);
    Tensor2 raw = x;
    m.spec.norm.denormalize(raw);
    const auto L = static_cast<std::size_t>(m.spec.window_len);
    std::vector<double> bg(L), iob(L), rate(L);
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
      for (std::size_t k = 0; k < L; ++k) {
        const auto base = static_cast<Eigen::Index>(k) * kChannelCount;
        bg[k] = raw(r, base + kBgSensed);
        iob[k] = raw(r, base + kIob);
        rate[k] = std::max(0.0, raw(r, base + kInsulinRate));
      }
      out[static_cast<std::size_t>(r)] = rules::rule_monitor(rs, {bg, iob, rate}, m.spec.bgt).p_unsafe;
    }
    return out;
  }
  if (!m.network) throw InvalidArgument("monitor " + m.id + " has no trained network");
  constexpr Eigen::Index chunk = 1024;
  for (Eigen::Index r = 0; r < x.rows(); r += chunk) {
    const auto n = std::min(chunk, x.rows() - r);
    const Tensor2 p = m.network->forward(x.middleRows(r, n));
    for (Eigen::Index k = 0; k < n; ++k) out[static_cast<std::size_t>(r + k)] = p(k, 1);
  }
  return out;
}

inline std::vector<MonitorVerdict> predict_batch(const MonitorModel& m, const Tensor2& x) {
  std::vector<MonitorVerdict> out;
  for (double p : predict_proba(m, x)) out.push_back(MonitorVerdict::from_probability(p));
  return out;
}

inline MonitorVerdict predict(const MonitorModel& m, std::span<const double> sample) {
  Tensor2 x(1, static_cast<Eigen::Index>(sample.size()));
  std::copy(sample.begin(), sample.end(), x.data());
  return predict_batch(m, x).front();
}

inline std::vector<int> predicted_classes(const MonitorModel& m, const Tensor2& x) {
  std::vector<int> out;
  for (const auto& v : predict_batch(m, x)) out.push_back(v.unsafe() ? 1 : 0);
  return out;
}

/// Query-only view of a monitor: returns predicted classes.
using PredictFn = std::function<std::vector<int>(const Tensor2&)>;

inline PredictFn query_interface(const MonitorModel& m) {
  return [&m](const Tensor2& x) { return predicted_classes(m, x); };
}

inline std::vector<double> inverse_frequency_weights(const std::vector<int>& labels) {
  double pos = 0.0;
  for (int y : labels) pos += y;
  const double n = static_cast<double>(labels.size());
  const double neg = n - pos;
  if (pos == 0.0 || neg == 0.0) return {1.0, 1.0};
  return {n / (2.0 * neg), n / (2.0 * pos)};
}

/// Trains a neural monitor from scratch. Deterministic in `seed`.
inline MonitorModel train_network(neural::NetKind kind, const FeatureSpec& spec, const Split& train,
                                  const std::optional<neural::SemanticLossConfig>& semantic,
                                  std::uint64_t seed, const TrainConfig& cfg,
                                  TrainingHistory* history = nullptr,
                                  const std::vector<int>* label_override = nullptr) {
  if (train.size() == 0) throw InvalidArgument("training split is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw InvalidArgument("epochs and batch_size must be >= 1");
  if (semantic) semantic->validate();
  const auto& labels = label_override ? *label_override : train.labels;
  if (labels.size() != train.size()) throw ShapeError("label override size mismatch");

  MonitorModel m;
  m.spec = spec;
  m.seed = seed;
  m.training = cfg;
  m.semantic = semantic;
  if (kind == neural::NetKind::mlp) {
    m.kind = semantic ? MonitorKind::mlp_custom : MonitorKind::mlp;
    m.network.emplace(neural::mlp_architecture(spec.window_len, kChannelCount, cfg.mlp_hidden));
  } else {
    m.kind = semantic ? MonitorKind::lstm_custom : MonitorKind::lstm;
    m.network.emplace(neural::lstm_architecture(spec.window_len, kChannelCount, cfg.lstm_hidden));
  }
  m.id = to_string(m.kind);
  m.network->init(derive_seed(seed, 0x1a1));
  m.class_weights = cfg.class_balance ? inverse_frequency_weights(labels) : std::vector<double>{1.0, 1.0};

  neural::LossOptions loss_opt;
  loss_opt.semantic = semantic;
  loss_opt.class_weights = m.class_weights;
  neural::AdamState adam;
  adam.lr = cfg.lr;

  std::mt19937_64 rng(derive_seed(seed, 0x5eed));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  Tensor2 xb;
  std::vector<int> yb, ib;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, sem_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const auto n = std::min(bs, order.size() - start);
      xb.resize(static_cast<Eigen::Index>(n), train.x.cols());
      yb.resize(n);
      ib.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto i = order[start + k];
        xb.row(static_cast<Eigen::Index>(k)) = train.x.row(static_cast<Eigen::Index>(i));
        yb[k] = labels[i];
        ib[k] = train.indicators[i];
      }
      neural::Gradients g;
      try {
        g = m.network->loss_and_grads(xb, yb, ib, loss_opt);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " during training at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      neural::adam_step(m.network->params(), g.params, adam);
      loss_sum += g.value.loss;
      sem_sum += g.value.semantic;
      ++batches;
    }
    if (history) {
      history->epoch_loss.push_back(loss_sum / static_cast<double>(batches));
      history->epoch_semantic.push_back(sem_sum / static_cast<double>(batches));
    }
  }
  return m;
}

inline MonitorModel train_monitor(MonitorKind kind, const Dataset& ds, std::uint64_t seed,
                                  const TrainConfig& cfg, double semantic_weight = 0.5,
                                  TrainingHistory* history = nullptr) {
  switch (kind) {
    case MonitorKind::rule: return make_rule_monitor(ds.spec);
    case MonitorKind::mlp: return train_network(neural::NetKind::mlp, ds.spec, ds.train, std::nullopt, seed, cfg, history);
    case MonitorKind::lstm: return train_network(neural::NetKind::lstm, ds.spec, ds.train, std::nullopt, seed, cfg, history);
    case MonitorKind::mlp_custom:
      return train_network(neural::NetKind::mlp, ds.spec, ds.train,
                           neural::SemanticLossConfig{semantic_weight, 1}, seed, cfg, history);
    case MonitorKind::lstm_custom:
      return train_network(neural::NetKind::lstm, ds.spec, ds.train,
                           neural::SemanticLossConfig{semantic_weight, 1}, seed, cfg, history);
  }
  throw InvalidArgument("unknown monitor kind");
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json to_json(const Normalization& n) {
  std::vector<std::string> names(kChannelNames.begin(), kChannelNames.end());
  return {{"channels", names}, {"mean", n.mean}, {"std", n.stddev}};
}

inline Normalization normalization_from_json(const nlohmann::json& j) {
  Normalization n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.stddev = j.at("std").get<std::vector<double>>();
  if (n.mean.size() != kChannelCount || n.stddev.size() != kChannelCount) {
    throw ShapeError("normalization must list one entry per channel");
  }
  return n;
}

inline nlohmann::json to_json(const FeatureSpec& s) {
  return {{"window_len", s.window_len},
          {"horizon", s.horizon},
          {"bgt", s.bgt},
          {"rule_params",
           {{"bg_slope_deadband", s.rule_params.bg_slope_deadband},
            {"iob_slope_deadband", s.rule_params.iob_slope_deadband},
            {"action_deadband", s.rule_params.action_deadband}}},
          {"normalization", to_json(s.norm)}};
}

inline FeatureSpec feature_spec_from_json(const nlohmann::json& j) {
  FeatureSpec s;
  s.window_len = j.at("window_len").get<int>();
  s.horizon = j.at("horizon").get<int>();
  s.bgt = j.at("bgt").get<double>();
  const auto& rp = j.at("rule_params");
  s.rule_params.bg_slope_deadband = rp.at("bg_slope_deadband").get<double>();
  s.rule_params.iob_slope_deadband = rp.at("iob_slope_deadband").get<double>();
  s.rule_params.action_deadband = rp.at("action_deadband").get<double>();
  s.norm = normalization_from_json(j.at("normalization"));
  return s;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size},   {"lr", c.lr},
          {"mlp_hidden", c.mlp_hidden}, {"lstm_hidden", c.lstm_hidden}, {"class_balance", c.class_balance}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::vector<int>>();
  c.class_balance = j.at("class_balance").get<bool>();
  return c;
}

/// Checkpoint: architecture, flat parameters, normalization, training config, seed.
inline nlohmann::json checkpoint_json(const MonitorModel& m) {
  nlohmann::json j{{"format", "robustmon-checkpoint/1"},
                   {"id", m.id},
                   {"kind", to_string(m.kind)},
                   {"features", to_json(m.spec)},
                   {"seed", m.seed},
                   {"training", to_json(m.training)},
                   {"class_weights", m.class_weights}};
  j["semantic"] = m.semantic ? nlohmann::json{{"w", m.semantic->w},
                                              {"unsafe_class_index", m.semantic->unsafe_class_index}}
                             : nlohmann::json(nullptr);
  j["network"] = m.network ? m.network->to_json() : nlohmann::json(nullptr);
  return j;
}

inline MonitorModel monitor_from_checkpoint(const nlohmann::json& j) {
  if (j.at("format") != "robustmon-checkpoint/1") throw InvalidArgument("unsupported checkpoint format");
  MonitorModel m;
  m.id = j.at("id").get<std::string>();
  m.kind = monitor_kind_from_string(j.at("kind").get<std::string>());
  m.spec = feature_spec_from_json(j.at("features"));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.training = train_config_from_json(j.at("training"));
  m.class_weights = j.at("class_weights").get<std::vector<double>>();
  if (!j.at("semantic").is_null()) {
    m.semantic = neural::SemanticLossConfig{j["semantic"].at("w").get<double>(),
                                            j["semantic"].at("unsafe_class_index").get<int>()};
  }
  if (!j.at("network").is_null()) m.network = neural::Network::from_json(j.at("network"));
  if (m.kind != MonitorKind::rule && !m.network) throw InvalidArgument("checkpoint lacks network parameters");
  return m;
}

/// Extra per-row columns appended to a split CSV (e.g. perturbation metadata).
struct ExtraColumns {
  std::vector<std::string> names;
  std::vector<std::string> values;  // same value on every row
};

inline std::string split_to_csv(const Split& s, const ExtraColumns& extra = {}) {
  std::string out = "trace_id,t,hazard,label,indicator";
  for (Eigen::Index k = 0; k < s.x.cols(); ++k) {
    out += ",f" + std::to_string(k);
  }
  for (const auto& n : extra.names) out += "," + n;
  out += '\n';
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& src = s.sources[i];
    out += src.trace_id + ',' + std::to_string(src.t) + ',' + std::to_string(src.hazard) + ',' +
           std::to_string(s.labels[i]) + ',' + std::to_string(s.indicators[i]);
    for (Eigen::Index k = 0; k < s.x.cols(); ++k) {
      out += ',';
      out += format_double(s.x(static_cast<Eigen::Index>(i), k));
    }
    for (const auto& v : extra.values) out += "," + v;
    out += '\n';
  }
  return out;
}

inline Split split_from_csv(const std::string& text, int n_features) {
  Split s;
  std::vector<double> values;
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos) throw InvalidArgument("dataset CSV has no header");
  const auto header = split(std::string_view(text).substr(0, pos));
  if (header.size() < static_cast<std::size_t>(5 + n_features) || header[0] != "trace_id") {
    throw InvalidArgument("dataset CSV header mismatch");
  }
  std::size_t start = pos + 1;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw InvalidArgument("dataset CSV row has wrong column count");
    s.sources.push_back({std::string(f[0]), parse_long(f[1]), static_cast<int>(parse_long(f[2]))});
    s.labels.push_back(static_cast<int>(parse_long(f[3])));
    s.indicators.push_back(static_cast<int>(parse_long(f[4])));
    for (int k = 0; k < n_features; ++k) values.push_back(parse_double(f[static_cast<std::size_t>(5 + k)]));
  }
  s.x.resize(static_cast<Eigen::Index>(s.labels.size()), n_features);
  if (!values.empty()) std::copy(values.begin(), values.end(), s.x.data());
  return s;
}

}  // namespace robustmon::monitors

#endif  // ROBUSTMON_MONITORS_HPP
