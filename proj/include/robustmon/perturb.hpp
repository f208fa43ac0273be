#ifndef ROBUSTMON_PERTURB_HPP
#define ROBUSTMON_PERTURB_HPP

// Gaussian sensor noise, white-box FGSM and black-box (substitute-model)
// FGSM. Everything operates on normalized, flattened windows.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "robustmon/error.hpp"
#include "robustmon/monitors.hpp"
#include "robustmon/util.hpp"

namespace robustmon::perturb {

using monitors::Split;
using neural::Tensor2;

/// Column mask over a flattened window for the given channels.
inline std::vector<bool> channel_mask(const std::vector<int>& channels, int window_len) {
  std::vector<bool> per_channel(monitors::kChannelCount, false);
  for (int c : channels) {
    if (c < 0 || c >= monitors::kChannelCount) throw InvalidArgument("channel index out of range");
    per_channel[static_cast<std::size_t>(c)] = true;
  }
  std::vector<bool> mask;
  for (int k = 0; k < window_len; ++k) mask.insert(mask.end(), per_channel.begin(), per_channel.end());
  return mask;
}

inline std::vector<int> channels_from_names(const std::vector<std::string>& names) {
  std::vector<int> out;
  for (const auto& n : names) out.push_back(monitors::channel_from_name(n));
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian noise

struct GaussianSpec {
  double sigma_scale = 0.1;  // multiple of the per-channel training std
  std::vector<int> target_channels = monitors::sensor_channels();
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma_scale > 0.0) || !std::isfinite(sigma_scale)) throw InvalidArgument("sigma_scale must be > 0");
    for (int c : target_channels) {
      if (c >= monitors::kActionU1) throw InvalidArgument("Gaussian noise applies to sensor channels only");
    }
  }
};

/// Adds zero-mean noise with sd = sigma_scale (normalized units) to every
/// target column. Other columns are left untouched.
inline Tensor2 gaussian_perturb(const Tensor2& x, const GaussianSpec& spec, int window_len) {
  spec.validate();
  if (x.cols() != window_len * monitors::kChannelCount) throw ShapeError("batch width does not match window");
  const auto mask = channel_mask(spec.target_channels, window_len);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.sigma_scale);
  Tensor2 out = x;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index k = 0; k < out.cols(); ++k) {
      if (mask[static_cast<std::size_t>(k)]) out(r, k) += noise(rng);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FGSM

struct FgsmSpec {
  double epsilon = 0.1;
  std::vector<int> target_channels = monitors::all_channels();

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("epsilon must be > 0");
  }
};

struct FgsmResult {
  Tensor2 perturbed;
  Tensor2 delta;
};

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Gradient of the plain cross-entropy at the true labels with respect to
/// the input.
inline Tensor2 input_gradient(const monitors::MonitorModel& m, const Tensor2& x, const std::vector<int>& labels) {
  if (!m.supports_gradients()) {
    throw UnsupportedError("monitor " + m.id + " does not expose input gradients");
  }
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw ShapeError("labels do not match batch");
  Tensor2 grad(x.rows(), x.cols());
  const std::vector<int> no_indicators(labels.size(), 0);
  constexpr Eigen::Index chunk = 512;
  for (Eigen::Index r = 0; r < x.rows(); r += chunk) {
    const auto n = std::min(chunk, x.rows() - r);
    const Tensor2 xb = x.middleRows(r, n);
    const std::span<const int> yb(labels.data() + r, static_cast<std::size_t>(n));
    const std::span<const int> ib(no_indicators.data() + r, static_cast<std::size_t>(n));
    // the batch loss is a mean; scaling does not change the sign
    grad.middleRows(r, n) = m.network->loss_and_grads(xb, yb, ib, {}).input;
  }
  return grad;
}

/// Snaps every step's action block back to the one-hot vertex nearest in raw
/// space. Keeping the original vertex restores the original values exactly.
inline void reproject_actions(Tensor2& perturbed, const Tensor2& original, const monitors::FeatureSpec& spec) {
  constexpr int c0 = monitors::kActionU1;
  constexpr int na = 4;
  for (Eigen::Index r = 0; r < perturbed.rows(); ++r) {
    for (int k = 0; k < spec.window_len; ++k) {
      const Eigen::Index base = static_cast<Eigen::Index>(k) * monitors::kChannelCount + c0;
      int orig = 0;
      double best_raw = -1e300;
      double raw[na];
      for (int a = 0; a < na; ++a) {
        const double o = spec.norm.decode(c0 + a, original(r, base + a));
        if (o > best_raw) {
          best_raw = o;
          orig = a;
        }
        raw[a] = spec.norm.decode(c0 + a, perturbed(r, base + a));
      }
      // squared distance to vertex e_v: sum_j raw_j^2 - 2 raw_v + 1
      int pick = orig;
      double best = -2.0 * raw[orig];
      for (int a = 0; a < na; ++a) {
        const double d = -2.0 * raw[a];
        if (d < best) {
          best = d;
          pick = a;
        }
      }
      for (int a = 0; a < na; ++a) {
        perturbed(r, base + a) = pick == orig ? original(r, base + a)
                                              : spec.norm.encode(c0 + a, a == pick ? 1.0 : 0.0);
      }
    }
  }
}

/// x + epsilon * sign(grad) on the target columns, then action re-projection.
inline FgsmResult fgsm_apply(const Tensor2& x, const Tensor2& grad, const FgsmSpec& spec,
                             const monitors::FeatureSpec& features) {
  spec.validate();
  if (grad.rows() != x.rows() || grad.cols() != x.cols()) throw ShapeError("gradient does not match batch");
  const auto mask = channel_mask(spec.target_channels, features.window_len);
  FgsmResult res;
  res.perturbed = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      if (mask[static_cast<std::size_t>(k)]) res.perturbed(r, k) += spec.epsilon * sign(grad(r, k));
    }
  }
  reproject_actions(res.perturbed, x, features);
  res.delta = res.perturbed - x;
  return res;
}

inline FgsmResult fgsm_whitebox(const monitors::MonitorModel& m, const Tensor2& x, const std::vector<int>& labels,
                                const FgsmSpec& spec) {
  spec.validate();
  return fgsm_apply(x, input_gradient(m, x, labels), spec, m.spec);
}

// ---------------------------------------------------------------------------
// Black-box attack through a substitute model

struct SubstituteSpec {
  std::vector<int> hidden{128, 64};
  std::size_t query_budget = 0;  // 0 = every attacker query sample
  int epochs = 10;
  int batch_size = 64;
  double lr = 0.001;
  std::uint64_t seed = 0;
  double min_agreement = 0.9;
};

struct Substitute {
  monitors::MonitorModel model;
  double agreement = 0.0;  // on held-out queries
  std::size_t queries = 0;
};

/// Trains the substitute from the target's answers. `target` is the only
/// access to the attacked monitor.
inline Substitute train_substitute(const monitors::PredictFn& target, const monitors::FeatureSpec& features,
                                   const Split& query_pool, const Tensor2& holdout, const SubstituteSpec& spec) {
  if (query_pool.size() == 0) throw InvalidArgument("substitute query pool is empty");
  Split queries = query_pool;
  if (spec.query_budget > 0 && spec.query_budget < query_pool.size()) {
    std::vector<std::size_t> idx(query_pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(derive_seed(spec.seed, 0xb0d9e7));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(spec.query_budget);
    std::sort(idx.begin(), idx.end());
    queries = query_pool.rows(idx);
  }
  const auto answers = target(queries.x);
  monitors::TrainConfig cfg;
  cfg.epochs = spec.epochs;
  cfg.batch_size = spec.batch_size;
  cfg.lr = spec.lr;
  cfg.mlp_hidden = spec.hidden;
  Substitute sub;
  sub.queries = queries.size();
  try {
    sub.model = monitors::train_network(neural::NetKind::mlp, features, queries, std::nullopt, spec.seed, cfg,
                                        nullptr, &answers);
  } catch (const NumericError& e) {
    throw NumericError(std::string("substitute training diverged: ") + e.what());
  }
  sub.model.id = "substitute";
  if (holdout.rows() > 0) {
    const auto want = target(holdout);
    const auto got = monitors::predicted_classes(sub.model, holdout);
    std::size_t same = 0;
    for (std::size_t i = 0; i < want.size(); ++i) same += want[i] == got[i] ? 1 : 0;
    sub.agreement = static_cast<double>(same) / static_cast<double>(want.size());
  }
  return sub;
}

inline FgsmResult fgsm_blackbox(const Substitute& sub, const Tensor2& x, const std::vector<int>& labels,
                                const FgsmSpec& spec) {
  return fgsm_whitebox(sub.model, x, labels, spec);
}

// ---------------------------------------------------------------------------
// Persistence

inline std::string perturbed_split_csv(const Split& clean, const Tensor2& perturbed, const std::string& kind,
                                       double magnitude, std::uint64_t seed) {
  if (perturbed.rows() != clean.x.rows() || perturbed.cols() != clean.x.cols()) {
    throw ShapeError("perturbed batch does not match the clean split");
  }
  Split s = clean;
  s.x = perturbed;
  return monitors::split_to_csv(
      s, {{"perturbation_kind", "magnitude", "seed"}, {kind, format_double(magnitude), std::to_string(seed)}});
}

}  // namespace robustmon::perturb

#endif  // ROBUSTMON_PERTURB_HPP
