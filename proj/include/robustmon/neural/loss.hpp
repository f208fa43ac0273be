#ifndef ROBUSTMON_NEURAL_LOSS_HPP
#define ROBUSTMON_NEURAL_LOSS_HPP

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "robustmon/neural/tensor.hpp"

namespace robustmon::neural {

/// Row-wise softmax, shifted by the row max.
inline Tensor2 softmax(const Tensor2& logits) {
  Tensor2 p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      p(r, c) = std::exp(logits(r, c) - m);
      sum += p(r, c);
    }
    p.row(r) /= sum;
  }
  return p;
}

/// Knowledge penalty w * |p_unsafe - I| added to the data loss.
struct SemanticLossConfig {
  double w = 0.5;
  int unsafe_class_index = 1;

  void validate() const {
    if (!std::isfinite(w) || w < 0.0) throw InvalidArgument("semantic weight must be finite and >= 0");
  }
};

struct LossOptions {
  std::optional<SemanticLossConfig> semantic;
  /// Per-class multipliers on the cross-entropy term; empty means all ones.
  std::vector<double> class_weights;
};

struct LossValue {
  double loss = 0.0;
  double cross_entropy = 0.0;  // weighted data term, batch mean
  double semantic = 0.0;       // w * mean |p_unsafe - I|
  Tensor2 probs;
  Tensor2 dlogits;  // d(loss)/d(logits)
};

inline double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Batch-mean loss: weighted cross-entropy plus the optional semantic term.
/// Indicators are 0/1 per sample and are treated as constants.
inline LossValue softmax_loss(const Tensor2& logits, std::span<const int> labels,
                              std::span<const int> indicators, const LossOptions& opt) {
  const auto batch = logits.rows();
  const auto classes = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != batch) throw ShapeError("label count != batch size");
  const bool use_semantic = opt.semantic && opt.semantic->w > 0.0;
  if (opt.semantic) {
    opt.semantic->validate();
    if (static_cast<Eigen::Index>(indicators.size()) != batch) {
      throw InvalidArgument("semantic loss requires an indicator for every sample");
    }
    for (int v : indicators) {
      if (v != 0 && v != 1) throw InvalidArgument("semantic loss requires an indicator for every sample");
    }
  }
  if (!opt.class_weights.empty() && static_cast<Eigen::Index>(opt.class_weights.size()) != classes) {
    throw ShapeError("class weight count != class count");
  }

  LossValue out;
  out.probs = softmax(logits);
  out.dlogits = Tensor2::Zero(batch, classes);
  const double inv_b = 1.0 / static_cast<double>(batch);
  double ce = 0.0, sem = 0.0;
  for (Eigen::Index r = 0; r < batch; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= classes) throw InvalidArgument("label out of range");
    const double cw = opt.class_weights.empty() ? 1.0 : opt.class_weights[static_cast<std::size_t>(y)];
    // log p_y via log-sum-exp for accuracy at saturated logits
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    ce += cw * (lse - logits(r, y));
    for (Eigen::Index k = 0; k < classes; ++k) {
      out.dlogits(r, k) = cw * (out.probs(r, k) - (k == y ? 1.0 : 0.0)) * inv_b;
    }
    if (use_semantic) {
      const int u = opt.semantic->unsafe_class_index;
      const double pu = out.probs(r, u);
      const double diff = pu - static_cast<double>(indicators[static_cast<std::size_t>(r)]);
      sem += std::abs(diff);
      const double scale = opt.semantic->w * sign_or_zero(diff) * inv_b;
      for (Eigen::Index k = 0; k < classes; ++k) {
        out.dlogits(r, k) += scale * pu * ((k == u ? 1.0 : 0.0) - out.probs(r, k));
      }
    }
  }
  out.cross_entropy = ce * inv_b;
  out.semantic = use_semantic ? opt.semantic->w * sem * inv_b : 0.0;
  out.loss = use_semantic ? out.cross_entropy + out.semantic : out.cross_entropy;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  return out;
}

}  // namespace robustmon::neural

#endif  // ROBUSTMON_NEURAL_LOSS_HPP
