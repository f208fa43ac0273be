#ifndef ROBUSTMON_NEURAL_NETWORK_HPP
#define ROBUSTMON_NEURAL_NETWORK_HPP

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "robustmon/neural/adam.hpp"
#include "robustmon/neural/dense.hpp"
#include "robustmon/neural/loss.hpp"
#include "robustmon/neural/lstm.hpp"

namespace robustmon::neural {

enum class NetKind { mlp, lstm };

inline const char* to_string(NetKind k) { return k == NetKind::mlp ? "mlp" : "lstm"; }

inline NetKind net_kind_from_string(const std::string& s) {
  if (s == "mlp") return NetKind::mlp;
  if (s == "lstm") return NetKind::lstm;
  throw InvalidArgument("unknown network kind: " + s);
}

/// Inputs are windows of `time_steps` x `channels`, flattened step-major.
struct Architecture {
  NetKind kind = NetKind::mlp;
  int time_steps = 6;
  int channels = 9;
  std::vector<int> hidden{256, 128};
  int classes = 2;

  int input_size() const { return time_steps * channels; }
  bool operator==(const Architecture&) const = default;
};

inline Architecture mlp_architecture(int time_steps, int channels, std::vector<int> hidden = {256, 128}) {
  return {NetKind::mlp, time_steps, channels, std::move(hidden), 2};
}

inline Architecture lstm_architecture(int time_steps, int channels, std::vector<int> hidden = {128, 64}) {
  return {NetKind::lstm, time_steps, channels, std::move(hidden), 2};
}

struct Gradients {
  LossValue value;
  std::vector<Tensor2> params;  // aligned with Network::params()
  Tensor2 input;                // d(loss)/d(input), same shape as the batch
};

class Network {
 public:
  Network() = default;
  explicit Network(Architecture arch) : arch_(std::move(arch)) {
    if (arch_.time_steps < 1 || arch_.channels < 1 || arch_.classes < 2 || arch_.hidden.empty()) {
      throw InvalidArgument("invalid network architecture");
    }
    if (arch_.kind == NetKind::mlp) {
      int in = arch_.input_size();
      for (int h : arch_.hidden) {
        dense_.emplace_back(in, h, Activation::relu);
        in = h;
      }
      dense_.emplace_back(in, arch_.classes, Activation::softmax);
    } else {
      int in = arch_.channels;
      for (int h : arch_.hidden) {
        lstm_.emplace_back(in, h);
        in = h;
      }
      dense_.emplace_back(in, arch_.classes, Activation::softmax);
    }
  }

  const Architecture& architecture() const { return arch_; }
  std::vector<LstmLayer>& lstm_layers() { return lstm_; }
  std::vector<DenseLayer>& dense_layers() { return dense_; }
  const std::vector<LstmLayer>& lstm_layers() const { return lstm_; }
  const std::vector<DenseLayer>& dense_layers() const { return dense_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : lstm_) l.init(rng);
    for (auto& l : dense_) l.init(rng);
  }

  std::vector<Tensor2*> params() {
    std::vector<Tensor2*> out;
    for (auto& l : lstm_) for (auto* p : l.params()) out.push_back(p);
    for (auto& l : dense_) for (auto* p : l.params()) out.push_back(p);
    return out;
  }
  std::vector<const Tensor2*> params() const {
    std::vector<const Tensor2*> out;
    for (const auto& l : lstm_) for (auto* p : l.params()) out.push_back(p);
    for (const auto& l : dense_) for (auto* p : l.params()) out.push_back(p);
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : params()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  /// Class probabilities, one row per sample.
  Tensor2 forward(const Tensor2& batch) const { return softmax(logits(batch, nullptr)); }

  Gradients loss_and_grads(const Tensor2& batch, std::span<const int> labels,
                           std::span<const int> indicators, const LossOptions& opt) const {
    Caches caches;
    Tensor2 z = logits(batch, &caches);
    Gradients g;
    g.value = softmax_loss(z, labels, indicators, opt);
    for (const auto* p : params()) g.params.push_back(Tensor2::Zero(p->rows(), p->cols()));
    std::size_t pi = 3 * lstm_.size();

    Tensor2 d = g.value.dlogits;
    for (std::size_t k = dense_.size(); k-- > 0;) {
      d = dense_[k].backward(caches.dense[k], d, g.params[pi + 2 * k], g.params[pi + 2 * k + 1]);
    }
    if (arch_.kind == NetKind::mlp) {
      g.input = std::move(d);
    } else {
      const Eigen::Index batch_rows = batch.rows();
      Tensor2 dhs = Tensor2::Zero(batch_rows * arch_.time_steps, lstm_.back().hidden());
      dhs.bottomRows(batch_rows) = d;
      for (std::size_t k = lstm_.size(); k-- > 0;) {
        dhs = lstm_[k].backward(caches.lstm[k], dhs, g.params[3 * k], g.params[3 * k + 1],
                                g.params[3 * k + 2]);
      }
      g.input.resize(batch.rows(), batch.cols());
      for (Eigen::Index s = 0; s < arch_.time_steps; ++s) {
        g.input.middleCols(s * arch_.channels, arch_.channels) =
            dhs.middleRows(s * batch_rows, batch_rows);
      }
    }
    for (const auto& p : g.params) require_finite(p, "parameter gradients");
    require_finite(g.input, "input gradients");
    return g;
  }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    auto flat = [](const Tensor2& t) {
      return std::vector<double>(t.data(), t.data() + t.size());
    };
    for (const auto& l : lstm_) {
      layers.push_back({{"type", "lstm"},
                        {"input", l.in()},
                        {"hidden", l.hidden()},
                        {"gate_order", "ifog"},
                        {"W", flat(l.W)},
                        {"U", flat(l.U)},
                        {"b", flat(l.b)}});
    }
    for (const auto& l : dense_) {
      layers.push_back({{"type", "dense"},
                        {"input", l.in()},
                        {"output", l.out()},
                        {"activation", neural::to_string(l.activation)},
                        {"W", flat(l.W)},
                        {"b", flat(l.b)}});
    }
    return {{"architecture",
             {{"kind", neural::to_string(arch_.kind)},
              {"time_steps", arch_.time_steps},
              {"channels", arch_.channels},
              {"hidden", arch_.hidden},
              {"classes", arch_.classes}}},
            {"layers", layers}};
  }

  static Network from_json(const nlohmann::json& j) {
    const auto& ja = j.at("architecture");
    Architecture a;
    a.kind = net_kind_from_string(ja.at("kind").get<std::string>());
    a.time_steps = ja.at("time_steps").get<int>();
    a.channels = ja.at("channels").get<int>();
    a.hidden = ja.at("hidden").get<std::vector<int>>();
    a.classes = ja.at("classes").get<int>();
    Network net(a);
    const auto& jl = j.at("layers");
    if (jl.size() != net.lstm_.size() + net.dense_.size()) {
      throw ShapeError("checkpoint layer count does not match architecture");
    }
    auto fill = [](Tensor2& t, const nlohmann::json& arr) {
      const auto v = arr.get<std::vector<double>>();
      if (static_cast<Eigen::Index>(v.size()) != t.size()) throw ShapeError("checkpoint tensor size mismatch");
      std::copy(v.begin(), v.end(), t.data());
    };
    std::size_t k = 0;
    for (auto& l : net.lstm_) {
      const auto& x = jl.at(k++);
      if (x.at("type") != "lstm") throw ShapeError("checkpoint layer type mismatch");
      fill(l.W, x.at("W"));
      fill(l.U, x.at("U"));
      fill(l.b, x.at("b"));
    }
    for (auto& l : net.dense_) {
      const auto& x = jl.at(k++);
      if (x.at("type") != "dense") throw ShapeError("checkpoint layer type mismatch");
      if (activation_from_string(x.at("activation").get<std::string>()) != l.activation) {
        throw ShapeError("checkpoint activation mismatch");
      }
      fill(l.W, x.at("W"));
      fill(l.b, x.at("b"));
    }
    return net;
  }

 private:
  struct Caches {
    std::vector<DenseLayer::Cache> dense;
    std::vector<LstmLayer::Cache> lstm;
  };

  Tensor2 logits(const Tensor2& batch, Caches* caches) const {
    if (batch.cols() != arch_.input_size()) {
      throw ShapeError("input has " + std::to_string(batch.cols()) + " features, model expects " +
                       std::to_string(arch_.input_size()));
    }
    require_finite(batch, "network input");
    if (caches) {
      caches->dense.resize(dense_.size());
      caches->lstm.resize(lstm_.size());
    }
    Tensor2 a;
    if (arch_.kind == NetKind::mlp) {
      a = batch;
    } else {
      const Eigen::Index rows = batch.rows();
      Tensor2 seq(rows * arch_.time_steps, arch_.channels);
      for (Eigen::Index s = 0; s < arch_.time_steps; ++s) {
        seq.middleRows(s * rows, rows) = batch.middleCols(s * arch_.channels, arch_.channels);
      }
      for (std::size_t k = 0; k < lstm_.size(); ++k) {
        seq = lstm_[k].forward(seq, rows, caches ? &caches->lstm[k] : nullptr);
      }
      a = seq.bottomRows(rows);
    }
    for (std::size_t k = 0; k < dense_.size(); ++k) {
      a = dense_[k].forward(a, caches ? &caches->dense[k] : nullptr);
    }
    require_finite(a, "network activations");
    return a;
  }

  Architecture arch_;
  std::vector<LstmLayer> lstm_;
  std::vector<DenseLayer> dense_;
};

/// Final hidden state of an LSTM stack over one window (rows = steps).
inline Tensor2 lstm_sequence_forward(const std::vector<LstmLayer>& stack, const Tensor2& window,
                                     int time_steps) {
  if (window.rows() != time_steps) {
    throw ShapeError("window has " + std::to_string(window.rows()) + " steps, expected " +
                     std::to_string(time_steps));
  }
  Tensor2 seq = window;
  for (const auto& l : stack) seq = l.forward(seq, 1);
  return seq.bottomRows(1);
}

}  // namespace robustmon::neural

#endif  // ROBUSTMON_NEURAL_NETWORK_HPP
