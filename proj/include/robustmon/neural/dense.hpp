#ifndef ROBUSTMON_NEURAL_DENSE_HPP
#define ROBUSTMON_NEURAL_DENSE_HPP

#include <random>
#include <string>
#include <vector>

#include "robustmon/neural/tensor.hpp"

namespace robustmon::neural {

enum class Activation { identity, relu, softmax };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "softmax") return Activation::softmax;
  throw InvalidArgument("unknown activation: " + s);
}

/// Fully connected layer. The softmax activation is applied by the loss, so
/// a softmax layer produces logits from forward().
struct DenseLayer {
  Tensor2 W;  // out x in
  Tensor2 b;  // 1 x out
  Activation activation = Activation::identity;

  DenseLayer() = default;
  DenseLayer(int in, int out, Activation act)
      : W(Tensor2::Zero(out, in)), b(Tensor2::Zero(1, out)), activation(act) {}

  int in() const { return static_cast<int>(W.cols()); }
  int out() const { return static_cast<int>(W.rows()); }

  void init(std::mt19937_64& rng) {
    glorot_uniform(W, in(), out(), rng);
    b.setZero();
  }

  struct Cache {
    Tensor2 x;
    Tensor2 z;
  };

  Tensor2 forward(const Tensor2& x, Cache* cache = nullptr) const {
    if (x.cols() != in()) {
      throw ShapeError("dense layer expects " + std::to_string(in()) + " inputs, got " +
                       std::to_string(x.cols()));
    }
    Tensor2 z = x * W.transpose();
    z.rowwise() += b.row(0);
    Tensor2 a = activation == Activation::relu ? Tensor2(z.cwiseMax(0.0)) : z;
    if (cache) {
      cache->x = x;
      cache->z = std::move(z);
    }
    return a;
  }

  /// Given dL/da, accumulates parameter gradients and returns dL/dx.
  Tensor2 backward(const Cache& cache, const Tensor2& da, Tensor2& dW, Tensor2& db) const {
    Tensor2 dz = da;
    if (activation == Activation::relu) {
      dz = (cache.z.array() > 0.0).select(da, 0.0);
    }
    dW.noalias() += dz.transpose() * cache.x;
    db.row(0) += dz.colwise().sum();
    return dz * W;
  }

  std::vector<Tensor2*> params() { return {&W, &b}; }
  std::vector<const Tensor2*> params() const { return {&W, &b}; }
};

}  // namespace robustmon::neural

#endif  // ROBUSTMON_NEURAL_DENSE_HPP
