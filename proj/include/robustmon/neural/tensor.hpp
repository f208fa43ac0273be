#ifndef ROBUSTMON_NEURAL_TENSOR_HPP
#define ROBUSTMON_NEURAL_TENSOR_HPP

#include <random>
#include <string>

#include <Eigen/Dense>

#include "robustmon/error.hpp"

namespace robustmon::neural {

/// Row-major real matrix. Biases are stored as 1 x n rows.
using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_finite(const Tensor2& t, const char* what) {
  if (!t.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

inline void require_shape(const Tensor2& t, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (t.rows() != rows || t.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", got " + std::to_string(t.rows()) + "x" +
                     std::to_string(t.cols()));
  }
}

/// tanh through the vectorized exp: tanh(x) = 2 / (1 + e^{-2x}) - 1.
template <typename Derived>
auto tanh_expr(const Eigen::ArrayBase<Derived>& x) {
  return 2.0 / (1.0 + (-2.0 * x).exp()) - 1.0;
}

template <typename Derived>
auto sigmoid_expr(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 / (1.0 + (-x).exp());
}

/// Glorot-uniform fill, drawn row-major from `rng`.
inline void glorot_uniform(Tensor2& t, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
}

}  // namespace robustmon::neural

#endif  // ROBUSTMON_NEURAL_TENSOR_HPP
