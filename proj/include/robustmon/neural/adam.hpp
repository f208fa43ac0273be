#ifndef ROBUSTMON_NEURAL_ADAM_HPP
#define ROBUSTMON_NEURAL_ADAM_HPP

#include <cmath>
#include <vector>

#include "robustmon/neural/tensor.hpp"

namespace robustmon::neural {

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor2> m;
  std::vector<Tensor2> v;
  long step = 0;
};

/// One bias-corrected Adam update. Moments are allocated on first use.
inline void adam_step(const std::vector<Tensor2*>& params, const std::vector<Tensor2>& grads,
                      AdamState& st) {
  if (params.size() != grads.size()) throw ShapeError("adam: parameter/gradient count mismatch");
  if (st.m.empty()) {
    for (const auto* p : params) {
      st.m.push_back(Tensor2::Zero(p->rows(), p->cols()));
      st.v.push_back(Tensor2::Zero(p->rows(), p->cols()));
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam: state does not match parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const auto& g = grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols() || st.m[k].rows() != p.rows() ||
        st.m[k].cols() != p.cols()) {
      throw ShapeError("adam: gradient shape mismatch");
    }
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g;
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g.cwiseProduct(g);
    p.array() -= st.lr * (st.m[k].array() / c1) / ((st.v[k].array() / c2).sqrt() + st.eps);
  }
}

}  // namespace robustmon::neural

#endif  // ROBUSTMON_NEURAL_ADAM_HPP
