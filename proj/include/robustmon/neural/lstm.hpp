#ifndef ROBUSTMON_NEURAL_LSTM_HPP
#define ROBUSTMON_NEURAL_LSTM_HPP

#include <random>
#include <vector>

#include "robustmon/neural/tensor.hpp"

namespace robustmon::neural {

/// LSTM layer with gates stacked row-wise in the order input, forget,
/// output, candidate. States start at zero for every sequence.
///
/// Sequences are passed step-stacked: for a batch of B sequences of S
/// steps, row s*B + r holds step s of sequence r.
struct LstmLayer {
  Tensor2 W;  // 4H x in
  Tensor2 U;  // 4H x H
  Tensor2 b;  // 1 x 4H

  LstmLayer() = default;
  LstmLayer(int in, int hidden)
      : W(Tensor2::Zero(4 * hidden, in)),
        U(Tensor2::Zero(4 * hidden, hidden)),
        b(Tensor2::Zero(1, 4 * hidden)) {}

  int in() const { return static_cast<int>(W.cols()); }
  int hidden() const { return static_cast<int>(U.cols()); }

  void init(std::mt19937_64& rng) {
    const int h = hidden();
    for (int gate = 0; gate < 4; ++gate) {
      Tensor2 w(h, in());
      glorot_uniform(w, in(), h, rng);
      W.middleRows(gate * h, h) = w;
    }
    for (int gate = 0; gate < 4; ++gate) {
      Tensor2 u(h, h);
      glorot_uniform(u, h, h, rng);
      U.middleRows(gate * h, h) = u;
    }
    b.setZero();
    b.middleCols(h, h).setOnes();  // forget gate
  }

  struct Cache {
    Eigen::Index batch = 0;
    Tensor2 x;       // S*B x in
    Tensor2 gates;   // S*B x 4H, post-activation (i, f, o, g)
    Tensor2 c;       // S*B x H
    Tensor2 tanh_c;  // S*B x H
    Tensor2 h;       // S*B x H
  };

  /// Returns the hidden state of every step, step-stacked (S*B x H).
  Tensor2 forward(const Tensor2& xs, Eigen::Index batch, Cache* cache = nullptr) const {
    const int h = hidden();
    if (batch <= 0 || xs.rows() % batch != 0 || xs.cols() != in()) {
      throw ShapeError("LSTM input shape mismatch");
    }
    const Eigen::Index steps = xs.rows() / batch;
    Tensor2 gates = xs * W.transpose();
    gates.rowwise() += b.row(0);
    Tensor2 hs(xs.rows(), h);
    Tensor2 cs(xs.rows(), h);
    Tensor2 tcs(xs.rows(), h);
    for (Eigen::Index s = 0; s < steps; ++s) {
      auto a = gates.middleRows(s * batch, batch);
      if (s > 0) a.noalias() += hs.middleRows((s - 1) * batch, batch) * U.transpose();
      a.leftCols(3 * h) = sigmoid_expr(a.leftCols(3 * h).array()).matrix();
      a.rightCols(h) = tanh_expr(a.rightCols(h).array()).matrix();
      auto c = cs.middleRows(s * batch, batch);
      if (s > 0) {
        c = (a.middleCols(h, h).array() * cs.middleRows((s - 1) * batch, batch).array() +
             a.leftCols(h).array() * a.rightCols(h).array())
                .matrix();
      } else {
        c = (a.leftCols(h).array() * a.rightCols(h).array()).matrix();
      }
      tcs.middleRows(s * batch, batch) = tanh_expr(c.array()).matrix();
      hs.middleRows(s * batch, batch) =
          (a.middleCols(2 * h, h).array() * tcs.middleRows(s * batch, batch).array()).matrix();
    }
    if (cache) {
      cache->batch = batch;
      cache->x = xs;
      cache->gates = std::move(gates);
      cache->c = std::move(cs);
      cache->tanh_c = std::move(tcs);
      cache->h = hs;
    }
    return hs;
  }

  /// Backpropagation through time. `dhs` is dL/dh for every step from
  /// above (step-stacked). Accumulates parameter gradients and returns dL/dx.
  Tensor2 backward(const Cache& cache, const Tensor2& dhs, Tensor2& dW, Tensor2& dU,
                   Tensor2& db) const {
    const int h = hidden();
    const Eigen::Index batch = cache.batch;
    const Eigen::Index steps = cache.x.rows() / batch;
    Tensor2 da(cache.x.rows(), 4 * h);
    Tensor2 dh_next = Tensor2::Zero(batch, h);
    Tensor2 dc_next = Tensor2::Zero(batch, h);
    for (Eigen::Index s = steps; s-- > 0;) {
      const auto g = cache.gates.middleRows(s * batch, batch);
      const auto gi = g.leftCols(h).array();
      const auto gf = g.middleCols(h, h).array();
      const auto go = g.middleCols(2 * h, h).array();
      const auto gg = g.rightCols(h).array();
      const auto tc = cache.tanh_c.middleRows(s * batch, batch).array();
      const Tensor2 dh = dhs.middleRows(s * batch, batch) + dh_next;
      const auto dha = dh.array();
      const Tensor2 dc = (dha * go * (1.0 - tc.square()) + dc_next.array()).matrix();
      const auto dca = dc.array();
      auto d = da.middleRows(s * batch, batch);
      d.leftCols(h) = (dca * gg * gi * (1.0 - gi)).matrix();
      if (s > 0) {
        const auto c_prev = cache.c.middleRows((s - 1) * batch, batch).array();
        d.middleCols(h, h) = (dca * c_prev * gf * (1.0 - gf)).matrix();
      } else {
        d.middleCols(h, h).setZero();
      }
      d.middleCols(2 * h, h) = (dha * tc * go * (1.0 - go)).matrix();
      d.rightCols(h) = (dca * gi * (1.0 - gg.square())).matrix();
      dc_next = (dca * gf).matrix();
      if (s > 0) dh_next.noalias() = d * U;
    }
    dW.noalias() += da.transpose() * cache.x;
    if (steps > 1) {
      dU.noalias() += da.bottomRows((steps - 1) * batch).transpose() *
                      cache.h.topRows((steps - 1) * batch);
    }
    db.row(0) += da.colwise().sum();
    return da * W;
  }

  std::vector<Tensor2*> params() { return {&W, &U, &b}; }
  std::vector<const Tensor2*> params() const { return {&W, &U, &b}; }
};

}  // namespace robustmon::neural

#endif  // ROBUSTMON_NEURAL_LSTM_HPP
