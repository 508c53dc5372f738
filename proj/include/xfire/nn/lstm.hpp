#pragma once

// LSTM layer with gate layout [input | forget | output | candidate], each of
// width `hidden`. Sigmoid on i/f/o, tanh on the candidate.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xfire/nn/ops.hpp"
#include "xfire/nn/tensor.hpp"

namespace xfire::nn {

template <class T>
struct LstmParams {
  Parameter<T> wx;  // [d_in, 4h]
  Parameter<T> wh;  // [h, 4h]
  Parameter<T> b;   // [4h]

  LstmParams() = default;
  LstmParams(const std::string& prefix, std::size_t d_in, std::size_t hidden)
      : wx(prefix + ".wx", Tensor<T>({d_in, 4 * hidden})),
        wh(prefix + ".wh", Tensor<T>({hidden, 4 * hidden})),
        b(prefix + ".b", Tensor<T>({4 * hidden})) {}

  std::size_t input_width() const { return wx.value.dim(0); }
  std::size_t hidden() const { return wh.value.dim(0); }

  /// Glorot-uniform weights, forget-gate bias 1, other biases 0.
  void init(Rng& rng) {
    const std::size_t h = hidden();
    glorot_uniform(wx.value, input_width(), 4 * h, rng);
    glorot_uniform(wh.value, h, 4 * h, rng);
    b.value.zero();
    for (std::size_t j = h; j < 2 * h; ++j) b.value[j] = T{1};
  }

  void validate() const {
    const std::size_t h = wh.value.dim(0);
    if (wh.value.shape() != Shape{h, 4 * h} || wx.value.rank() != 2 || wx.value.dim(1) != 4 * h ||
        b.value.shape() != Shape{4 * h})
      throw std::invalid_argument("LstmParams: inconsistent parameter shapes");
  }

  std::vector<Parameter<T>*> parameters() { return {&wx, &wh, &b}; }
};

template <class T>
struct LstmCellState {
  std::vector<T> h;
  std::vector<T> c;

  LstmCellState() = default;
  explicit LstmCellState(std::size_t hidden) : h(hidden, T{}), c(hidden, T{}) {}
  bool operator==(const LstmCellState&) const = default;
};

namespace detail {

/// One cell update. gates receives the activated [i|f|o|g]; tanh_c receives tanh(c_out).
template <class T>
void lstm_cell(const T* x, const T* h_prev, const T* c_prev, const LstmParams<T>& p, T* gates, T* c_out,
               T* h_out, T* tanh_c) {
  const std::size_t d = p.input_width(), h = p.hidden(), g4 = 4 * h;
  const T* wx = p.wx.value.data();
  const T* wh = p.wh.value.data();
  std::copy(p.b.value.data(), p.b.value.data() + g4, gates);
  for (std::size_t k = 0; k < d; ++k) kernel::axpy(g4, x[k], wx + k * g4, gates);
  for (std::size_t k = 0; k < h; ++k) kernel::axpy(g4, h_prev[k], wh + k * g4, gates);
  for (std::size_t j = 0; j < 3 * h; ++j) gates[j] = sigmoid(gates[j]);
  for (std::size_t j = 3 * h; j < g4; ++j) gates[j] = std::tanh(gates[j]);
  for (std::size_t j = 0; j < h; ++j) {
    const T c = gates[h + j] * c_prev[j] + gates[j] * gates[3 * h + j];
    const T tc = std::tanh(c);
    c_out[j] = c;
    tanh_c[j] = tc;
    h_out[j] = gates[2 * h + j] * tc;
  }
}

}  // namespace detail

/// Single recurrent step for streaming use.
template <class T>
LstmCellState<T> lstm_step(std::span<const T> x, const LstmCellState<T>& state, const LstmParams<T>& p) {
  const std::size_t h = p.hidden();
  if (x.size() != p.input_width()) throw std::invalid_argument("lstm_step: input width mismatch");
  if (state.h.size() != h || state.c.size() != h) throw std::invalid_argument("lstm_step: state width mismatch");
  LstmCellState<T> next(h);
  std::vector<T> gates(4 * h), tanh_c(h);
  detail::lstm_cell(x.data(), state.h.data(), state.c.data(), p, gates.data(), next.c.data(), next.h.data(),
                    tanh_c.data());
  return next;
}

template <class T>
struct LstmCache {
  Tensor<T> x;       // [n,T,d]
  Tensor<T> gates;   // [n,T,4h]
  Tensor<T> c;       // [n,T,h]
  Tensor<T> tanh_c;  // [n,T,h]
  Tensor<T> h;       // [n,T,h]
};

/// Runs every sequence of x [n,T,d] from a zero state and returns hidden outputs [n,T,h].
template <class T>
Tensor<T> lstm_forward(const Tensor<T>& x, const LstmParams<T>& p, LstmCache<T>* cache = nullptr) {
  require_rank(x, 3, "lstm_forward: input");
  const std::size_t n = x.dim(0), steps = x.dim(1), d = x.dim(2), h = p.hidden();
  if (d != p.input_width()) throw std::invalid_argument("lstm_forward: input width mismatch");
  Tensor<T> out({n, steps, h});
  Tensor<T> gates({n, steps, 4 * h}), cs({n, steps, h}), tcs({n, steps, h});
  const std::vector<T> zero(h, T{});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t row = b * steps + t;
      const T* h_prev = t ? out.data() + (row - 1) * h : zero.data();
      const T* c_prev = t ? cs.data() + (row - 1) * h : zero.data();
      detail::lstm_cell(x.data() + row * d, h_prev, c_prev, p, gates.data() + row * 4 * h, cs.data() + row * h,
                        out.data() + row * h, tcs.data() + row * h);
    }
  if (cache) {
    cache->x = x;
    cache->gates = std::move(gates);
    cache->c = std::move(cs);
    cache->tanh_c = std::move(tcs);
    cache->h = out;
  }
  return out;
}

/// Backpropagation through time. dh_out [n,T,h] is the loss gradient w.r.t.
/// every emitted hidden state; gradients accumulate into p; dx (if given)
/// receives the input gradient [n,T,d].
template <class T>
void lstm_backward(const LstmCache<T>& cache, LstmParams<T>& p, const Tensor<T>& dh_out, Tensor<T>* dx) {
  const std::size_t n = cache.x.dim(0), steps = cache.x.dim(1), d = cache.x.dim(2), h = p.hidden(), g4 = 4 * h;
  require_shape(dh_out, {n, steps, h}, "lstm_backward: dh");
  if (dx) *dx = Tensor<T>(cache.x.shape());
  const T* wx = p.wx.value.data();
  const T* wh = p.wh.value.data();
  T* dwx = p.wx.grad.data();
  T* dwh = p.wh.grad.data();
  T* db = p.b.grad.data();
  std::vector<T> dh_next(h), dc_next(h), dz(g4);
  const std::vector<T> zero(h, T{});

  for (std::size_t b = 0; b < n; ++b) {
    std::fill(dh_next.begin(), dh_next.end(), T{});
    std::fill(dc_next.begin(), dc_next.end(), T{});
    for (std::size_t t = steps; t-- > 0;) {
      const std::size_t row = b * steps + t;
      const T* gt = cache.gates.data() + row * g4;
      const T* tc = cache.tanh_c.data() + row * h;
      const T* c_prev = t ? cache.c.data() + (row - 1) * h : zero.data();
      const T* h_prev = t ? cache.h.data() + (row - 1) * h : zero.data();
      const T* xt = cache.x.data() + row * d;
      const T* up = dh_out.data() + row * h;
      for (std::size_t j = 0; j < h; ++j) {
        const T gi = gt[j], gf = gt[h + j], go = gt[2 * h + j], gg = gt[3 * h + j];
        const T dhj = up[j] + dh_next[j];
        const T dcj = dc_next[j] + dhj * go * (T{1} - tc[j] * tc[j]);
        dz[j] = dcj * gg * gi * (T{1} - gi);
        dz[h + j] = dcj * c_prev[j] * gf * (T{1} - gf);
        dz[2 * h + j] = dhj * tc[j] * go * (T{1} - go);
        dz[3 * h + j] = dcj * gi * (T{1} - gg * gg);
        dc_next[j] = dcj * gf;
      }
      for (std::size_t j = 0; j < g4; ++j) db[j] += dz[j];
      for (std::size_t k = 0; k < d; ++k) kernel::axpy(g4, xt[k], dz.data(), dwx + k * g4);
      for (std::size_t k = 0; k < h; ++k) kernel::axpy(g4, h_prev[k], dz.data(), dwh + k * g4);
      if (dx) {
        T* dxt = dx->data() + row * d;
        for (std::size_t k = 0; k < d; ++k) dxt[k] = kernel::dot(g4, wx + k * g4, dz.data());
      }
      for (std::size_t k = 0; k < h; ++k) dh_next[k] = kernel::dot(g4, wh + k * g4, dz.data());
    }
  }
}

}  // namespace xfire::nn
