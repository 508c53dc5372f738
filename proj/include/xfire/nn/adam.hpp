#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "xfire/nn/tensor.hpp"

namespace xfire::nn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  AdamOptions options;
  std::uint64_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;

  AdamState() = default;
  explicit AdamState(AdamOptions opt) : options(opt) {}
};

/// Bias-corrected Adam step over params (order must stay fixed between calls).
template <class T>
void adam_update(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_update: parameter list changed");
  ++state.t;
  const auto& o = state.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  const T step = static_cast<T>(o.learning_rate / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(o.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (state.m[i].shape() != p.value.shape()) throw std::invalid_argument("adam_update: shape changed");
    T* w = p.value.data();
    const T* g = p.grad.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

}  // namespace xfire::nn
