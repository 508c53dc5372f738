#pragma once

// Layer-wise forward/backward kernels. Backward functions accumulate into
// parameter gradients (+=) and overwrite input gradients (=).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "xfire/nn/tensor.hpp"
#include "xfire/rng.hpp"

namespace xfire::nn {

namespace kernel {

template <class T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Independent partial sums let the compiler vectorize without reassociation flags.
template <class T>
inline T dot(std::size_t n, const T* __restrict x, const T* __restrict y) {
  constexpr std::size_t lanes = 16;
  T part[lanes]{};
  std::size_t i = 0;
  for (; i + lanes <= n; i += lanes)
    for (std::size_t j = 0; j < lanes; ++j) part[j] += x[i + j] * y[i + j];
  T acc{};
  for (; i < n; ++i) acc += x[i] * y[i];
  for (std::size_t j = 0; j < lanes; ++j) acc += part[j];
  return acc;
}

}  // namespace kernel

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
template <class T>
void glorot_uniform(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(-limit, limit));
}

// ---------------------------------------------------------------- dense

template <class T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_rank(x, 2, "dense: input");
  require_rank(w, 2, "dense: weight");
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
  if (w.dim(0) != din) throw std::invalid_argument("dense: input width does not match weight rows");
  require_shape(b, {dout}, "dense: bias");
  Tensor<T> y({n, dout});
  for (std::size_t i = 0; i < n; ++i) {
    T* yr = y.data() + i * dout;
    std::copy(b.data(), b.data() + dout, yr);
    const T* xr = x.data() + i * din;
    for (std::size_t k = 0; k < din; ++k) kernel::axpy(dout, xr[k], w.data() + k * dout, yr);
  }
  return y;
}

/// dx may be null when the input gradient is not needed.
template <class T>
void dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>& dw,
                    Tensor<T>& db) {
  const std::size_t n = x.dim(0), din = x.dim(1), dout = w.dim(1);
  require_shape(dy, {n, dout}, "dense_backward: dy");
  for (std::size_t i = 0; i < n; ++i) {
    const T* g = dy.data() + i * dout;
    const T* xr = x.data() + i * din;
    for (std::size_t j = 0; j < dout; ++j) db[j] += g[j];
    for (std::size_t k = 0; k < din; ++k) kernel::axpy(dout, xr[k], g, dw.data() + k * dout);
  }
  if (dx) {
    *dx = Tensor<T>({n, din});
    for (std::size_t i = 0; i < n; ++i) {
      const T* g = dy.data() + i * dout;
      T* dxr = dx->data() + i * din;
      for (std::size_t k = 0; k < din; ++k) dxr[k] = kernel::dot(dout, w.data() + k * dout, g);
    }
  }
}

// ---------------------------------------------------------------- conv2d

namespace detail {

// Long contiguous (kw, ci) rows favour dot products against a [co, kh*kw*ci]
// kernel; short ones favour co-wide axpys against the native layout.
inline bool use_transposed_kernel(std::size_t row) { return row >= 64; }

template <class T>
std::vector<T> transpose_kernel(const Tensor<T>& k) {
  const std::size_t co = k.dim(3), slab = k.size() / co;
  std::vector<T> kt(k.size());
  for (std::size_t q = 0; q < slab; ++q)
    for (std::size_t c = 0; c < co; ++c) kt[c * slab + q] = k.data()[q * co + c];
  return kt;
}

}  // namespace detail

/// Valid cross-correlation, stride 1. input [n,H,W,Cin], kernel [kh,kw,Cin,Cout].
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& k) {
  require_rank(x, 4, "conv2d: input");
  require_rank(k, 4, "conv2d: kernel");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), ci = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), co = k.dim(3);
  if (k.dim(2) != ci) throw std::invalid_argument("conv2d: kernel input channels do not match input");
  if (kh > h || kw > w) throw std::invalid_argument("conv2d: kernel larger than input");
  const std::size_t ho = h - kh + 1, wo = w - kw + 1;
  Tensor<T> y({n, ho, wo, co});
  if (detail::use_transposed_kernel(kw * ci)) {
    const std::size_t row = kw * ci, slab = kh * row;
    const auto kt = detail::transpose_kernel(k);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oi = 0; oi < ho; ++oi)
        for (std::size_t oj = 0; oj < wo; ++oj) {
          T* out = y.data() + ((b * ho + oi) * wo + oj) * co;
          for (std::size_t c = 0; c < co; ++c) {
            T acc{};
            for (std::size_t a = 0; a < kh; ++a)
              acc += kernel::dot(row, x.data() + ((b * h + oi + a) * w + oj) * ci, kt.data() + c * slab + a * row);
            out[c] = acc;
          }
        }
    return y;
  }
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oi = 0; oi < ho; ++oi)
      for (std::size_t oj = 0; oj < wo; ++oj) {
        T* out = y.data() + ((b * ho + oi) * wo + oj) * co;
        for (std::size_t a = 0; a < kh; ++a) {
          const T* xrow = x.data() + ((b * h + oi + a) * w + oj) * ci;
          const T* krow = k.data() + a * kw * ci * co;
          // (kw, ci) is contiguous in both the input row and the kernel slab.
          for (std::size_t q = 0; q < kw * ci; ++q) kernel::axpy(co, xrow[q], krow + q * co, out);
        }
      }
  return y;
}

template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>& dk) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), ci = x.dim(3);
  const std::size_t kh = k.dim(0), kw = k.dim(1), co = k.dim(3);
  const std::size_t ho = h - kh + 1, wo = w - kw + 1;
  require_shape(dy, {n, ho, wo, co}, "conv2d_backward: dy");
  if (dx) *dx = Tensor<T>(x.shape());
  if (detail::use_transposed_kernel(kw * ci)) {
    const std::size_t row = kw * ci, slab = kh * row;
    const auto kt = detail::transpose_kernel(k);
    std::vector<T> dkt(co * slab);
    // Channel-outer order keeps one transposed kernel slab hot across the batch.
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t oi = 0; oi < ho; ++oi)
          for (std::size_t oj = 0; oj < wo; ++oj) {
            const T g = dy.data()[((b * ho + oi) * wo + oj) * co + c];
            for (std::size_t a = 0; a < kh; ++a) {
              const std::size_t xoff = ((b * h + oi + a) * w + oj) * ci;
              kernel::axpy(row, g, x.data() + xoff, dkt.data() + c * slab + a * row);
              if (dx) kernel::axpy(row, g, kt.data() + c * slab + a * row, dx->data() + xoff);
            }
          }
    for (std::size_t q = 0; q < slab; ++q)
      for (std::size_t c = 0; c < co; ++c) dk.data()[q * co + c] += dkt[c * slab + q];
    return;
  }
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oi = 0; oi < ho; ++oi)
      for (std::size_t oj = 0; oj < wo; ++oj) {
        const T* g = dy.data() + ((b * ho + oi) * wo + oj) * co;
        for (std::size_t a = 0; a < kh; ++a) {
          const std::size_t xoff = ((b * h + oi + a) * w + oj) * ci;
          const T* xrow = x.data() + xoff;
          T* dkrow = dk.data() + a * kw * ci * co;
          for (std::size_t q = 0; q < kw * ci; ++q) kernel::axpy(co, xrow[q], g, dkrow + q * co);
          if (dx) {
            const T* krow = k.data() + a * kw * ci * co;
            T* dxrow = dx->data() + xoff;
            for (std::size_t q = 0; q < kw * ci; ++q) dxrow[q] += kernel::dot(co, krow + q * co, g);
          }
        }
      }
}

// ---------------------------------------------------------------- batchnorm

enum class Mode { train, eval };

struct BatchNormOptions {
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};

template <class T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  Mode mode = Mode::train;
};

/// Per-channel normalization over all but the last axis of [n,H,W,C].
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                            BatchNormCache<T>* cache = nullptr, BatchNormOptions opt = {}) {
  require_rank(x, 4, "batchnorm: input");
  const std::size_t c = x.dim(3);
  const std::size_t m = x.size() / c;
  require_shape(gamma, {c}, "batchnorm: gamma");
  require_shape(beta, {c}, "batchnorm: beta");
  if (mode == Mode::train && x.dim(0) < 2) throw std::invalid_argument("batchnorm: train mode needs batch >= 2");

  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::train) {
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) sum[j] += x[i * c + j];
    for (std::size_t j = 0; j < c; ++j) sum[j] /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = x[i * c + j] - sum[j];
        sq[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) {
      const double var = sq[j] / static_cast<double>(m);
      mean[j] = static_cast<T>(sum[j]);
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      const double unbiased = m > 1 ? sq[j] / static_cast<double>(m - 1) : var;
      running_mean[j] = static_cast<T>(opt.momentum * running_mean[j] + (1.0 - opt.momentum) * sum[j]);
      running_var[j] = static_cast<T>(opt.momentum * running_var[j] + (1.0 - opt.momentum) * unbiased);
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = running_mean[j];
      inv_std[j] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[j]) + opt.eps));
    }
  }

  Tensor<T> y(x.shape());
  Tensor<T> xhat;
  if (cache) xhat = Tensor<T>(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T xh = (x[i * c + j] - mean[j]) * inv_std[j];
      if (cache) xhat[i * c + j] = xh;
      y[i * c + j] = gamma[j] * xh + beta[j];
    }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

template <class T>
void batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& dy, Tensor<T>* dx,
                        Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const std::size_t c = gamma.size();
  const std::size_t m = dy.size() / c;
  require_shape(dy, cache.xhat.shape(), "batchnorm_backward: dy");
  std::vector<double> sum_dxhat(c, 0.0), sum_dxhat_xhat(c, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T g = dy[i * c + j];
      const T xh = cache.xhat[i * c + j];
      dgamma[j] += g * xh;
      dbeta[j] += g;
      sum_dxhat[j] += static_cast<double>(g * gamma[j]);
      sum_dxhat_xhat[j] += static_cast<double>(g * gamma[j] * xh);
    }
  if (!dx) return;
  *dx = Tensor<T>(dy.shape());
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double dxhat = static_cast<double>(dy[i * c + j] * gamma[j]);
      if (cache.mode == Mode::eval) {
        (*dx)[i * c + j] = static_cast<T>(dxhat * cache.inv_std[j]);
      } else {
        const double xh = cache.xhat[i * c + j];
        (*dx)[i * c + j] =
            static_cast<T>(cache.inv_std[j] * (dxhat - inv_m * sum_dxhat[j] - xh * inv_m * sum_dxhat_xhat[j]));
      }
    }
}

// ---------------------------------------------------------------- activations

template <class T>
Tensor<T> relu_forward(Tensor<T> x) {
  for (auto& v : x.vec()) v = v > T{0} ? v : T{0};
  return x;
}

/// Uses the forward output: the derivative is 1 where y > 0.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& y, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y[i] > T{0})) dy[i] = T{0};
  return dy;
}

template <class T>
Tensor<T> tanh_forward(Tensor<T> x) {
  for (auto& v : x.vec()) v = std::tanh(v);
  return x;
}

template <class T>
Tensor<T> tanh_backward(const Tensor<T>& y, Tensor<T> dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= T{1} - y[i] * y[i];
  return dy;
}

template <class T>
T sigmoid(T v) {
  return T{1} / (T{1} + std::exp(-v));
}

// ---------------------------------------------------------------- losses

/// Row-wise softmax of [m, K].
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_rank(logits, 2, "softmax");
  const std::size_t m = logits.dim(0), k = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* z = logits.data() + i * k;
    const T zmax = *std::max_element(z, z + k);
    T sum{};
    for (std::size_t j = 0; j < k; ++j) sum += (p[i * k + j] = std::exp(z[j] - zmax));
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= sum;
  }
  return p;
}

/// Mean negative log-likelihood over the rows; grad (if given) = (softmax - onehot) / m.
template <class T>
T softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels, Tensor<T>* grad = nullptr) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t m = logits.dim(0), k = logits.dim(1);
  if (labels.size() != m) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  if (grad) *grad = Tensor<T>(logits.shape());
  double loss = 0.0;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* z = logits.data() + i * k;
    if (labels[i] >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(z[j]) - zmax);
    const double lse = zmax + std::log(sum);
    loss += lse - static_cast<double>(z[labels[i]]);
    if (grad)
      for (std::size_t j = 0; j < k; ++j) {
        const double pj = std::exp(static_cast<double>(z[j]) - lse);
        (*grad)[i * k + j] = static_cast<T>((pj - (j == labels[i] ? 1.0 : 0.0)) * inv_m);
      }
  }
  return static_cast<T>(loss * inv_m);
}

/// Mean squared error over all elements.
template <class T>
T mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad = nullptr) {
  if (pred.shape() != target.shape()) throw std::invalid_argument("mse_loss: shape mismatch");
  if (grad) *grad = Tensor<T>(pred.shape());
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    loss += d * d;
    if (grad) (*grad)[i] = static_cast<T>(2.0 * d * inv_n);
  }
  return static_cast<T>(loss * inv_n);
}

}  // namespace xfire::nn
