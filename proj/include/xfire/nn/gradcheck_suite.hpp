#pragma once

// Randomized finite-difference checks for every layer type and for reduced
// versions of the three models, all in 64-bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xfire/models/autoencoder.hpp"
#include "xfire/models/cnn.hpp"
#include "xfire/models/lstm_model.hpp"
#include "xfire/nn/gradcheck.hpp"
#include "xfire/nn/lstm.hpp"
#include "xfire/nn/ops.hpp"
#include "xfire/rng.hpp"

namespace xfire::nn {

struct LayerCheck {
  std::string layer;
  double tolerance = 0.0;
  std::size_t trials = 0;
  std::size_t checked = 0;  // gradient elements compared
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckSuiteOptions {
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  std::string corrupt;  // layer whose analytic gradient is doubled (negative control)
};

namespace detail {

using P = Parameter<double>;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(-scale, scale);
  return t;
}

/// Values bounded away from zero so that kinks stay outside the difference stencil.
inline Tensor<double> away_from_zero(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.vec()) v = rng.uniform(0.1, 1.0) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
  return t;
}

inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(lo, hi));
}

inline double project(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

/// Runs the check; with `corrupt` the analytic gradients are doubled after being computed.
inline GradCheckReport run(std::vector<P*> params, const std::function<double()>& loss,
                           const std::function<void()>& analytic, double tol, bool corrupt) {
  auto filled = [&] {
    for (auto* p : params) p->zero_grad();
    analytic();
    if (corrupt)
      for (auto* p : params)
        for (auto& g : p->grad.vec()) g *= 2.0;
  };
  GradCheckOptions opt;
  opt.tolerance = tol;
  return gradient_check(params, loss, filled, opt);
}

inline GradCheckReport dense_trial(Rng& rng, double tol, bool corrupt) {
  const auto n = dim(rng, 1, 4), din = dim(rng, 1, 6), dout = dim(rng, 1, 6);
  P x("x", random_tensor({n, din}, rng)), w("w", random_tensor({din, dout}, rng)), b("b", random_tensor({dout}, rng));
  const auto r = random_tensor({n, dout}, rng);
  return run({&x, &w, &b}, [&] { return project(dense_forward(x.value, w.value, b.value), r); },
             [&] { dense_backward(x.value, w.value, r, &x.grad, w.grad, b.grad); }, tol, corrupt);
}

inline GradCheckReport conv_trial(Rng& rng, double tol, bool corrupt) {
  // Half the trials are wide enough to take the transposed-kernel path.
  const bool wide = rng.uniform(0.0, 1.0) < 0.5;
  const auto n = dim(rng, 1, 2), h = dim(rng, 2, 4), ci = wide ? dim(rng, 3, 4) : dim(rng, 1, 3), co = dim(rng, 1, 3);
  const auto wd = wide ? dim(rng, 22, 26) : dim(rng, 2, 6);
  const auto kh = dim(rng, 1, h), kw = wide ? dim(rng, 22, wd) : dim(rng, 1, wd);
  P x("x", random_tensor({n, h, wd, ci}, rng)), k("k", random_tensor({kh, kw, ci, co}, rng));
  const auto r = random_tensor({n, h - kh + 1, wd - kw + 1, co}, rng);
  return run({&x, &k}, [&] { return project(conv2d_forward(x.value, k.value), r); },
             [&] { conv2d_backward(x.value, k.value, r, &x.grad, k.grad); }, tol, corrupt);
}

inline GradCheckReport batchnorm_trial(Rng& rng, double tol, bool corrupt) {
  const auto n = dim(rng, 2, 4), h = dim(rng, 1, 3), wd = dim(rng, 1, 3), c = dim(rng, 1, 3);
  P x("x", random_tensor({n, h, wd, c}, rng, 2.0)), g("gamma", random_tensor({c}, rng)), b("beta", random_tensor({c}, rng));
  const auto r = random_tensor({n, h, wd, c}, rng);
  Tensor<double> rm({c}), rv({c}, 1.0);
  return run(
      {&x, &g, &b},
      [&] { return project(batchnorm_forward(x.value, g.value, b.value, rm, rv, Mode::train), r); },
      [&] {
        BatchNormCache<double> cache;
        batchnorm_forward(x.value, g.value, b.value, rm, rv, Mode::train, &cache);
        batchnorm_backward(cache, g.value, r, &x.grad, g.grad, b.grad);
      },
      tol, corrupt);
}

inline GradCheckReport relu_trial(Rng& rng, double tol, bool corrupt) {
  const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
  P x("x", away_from_zero(s, rng));
  const auto r = random_tensor(s, rng);
  return run({&x}, [&] { return project(relu_forward(x.value), r); },
             [&] { x.grad = relu_backward(relu_forward(x.value), r); }, tol, corrupt);
}

inline GradCheckReport tanh_trial(Rng& rng, double tol, bool corrupt) {
  const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
  P x("x", random_tensor(s, rng, 2.0));
  const auto r = random_tensor(s, rng);
  return run({&x}, [&] { return project(tanh_forward(x.value), r); },
             [&] { x.grad = tanh_backward(tanh_forward(x.value), r); }, tol, corrupt);
}

inline GradCheckReport softmax_ce_trial(Rng& rng, double tol, bool corrupt) {
  const auto n = dim(rng, 1, 5);
  P z("logits", random_tensor({n, 2}, rng, 3.0));
  std::vector<std::uint8_t> labels(n);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  return run({&z}, [&] { return softmax_cross_entropy(z.value, labels); },
             [&] { softmax_cross_entropy(z.value, labels, &z.grad); }, tol, corrupt);
}

inline GradCheckReport mse_trial(Rng& rng, double tol, bool corrupt) {
  const Shape s{dim(rng, 1, 4), dim(rng, 1, 6)};
  P y("pred", random_tensor(s, rng));
  const auto target = random_tensor(s, rng);
  return run({&y}, [&] { return mse_loss(y.value, target); }, [&] { mse_loss(y.value, target, &y.grad); }, tol,
             corrupt);
}

inline GradCheckReport lstm_trial(Rng& rng, double tol, bool corrupt) {
  const auto n = dim(rng, 1, 2), steps = dim(rng, 1, 5), d = dim(rng, 1, 4), h = dim(rng, 1, 4);
  LstmParams<double> p("lstm", d, h);
  for (auto* q : p.parameters()) q->value = random_tensor(q->value.shape(), rng, 0.8);
  P x("x", random_tensor({n, steps, d}, rng));
  const auto r = random_tensor({n, steps, h}, rng);
  return run({&x, &p.wx, &p.wh, &p.b}, [&] { return project(lstm_forward(x.value, p), r); },
             [&] {
               LstmCache<double> cache;
               lstm_forward(x.value, p, &cache);
               lstm_backward(cache, p, r, &x.grad);
             },
             tol, corrupt);
}

/// Reduced CNN (window 15x8, filters 9x1x2 and 6x8x3). Inputs whose pre-ReLU
/// activations come within 1e-3 of zero are redrawn.
inline GradCheckReport cnn_trial(Rng& rng, double tol, bool corrupt) {
  const models::CnnArch arch{15, 8, 9, 2, 6, 3, 2};
  models::CnnModel<double> m(arch);
  const auto n = dim(rng, 2, 4);
  Tensor<double> x;
  std::vector<std::uint8_t> labels(n);
  for (;;) {
    m.init(rng.next_u64());
    for (auto* p : m.parameters()) p->value = random_tensor(p->value.shape(), rng, 0.8);
    x = random_tensor({n, arch.rows, arch.servers, 1}, rng);
    typename models::CnnModel<double>::Cache cache;
    m.forward(x, Mode::train, &cache);
    auto params = m.parameters();
    double closest = 1e9;
    auto scan = [&](const BatchNormCache<double>& bn, const P& g, const P& b) {
      const std::size_t c = g.value.size();
      for (std::size_t i = 0; i < bn.xhat.size(); ++i)
        closest = std::min(closest, std::abs(g.value[i % c] * bn.xhat[i] + b.value[i % c]));
    };
    scan(cache.bn1, *params[1], *params[2]);
    scan(cache.bn2, *params[4], *params[5]);
    if (closest > 1e-3) break;
  }
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  return run(m.parameters(), [&] { return softmax_cross_entropy(m.forward(x, Mode::train), labels); },
             [&] {
               typename models::CnnModel<double>::Cache cache;
               Tensor<double> g;
               softmax_cross_entropy(m.forward(x, Mode::train, &cache), labels, &g);
               m.backward(cache, g);
             },
             tol, corrupt);
}

inline GradCheckReport lstm_model_trial(Rng& rng, double tol, bool corrupt) {
  models::LstmModel<double> m(models::LstmArch{3, 4, 3, 2});
  for (auto* p : m.parameters()) p->value = random_tensor(p->value.shape(), rng, 0.8);
  const auto n = dim(rng, 1, 2), steps = dim(rng, 1, 6);
  const auto x = random_tensor({n, steps, 3}, rng);
  std::vector<std::uint8_t> labels(n * steps);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
  return run(m.parameters(), [&] { return m.loss(x, labels, false); }, [&] { m.loss(x, labels, true); }, tol, corrupt);
}

inline GradCheckReport autoencoder_trial(Rng& rng, double tol, bool corrupt) {
  models::AutoencoderArch arch;
  arch.widths = {6, 5, 4, 5, 6};
  models::Autoencoder<double> m(arch);
  for (auto* p : m.parameters()) p->value = random_tensor(p->value.shape(), rng, 0.8);
  const auto x = random_tensor({dim(rng, 1, 4), 6}, rng);
  return run(m.parameters(), [&] { return m.loss(x, false); }, [&] { m.loss(x, true); }, tol, corrupt);
}

}  // namespace detail

struct LayerSpec {
  const char* name;
  double tolerance;
  GradCheckReport (*trial)(Rng&, double, bool);
};

/// Affine layers and the fused softmax loss are held to 1e-6, the rest to 1e-4.
inline const std::vector<LayerSpec>& gradcheck_layers() {
  static const std::vector<LayerSpec> layers{
      {"dense", 1e-6, detail::dense_trial},
      {"conv2d", 1e-6, detail::conv_trial},
      {"batchnorm", 1e-4, detail::batchnorm_trial},
      {"relu", 1e-4, detail::relu_trial},
      {"tanh", 1e-4, detail::tanh_trial},
      {"softmax_ce", 1e-6, detail::softmax_ce_trial},
      {"mse", 1e-4, detail::mse_trial},
      {"lstm", 1e-4, detail::lstm_trial},
      {"cnn_model", 1e-4, detail::cnn_trial},
      {"lstm_model", 1e-4, detail::lstm_model_trial},
      {"autoencoder", 1e-4, detail::autoencoder_trial},
  };
  return layers;
}

inline std::vector<LayerCheck> run_gradcheck_suite(const GradCheckSuiteOptions& opt = {}) {
  std::vector<LayerCheck> out;
  for (std::size_t li = 0; li < gradcheck_layers().size(); ++li) {
    const auto& spec = gradcheck_layers()[li];
    Rng rng(derive_seed(opt.seed, li, Stream::init));
    LayerCheck c{spec.name, spec.tolerance, opt.trials, 0, 0.0, true};
    for (std::size_t t = 0; t < opt.trials; ++t) {
      const auto r = spec.trial(rng, spec.tolerance, opt.corrupt == spec.name);
      c.checked += r.checked;
      c.max_rel_error = std::max(c.max_rel_error, r.max_rel_error);
      c.passed = c.passed && r.passed;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace xfire::nn
