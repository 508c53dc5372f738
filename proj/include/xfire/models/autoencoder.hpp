#pragma once

// Dense autoencoder 400-390-370-390-400 with tanh hidden layers and a linear
// reconstruction layer. The 370-wide middle layer is the feature bottleneck.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "xfire/dataset.hpp"
#include "xfire/models/checkpoint.hpp"
#include "xfire/models/training.hpp"
#include "xfire/nn/ops.hpp"

namespace xfire::models {

struct AutoencoderArch {
  std::vector<std::size_t> widths{400, 390, 370, 390, 400};

  std::size_t input() const { return widths.front(); }
  std::size_t bottleneck_layer() const { return widths.size() / 2 - 1; }  // index of the encoder's last layer
  std::size_t bottleneck() const { return widths[widths.size() / 2]; }
};

template <class T>
class Autoencoder {
 public:
  struct Cache {
    std::vector<nn::Tensor<T>> acts;  // acts[0] = input, acts[i+1] = output of layer i
  };

  Autoencoder() : Autoencoder(AutoencoderArch{}) {}
  explicit Autoencoder(AutoencoderArch arch) : arch_(std::move(arch)) {
    if (arch_.widths.size() < 3 || arch_.widths.size() % 2 == 0 || arch_.widths.front() != arch_.widths.back())
      throw std::invalid_argument("Autoencoder: widths must be symmetric with an odd count");
    for (std::size_t i = 0; i + 1 < arch_.widths.size(); ++i) {
      weights_.emplace_back("ae.dense" + std::to_string(i) + ".w", nn::Tensor<T>({arch_.widths[i], arch_.widths[i + 1]}));
      biases_.emplace_back("ae.dense" + std::to_string(i) + ".b", nn::Tensor<T>({arch_.widths[i + 1]}));
    }
  }

  const AutoencoderArch& arch() const { return arch_; }
  std::size_t layers() const { return weights_.size(); }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0, Stream::init));
    for (std::size_t i = 0; i < layers(); ++i) {
      nn::glorot_uniform(weights_[i].value, arch_.widths[i], arch_.widths[i + 1], rng);
      biases_[i].value.zero();
    }
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    for (std::size_t i = 0; i < layers(); ++i) {
      out.push_back(&weights_[i]);
      out.push_back(&biases_[i]);
    }
    return out;
  }

  /// Reconstruction of x [n, 400].
  nn::Tensor<T> forward(const nn::Tensor<T>& x, Cache* cache = nullptr) const {
    nn::require_rank(x, 2, "Autoencoder: input");
    if (x.dim(1) != arch_.input()) throw std::invalid_argument("Autoencoder: input width mismatch");
    nn::Tensor<T> a = x;
    if (cache) cache->acts = {x};
    for (std::size_t i = 0; i < layers(); ++i) {
      a = nn::dense_forward(a, weights_[i].value, biases_[i].value);
      if (i + 1 < layers()) a = nn::tanh_forward(std::move(a));
      if (cache) cache->acts.push_back(a);
    }
    return a;
  }

  /// Bottleneck activations [n, 370].
  nn::Tensor<T> encode(const nn::Tensor<T>& x) const {
    nn::Tensor<T> a = x;
    for (std::size_t i = 0; i <= arch_.bottleneck_layer(); ++i)
      a = nn::tanh_forward(nn::dense_forward(a, weights_[i].value, biases_[i].value));
    return a;
  }

  void backward(const Cache& cache, nn::Tensor<T> dy) {
    for (std::size_t i = layers(); i-- > 0;) {
      if (i + 1 < layers()) dy = nn::tanh_backward(cache.acts[i + 1], std::move(dy));
      nn::Tensor<T> dx;
      nn::dense_backward(cache.acts[i], weights_[i].value, dy, i > 0 ? &dx : nullptr, weights_[i].grad,
                         biases_[i].grad);
      dy = std::move(dx);
    }
  }

  /// Mean squared reconstruction error of a batch; fills gradients when `train`.
  T loss(const nn::Tensor<T>& x, bool train) {
    Cache cache;
    const auto y = forward(x, train ? &cache : nullptr);
    nn::Tensor<T> grad;
    const T l = nn::mse_loss(y, x, train ? &grad : nullptr);
    if (train) backward(cache, std::move(grad));
    return l;
  }

  std::vector<NamedTensor> named_tensors() const
    requires std::is_same_v<T, float>
  {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < layers(); ++i) {
      out.push_back({weights_[i].name, weights_[i].value});
      out.push_back({biases_[i].name, biases_[i].value});
    }
    return out;
  }

  void load_tensors(const ModelCheckpoint& ck)
    requires std::is_same_v<T, float>
  {
    for (std::size_t i = 0; i < layers(); ++i) {
      for (auto* p : {&weights_[i], &biases_[i]}) {
        const auto& t = ck.tensor(p->name);
        if (t.shape() != p->value.shape())
          throw CheckpointError(CheckpointError::Kind::format, "tensor '" + p->name + "' has wrong shape");
        p->value = t;
        p->grad = nn::Tensor<T>(t.shape());
      }
    }
  }

  std::optional<NormStats> norm;

 private:
  AutoencoderArch arch_;
  std::vector<nn::Parameter<T>> weights_;
  std::vector<nn::Parameter<T>> biases_;
};

/// Stacks AE windows into [n, 400].
inline nn::Tensor<float> stack_ae(std::span<const AeWindow> windows, std::span<const std::size_t> idx) {
  if (windows.empty() || idx.empty()) throw std::invalid_argument("stack_ae: empty batch");
  const std::size_t d = windows[idx[0]].vector.size();
  nn::Tensor<float> x({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& v = windows[idx[i]].vector;
    if (v.size() != d) throw std::invalid_argument("stack_ae: ragged windows");
    std::copy(v.begin(), v.end(), x.data() + i * d);
  }
  return x;
}

struct AutoencoderResult {
  Autoencoder<float> model;
  TrainingCurve curve;
};

/// Unsupervised: trains on every window regardless of label.
inline AutoencoderResult train_autoencoder(const std::vector<AeWindow>& train, const std::vector<AeWindow>& val,
                                           const TrainConfig& config, AutoencoderArch arch = {},
                                           const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train.empty()) throw std::invalid_argument("train_autoencoder: empty training set");
  Autoencoder<float> model(arch);
  model.init(config.seed);
  const auto& val_set = val.empty() ? train : val;
  std::vector<std::size_t> val_idx(val_set.size());
  std::iota(val_idx.begin(), val_idx.end(), std::size_t{0});

  auto step = [&](Autoencoder<float>& m, std::span<const std::size_t> batch) -> double {
    return m.loss(stack_ae(train, batch), true);
  };
  auto validate = [&](Autoencoder<float>& m) -> double {
    double sum = 0.0;
    for (std::size_t b = 0; b < val_idx.size(); b += 256) {
      const auto len = std::min<std::size_t>(256, val_idx.size() - b);
      sum += static_cast<double>(m.loss(stack_ae(val_set, std::span(val_idx).subspan(b, len)), false)) *
             static_cast<double>(len);
    }
    return sum / static_cast<double>(val_idx.size());
  };
  auto curve = train_early_stopping<float, Autoencoder<float>>(model, train.size(), config, step, validate, on_epoch);
  return {std::move(model), std::move(curve)};
}

/// Bottleneck activations followed by the window's mean squared reconstruction error.
inline std::vector<std::vector<float>> ae_features(const Autoencoder<float>& model, std::span<const AeWindow> windows) {
  std::vector<std::vector<float>> out;
  out.reserve(windows.size());
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t b = 0; b < windows.size(); b += 256) {
    const auto len = std::min<std::size_t>(256, windows.size() - b);
    const auto x = stack_ae(windows, std::span(idx).subspan(b, len));
    const auto code = model.encode(x);
    const auto recon = model.forward(x);
    const std::size_t d = x.dim(1), k = code.dim(1);
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<float> f(code.data() + i * k, code.data() + (i + 1) * k);
      double err = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(recon[i * d + j]) - static_cast<double>(x[i * d + j]);
        err += diff * diff;
      }
      f.push_back(static_cast<float>(err / static_cast<double>(d)));
      out.push_back(std::move(f));
    }
  }
  return out;
}

inline std::vector<float> ae_features(const Autoencoder<float>& model, const AeWindow& window) {
  return ae_features(model, std::span(&window, 1)).front();
}

}  // namespace xfire::models
