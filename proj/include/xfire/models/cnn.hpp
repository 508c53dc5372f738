#pragma once

// Two-stage CNN over a [rows x servers] utilization window:
//   temporal conv (t_kernel x 1) -> batchnorm -> relu
//   spatial conv (s_kernel x servers) -> batchnorm -> relu
//   flatten -> dense -> 2 logits
// Valid padding and stride 1 throughout.

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

struct CnnArch {
  std::size_t rows = 15;
  std::size_t servers = 80;
  std::size_t t_kernel = 9;
  std::size_t t_channels = 16;
  std::size_t s_kernel = 6;
  std::size_t s_channels = 20;
  std::size_t classes = 2;

  std::size_t temporal_rows() const { return rows - t_kernel + 1; }
  std::size_t spatial_rows() const { return temporal_rows() - s_kernel + 1; }
  std::size_t flat() const { return spatial_rows() * s_channels; }

  void validate() const {
    if (t_kernel == 0 || s_kernel == 0 || t_kernel > rows || s_kernel > rows - t_kernel + 1)
      throw std::invalid_argument("CnnArch: kernels do not fit the window");
  }
  bool operator==(const CnnArch&) const = default;
};

/// Intermediate shapes of one forward pass.
struct CnnTrace {
  nn::Shape input, temporal, spatial;
  std::size_t flat = 0;
  nn::Shape logits;
};

template <class T>
class CnnModel {
 public:
  struct Cache {
    nn::Tensor<T> x;
    nn::Tensor<T> a1;  // relu(bn(conv1))
    nn::Tensor<T> a2;  // relu(bn(conv2))
    nn::Tensor<T> flat;
    nn::BatchNormCache<T> bn1, bn2;
  };

  CnnModel() : CnnModel(CnnArch{}) {}
  explicit CnnModel(CnnArch arch) : arch_(arch) {
    arch_.validate();
    k1_ = {"cnn.temporal.kernel", nn::Tensor<T>({arch_.t_kernel, 1, 1, arch_.t_channels})};
    g1_ = {"cnn.temporal.bn.gamma", nn::Tensor<T>({arch_.t_channels}, T{1})};
    b1_ = {"cnn.temporal.bn.beta", nn::Tensor<T>({arch_.t_channels})};
    k2_ = {"cnn.spatial.kernel", nn::Tensor<T>({arch_.s_kernel, arch_.servers, arch_.t_channels, arch_.s_channels})};
    g2_ = {"cnn.spatial.bn.gamma", nn::Tensor<T>({arch_.s_channels}, T{1})};
    b2_ = {"cnn.spatial.bn.beta", nn::Tensor<T>({arch_.s_channels})};
    fw_ = {"cnn.fc.w", nn::Tensor<T>({arch_.flat(), arch_.classes})};
    fb_ = {"cnn.fc.b", nn::Tensor<T>({arch_.classes})};
    rm1_ = nn::Tensor<T>({arch_.t_channels});
    rv1_ = nn::Tensor<T>({arch_.t_channels}, T{1});
    rm2_ = nn::Tensor<T>({arch_.s_channels});
    rv2_ = nn::Tensor<T>({arch_.s_channels}, T{1});
  }

  const CnnArch& arch() const { return arch_; }

  /// Glorot-uniform conv kernels; the classifier starts at zero so the
  /// initial prediction is uniform.
  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0, Stream::init));
    nn::glorot_uniform(k1_.value, arch_.t_kernel, arch_.t_kernel * arch_.t_channels, rng);
    const std::size_t fan = arch_.s_kernel * arch_.servers;
    nn::glorot_uniform(k2_.value, fan * arch_.t_channels, fan * arch_.s_channels, rng);
    fw_.value.zero();
    fb_.value.zero();
  }

  std::vector<nn::Parameter<T>*> parameters() { return {&k1_, &g1_, &b1_, &k2_, &g2_, &b2_, &fw_, &fb_}; }

  /// x [n, rows, servers, 1] -> logits [n, classes]. Train mode updates the batchnorm running stats.
  nn::Tensor<T> forward(const nn::Tensor<T>& x, nn::Mode mode, Cache* cache = nullptr, CnnTrace* trace = nullptr) {
    nn::require_shape(x, {x.rank() == 4 ? x.dim(0) : 0, arch_.rows, arch_.servers, 1}, "CnnModel: input");
    auto z1 = nn::conv2d_forward(x, k1_.value);
    auto a1 = nn::relu_forward(
        nn::batchnorm_forward(z1, g1_.value, b1_.value, rm1_, rv1_, mode, cache ? &cache->bn1 : nullptr));
    auto z2 = nn::conv2d_forward(a1, k2_.value);
    auto a2 = nn::relu_forward(
        nn::batchnorm_forward(z2, g2_.value, b2_.value, rm2_, rv2_, mode, cache ? &cache->bn2 : nullptr));
    const std::size_t n = x.dim(0);
    auto flat = a2.reshaped({n, arch_.flat()});
    auto logits = nn::dense_forward(flat, fw_.value, fb_.value);
    if (trace) *trace = {x.shape(), a1.shape(), a2.shape(), flat.dim(1), logits.shape()};
    if (cache) {
      cache->x = x;
      cache->a1 = std::move(a1);
      cache->a2 = std::move(a2);
      cache->flat = std::move(flat);
    }
    return logits;
  }

  /// Inference without touching running statistics.
  nn::Tensor<T> logits(const nn::Tensor<T>& x, CnnTrace* trace = nullptr) const {
    return const_cast<CnnModel*>(this)->forward(x, nn::Mode::eval, nullptr, trace);
  }

  void backward(const Cache& cache, const nn::Tensor<T>& dlogits) {
    nn::Tensor<T> dflat;
    nn::dense_backward(cache.flat, fw_.value, dlogits, &dflat, fw_.grad, fb_.grad);
    auto da2 = nn::relu_backward(cache.a2, std::move(dflat).reshaped(cache.a2.shape()));
    nn::Tensor<T> dz2, da1, dz1;
    nn::batchnorm_backward(cache.bn2, g2_.value, da2, &dz2, g2_.grad, b2_.grad);
    nn::conv2d_backward(cache.a1, k2_.value, dz2, &da1, k2_.grad);
    da1 = nn::relu_backward(cache.a1, std::move(da1));
    nn::batchnorm_backward(cache.bn1, g1_.value, da1, &dz1, g1_.grad, b1_.grad);
    nn::conv2d_backward<T>(cache.x, k1_.value, dz1, nullptr, k1_.grad);
  }

  std::vector<NamedTensor> named_tensors() const
    requires std::is_same_v<T, float>
  {
    return {{k1_.name, k1_.value},
            {g1_.name, g1_.value},
            {b1_.name, b1_.value},
            {"cnn.temporal.bn.running_mean", rm1_},
            {"cnn.temporal.bn.running_var", rv1_},
            {k2_.name, k2_.value},
            {g2_.name, g2_.value},
            {b2_.name, b2_.value},
            {"cnn.spatial.bn.running_mean", rm2_},
            {"cnn.spatial.bn.running_var", rv2_},
            {fw_.name, fw_.value},
            {fb_.name, fb_.value}};
  }

  void load_tensors(const ModelCheckpoint& ck)
    requires std::is_same_v<T, float>
  {
    auto take = [&](const std::string& name, nn::Tensor<T>& dst) {
      const auto& t = ck.tensor(name);
      if (t.shape() != dst.shape())
        throw CheckpointError(CheckpointError::Kind::format, "tensor '" + name + "' has wrong shape");
      dst = t;
    };
    for (auto* p : parameters()) take(p->name, p->value);
    take("cnn.temporal.bn.running_mean", rm1_);
    take("cnn.temporal.bn.running_var", rv1_);
    take("cnn.spatial.bn.running_mean", rm2_);
    take("cnn.spatial.bn.running_var", rv2_);
  }

  std::optional<NormStats> norm;

 private:
  CnnArch arch_;
  nn::Parameter<T> k1_, g1_, b1_, k2_, g2_, b2_, fw_, fb_;
  nn::Tensor<T> rm1_, rv1_, rm2_, rv2_;
};

inline nn::Tensor<float> stack_cnn(std::span<const CnnWindow> windows, std::span<const std::size_t> idx,
                                   const CnnArch& arch) {
  nn::Tensor<float> x({idx.size(), arch.rows, arch.servers, 1});
  const std::size_t d = arch.rows * arch.servers;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& g = windows[idx[i]].grid;
    if (g.size() != d) throw std::invalid_argument("stack_cnn: window shape does not match architecture");
    std::copy(g.begin(), g.end(), x.data() + i * d);
  }
  return x;
}

/// Class-1 probability per window, eval-mode batchnorm.
inline std::vector<float> cnn_predict(const CnnModel<float>& model, std::span<const CnnWindow> windows,
                                      std::size_t batch = 256) {
  std::vector<float> out;
  out.reserve(windows.size());
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t b = 0; b < windows.size(); b += batch) {
    const auto len = std::min(batch, windows.size() - b);
    const auto p = nn::softmax(model.logits(stack_cnn(windows, std::span(idx).subspan(b, len), model.arch())));
    for (std::size_t i = 0; i < len; ++i) out.push_back(p[i * 2 + 1]);
  }
  return out;
}

struct CnnResult {
  CnnModel<float> model;
  TrainingCurve curve;
};

inline double cnn_mean_loss(const CnnModel<float>& model, std::span<const CnnWindow> windows) {
  std::vector<std::size_t> idx(windows.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double sum = 0.0;
  for (std::size_t b = 0; b < windows.size(); b += 256) {
    const auto len = std::min<std::size_t>(256, windows.size() - b);
    const auto sub = std::span(idx).subspan(b, len);
    std::vector<std::uint8_t> labels(len);
    for (std::size_t i = 0; i < len; ++i) labels[i] = windows[sub[i]].label;
    sum += static_cast<double>(nn::softmax_cross_entropy(model.logits(stack_cnn(windows, sub, model.arch())), labels)) *
           static_cast<double>(len);
  }
  return sum / static_cast<double>(windows.size());
}

inline CnnResult train_cnn(const std::vector<CnnWindow>& train, const std::vector<CnnWindow>& val,
                           const TrainConfig& config, CnnArch arch = {},
                           const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train.empty()) throw std::invalid_argument("train_cnn: empty training set");
  CnnModel<float> model(arch);
  model.init(config.seed);
  const auto& val_set = val.empty() ? train : val;
  auto step = [&](CnnModel<float>& m, std::span<const std::size_t> batch) -> double {
    typename CnnModel<float>::Cache cache;
    const auto logits = m.forward(stack_cnn(train, batch, m.arch()), nn::Mode::train, &cache);
    std::vector<std::uint8_t> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = train[batch[i]].label;
    nn::Tensor<float> grad;
    const double loss = nn::softmax_cross_entropy(logits, labels, &grad);
    m.backward(cache, grad);
    return loss;
  };
  auto validate = [&](CnnModel<float>& m) { return cnn_mean_loss(m, val_set); };
  auto curve = train_early_stopping<float, CnnModel<float>>(model, train.size(), config, step, validate, on_epoch);
  return {std::move(model), std::move(curve)};
}

}  // namespace xfire::models
