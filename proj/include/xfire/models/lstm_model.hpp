#pragma once

// Two stacked LSTM layers (80 -> 64 -> 64) followed by a per-step dense
// classifier (64 -> 2).

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
#include "xfire/nn/lstm.hpp"
#include "xfire/nn/ops.hpp"

namespace xfire::models {

struct LstmArch {
  std::size_t input = 80;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 64;
  std::size_t classes = 2;
  bool operator==(const LstmArch&) const = default;
};

template <class T>
class LstmModel {
 public:
  struct Cache {
    nn::LstmCache<T> l1, l2;
    nn::Tensor<T> h2_flat;  // [n*T, hidden2]
  };

  /// Recurrent state of both layers for streaming inference.
  struct StreamState {
    nn::LstmCellState<T> s1, s2;
  };

  LstmModel() : LstmModel(LstmArch{}) {}
  explicit LstmModel(LstmArch arch)
      : arch_(arch),
        l1_("lstm.layer1", arch.input, arch.hidden1),
        l2_("lstm.layer2", arch.hidden1, arch.hidden2),
        fw_("lstm.fc.w", nn::Tensor<T>({arch.hidden2, arch.classes})),
        fb_("lstm.fc.b", nn::Tensor<T>({arch.classes})) {}

  const LstmArch& arch() const { return arch_; }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0, Stream::init));
    l1_.init(rng);
    l2_.init(rng);
    nn::glorot_uniform(fw_.value, arch_.hidden2, arch_.classes, rng);
    fb_.value.zero();
  }

  std::vector<nn::Parameter<T>*> parameters() {
    return {&l1_.wx, &l1_.wh, &l1_.b, &l2_.wx, &l2_.wh, &l2_.b, &fw_, &fb_};
  }

  /// x [n, T, input] -> logits [n*T, classes], rows ordered (sequence, step).
  nn::Tensor<T> forward(const nn::Tensor<T>& x, Cache* cache = nullptr) const {
    nn::require_rank(x, 3, "LstmModel: input");
    if (x.dim(2) != arch_.input) throw std::invalid_argument("LstmModel: input width mismatch");
    const std::size_t n = x.dim(0), steps = x.dim(1);
    auto h1 = nn::lstm_forward(x, l1_, cache ? &cache->l1 : nullptr);
    auto h2 = nn::lstm_forward(h1, l2_, cache ? &cache->l2 : nullptr);
    auto flat = std::move(h2).reshaped({n * steps, arch_.hidden2});
    auto logits = nn::dense_forward(flat, fw_.value, fb_.value);
    if (cache) cache->h2_flat = std::move(flat);
    return logits;
  }

  void backward(const Cache& cache, const nn::Tensor<T>& dlogits) {
    const std::size_t n = cache.l1.x.dim(0), steps = cache.l1.x.dim(1);
    nn::Tensor<T> dh2;
    nn::dense_backward(cache.h2_flat, fw_.value, dlogits, &dh2, fw_.grad, fb_.grad);
    nn::Tensor<T> dh1;
    nn::lstm_backward(cache.l2, l2_, std::move(dh2).reshaped({n, steps, arch_.hidden2}), &dh1);
    nn::lstm_backward<T>(cache.l1, l1_, dh1, nullptr);
  }

  /// Mean per-step cross-entropy; labels are ordered like the logits rows.
  T loss(const nn::Tensor<T>& x, std::span<const std::uint8_t> labels, bool train) {
    Cache cache;
    const auto logits = forward(x, train ? &cache : nullptr);
    nn::Tensor<T> grad;
    const T l = nn::softmax_cross_entropy(logits, labels, train ? &grad : nullptr);
    if (train) backward(cache, grad);
    return l;
  }

  StreamState initial_state() const { return {nn::LstmCellState<T>(arch_.hidden1), nn::LstmCellState<T>(arch_.hidden2)}; }

  /// One streaming step; returns the step's logits. Bitwise identical to the
  /// corresponding row of forward() over the same prefix.
  std::vector<T> step(std::span<const T> x, StreamState& state) const {
    state.s1 = nn::lstm_step(x, state.s1, l1_);
    state.s2 = nn::lstm_step(std::span<const T>(state.s1.h), state.s2, l2_);
    const auto logits =
        nn::dense_forward(nn::Tensor<T>({1, arch_.hidden2}, state.s2.h), fw_.value, fb_.value);
    return logits.vec();
  }

  std::vector<NamedTensor> named_tensors() const
    requires std::is_same_v<T, float>
  {
    std::vector<NamedTensor> out;
    for (const auto* p : {&l1_.wx, &l1_.wh, &l1_.b, &l2_.wx, &l2_.wh, &l2_.b, &fw_, &fb_})
      out.push_back({p->name, p->value});
    return out;
  }

  void load_tensors(const ModelCheckpoint& ck)
    requires std::is_same_v<T, float>
  {
    for (auto* p : parameters()) {
      const auto& t = ck.tensor(p->name);
      if (t.shape() != p->value.shape())
        throw CheckpointError(CheckpointError::Kind::format, "tensor '" + p->name + "' has wrong shape");
      p->value = t;
      p->grad = nn::Tensor<T>(t.shape());
    }
  }

  nn::LstmParams<T>& layer1() { return l1_; }
  nn::LstmParams<T>& layer2() { return l2_; }

  std::optional<NormStats> norm;

 private:
  LstmArch arch_;
  nn::LstmParams<T> l1_, l2_;
  nn::Parameter<T> fw_, fb_;
};

/// Stacks sequences into [n, 64, width] and their labels in row order.
inline nn::Tensor<float> stack_sequences(std::span<const SequenceExample> seqs, std::span<const std::size_t> idx,
                                         std::size_t width, std::vector<std::uint8_t>* labels = nullptr) {
  if (idx.empty()) throw std::invalid_argument("stack_sequences: empty batch");
  const std::size_t steps = seqs[idx[0]].step_labels.size();
  nn::Tensor<float> x({idx.size(), steps, width});
  if (labels) labels->clear();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& s = seqs[idx[i]];
    if (s.steps.size() != steps * width) throw std::invalid_argument("stack_sequences: sequence shape mismatch");
    std::copy(s.steps.begin(), s.steps.end(), x.data() + i * steps * width);
    if (labels) labels->insert(labels->end(), s.step_labels.begin(), s.step_labels.end());
  }
  return x;
}

struct LstmResult {
  LstmModel<float> model;
  TrainingCurve curve;
};

inline double lstm_mean_loss(LstmModel<float>& model, std::span<const SequenceExample> seqs) {
  std::vector<std::size_t> idx(seqs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double sum = 0.0;
  std::vector<std::uint8_t> labels;
  for (std::size_t b = 0; b < seqs.size(); b += 64) {
    const auto len = std::min<std::size_t>(64, seqs.size() - b);
    const auto x = stack_sequences(seqs, std::span(idx).subspan(b, len), model.arch().input, &labels);
    sum += static_cast<double>(model.loss(x, labels, false)) * static_cast<double>(len);
  }
  return sum / static_cast<double>(seqs.size());
}

inline LstmResult train_lstm(const std::vector<SequenceExample>& train, const std::vector<SequenceExample>& val,
                             const TrainConfig& config, LstmArch arch = {},
                             const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train.empty()) throw std::invalid_argument("train_lstm: empty training set");
  LstmModel<float> model(arch);
  model.init(config.seed);
  const auto& val_set = val.empty() ? train : val;
  auto step = [&](LstmModel<float>& m, std::span<const std::size_t> batch) -> double {
    std::vector<std::uint8_t> labels;
    const auto x = stack_sequences(train, batch, m.arch().input, &labels);
    return m.loss(x, labels, true);
  };
  auto validate = [&](LstmModel<float>& m) { return lstm_mean_loss(m, val_set); };
  auto curve = train_early_stopping<float, LstmModel<float>>(model, train.size(), config, step, validate, on_epoch);
  return {std::move(model), std::move(curve)};
}

}  // namespace xfire::models
