#pragma once

// Streaming early warning: per-sample LSTM prediction followed by an all-ones
// smoothing buffer.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "xfire/models/lstm_model.hpp"
#include "xfire/nn/ops.hpp"
#include "xfire/traffic_sim.hpp"

namespace xfire {

inline constexpr std::size_t kDefaultBufferCapacity = 7;

class SmoothingBuffer {
 public:
  explicit SmoothingBuffer(std::size_t capacity = kDefaultBufferCapacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("SmoothingBuffer: capacity must be at least 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool full() const { return entries_.size() == capacity_; }

  /// Returns 1 iff the buffer is full and holds only ones.
  std::uint8_t push_and_decide(std::uint8_t prediction) {
    if (prediction > 1) throw std::invalid_argument("SmoothingBuffer: prediction must be 0 or 1");
    if (entries_.size() == capacity_) {
      zeros_ -= entries_.front() == 0;
      entries_.pop_front();
    }
    entries_.push_back(prediction);
    zeros_ += prediction == 0;
    return full() && zeros_ == 0 ? 1 : 0;
  }

  void reset() {
    entries_.clear();
    zeros_ = 0;
  }

 private:
  std::size_t capacity_;
  std::deque<std::uint8_t> entries_;
  std::size_t zeros_ = 0;
};

inline std::uint8_t push_and_decide(SmoothingBuffer& buffer, std::uint8_t prediction) {
  return buffer.push_and_decide(prediction);
}

/// Smoothed decisions for a whole trace of hard predictions.
inline std::vector<std::uint8_t> smooth_trace(std::span<const std::uint8_t> raw, std::size_t capacity) {
  SmoothingBuffer buffer(capacity);
  std::vector<std::uint8_t> out;
  out.reserve(raw.size());
  for (auto r : raw) out.push_back(buffer.push_and_decide(r));
  return out;
}

struct Decision {
  std::size_t t = 0;
  float p = 0.0f;  // class-1 probability
  std::uint8_t raw = 0;
  std::uint8_t smoothed = 0;
};

struct DetectionEvent {
  std::size_t instance_id = 0;
  std::size_t detect_index = 0;
  std::size_t latency = 0;  // detect_index - warmup_start + 1
};

/// Recurrent state plus smoothing buffer for one monitored stream.
class StreamState {
 public:
  StreamState(const models::LstmModel<float>& model, std::size_t capacity = kDefaultBufferCapacity)
      : model_(&model), lstm_(model.initial_state()), buffer_(capacity) {
    if (!model.norm) throw std::invalid_argument("StreamState: model has no normalization statistics");
  }

  std::size_t samples_seen() const { return seen_; }
  const SmoothingBuffer& buffer() const { return buffer_; }

  /// Feeds one raw (unnormalized) sample of n_servers utilization values.
  Decision push(std::span<const double> raw_sample, double threshold = 0.5) {
    if (raw_sample.size() != model_->arch().input)
      throw std::invalid_argument("StreamState: sample width does not match the model");
    const auto& ns = *model_->norm;
    std::vector<float> x(raw_sample.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(ns.apply(raw_sample[i]));
    return push_normalized(x, threshold);
  }

  Decision push_normalized(std::span<const float> x, double threshold = 0.5) {
    const auto logits = model_->step(x, lstm_);
    const auto probs = nn::softmax(nn::Tensor<float>({1, 2}, logits));
    Decision d;
    d.t = seen_++;
    d.p = probs[1];
    d.raw = static_cast<double>(d.p) >= threshold ? 1 : 0;
    d.smoothed = buffer_.push_and_decide(d.raw);
    last_logits_ = logits;
    return d;
  }

  const std::vector<float>& last_logits() const { return last_logits_; }

 private:
  const models::LstmModel<float>* model_;
  typename models::LstmModel<float>::StreamState lstm_;
  SmoothingBuffer buffer_;
  std::size_t seen_ = 0;
  std::vector<float> last_logits_;
};

struct StreamResult {
  std::vector<Decision> trace;
  std::optional<DetectionEvent> event;
  bool false_alarm = false;  // a smoothed 1 before warm-up start
};

/// First smoothed 1 at or after warmup_start becomes the event.
inline StreamResult scan_decisions(std::vector<Decision> trace, std::size_t warmup_start, std::size_t instance_id = 0) {
  StreamResult r;
  for (const auto& d : trace) {
    if (!d.smoothed) continue;
    if (d.t < warmup_start) {
      r.false_alarm = true;
    } else if (!r.event) {
      r.event = DetectionEvent{instance_id, d.t, d.t - warmup_start + 1};
    }
  }
  r.trace = std::move(trace);
  return r;
}

/// Feeds a raw instance sample by sample from a fresh state.
inline StreamResult stream_detect(const models::LstmModel<float>& model, const UtilizationInstance& inst,
                                  std::size_t warmup_start, std::size_t capacity = kDefaultBufferCapacity,
                                  std::size_t instance_id = 0) {
  if (inst.cols != model.arch().input) throw std::invalid_argument("stream_detect: instance width does not match the model");
  StreamState state(model, capacity);
  std::vector<Decision> trace;
  trace.reserve(inst.rows);
  for (std::size_t t = 0; t < inst.rows; ++t) trace.push_back(state.push(inst.row(t)));
  return scan_decisions(std::move(trace), warmup_start, instance_id);
}

/// Re-smooths an existing trace with another capacity.
inline StreamResult resmooth(const std::vector<Decision>& trace, std::size_t warmup_start, std::size_t capacity,
                             std::size_t instance_id = 0) {
  SmoothingBuffer buffer(capacity);
  auto copy = trace;
  for (auto& d : copy) d.smoothed = buffer.push_and_decide(d.raw);
  return scan_decisions(std::move(copy), warmup_start, instance_id);
}

}  // namespace xfire
