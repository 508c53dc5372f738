#pragma once

// Model-specific example extraction and the instance-level train/val/test split.
//
// All window builders expect an already-normalized instance and copy values
// into 32-bit storage.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xfire/rng.hpp"
#include "xfire/traffic_sim.hpp"

namespace xfire {

inline constexpr std::size_t kCnnWindowRows = 15;
inline constexpr std::size_t kCnnMinWarmupRows = 5;
inline constexpr std::size_t kAeWindowRows = 5;
inline constexpr std::size_t kAeMinWarmupRows = 3;
inline constexpr std::size_t kLstmSequenceLength = 64;

/// Number of warm-up samples in labels[begin, begin + len).
inline std::size_t count_warmup(std::span<const std::uint8_t> labels, std::size_t begin, std::size_t len) {
  std::size_t n = 0;
  for (std::size_t t = begin; t < begin + len; ++t) n += labels[t] != 0;
  return n;
}

inline bool cnn_window_label(std::span<const std::uint8_t> labels, std::size_t begin) {
  return count_warmup(labels, begin, kCnnWindowRows) >= kCnnMinWarmupRows;
}

inline bool ae_window_label(std::span<const std::uint8_t> labels, std::size_t begin) {
  return count_warmup(labels, begin, kAeWindowRows) >= kAeMinWarmupRows;
}

struct CnnWindow {
  std::vector<float> grid;  // [15][cols], time-major
  bool label = false;
  std::size_t instance_id = 0;
  std::size_t offset = 0;
};

struct AeWindow {
  std::vector<float> vector;  // element cols*j + k = sample (offset + j), server k
  bool label = false;
  std::size_t instance_id = 0;
  std::size_t offset = 0;
};

struct SequenceExample {
  std::vector<float> steps;  // [64][cols]
  std::vector<std::uint8_t> step_labels;
  std::size_t instance_id = 0;
  std::size_t offset = 0;
};

namespace detail {

inline std::vector<std::size_t> window_offsets(std::size_t rows, std::size_t len, std::size_t stride,
                                               const char* who) {
  if (stride == 0) throw std::invalid_argument(std::string(who) + ": stride must be positive");
  if (rows < len)
    throw std::invalid_argument(std::string(who) + ": instance has " + std::to_string(rows) +
                                " rows, need at least " + std::to_string(len));
  std::vector<std::size_t> offsets;
  for (std::size_t t0 = 0; t0 + len <= rows; t0 += stride) offsets.push_back(t0);
  return offsets;
}

inline std::vector<float> copy_rows(const UtilizationInstance& inst, std::size_t begin, std::size_t len) {
  const auto first = inst.values.begin() + static_cast<std::ptrdiff_t>(begin * inst.cols);
  return {first, first + static_cast<std::ptrdiff_t>(len * inst.cols)};
}

}  // namespace detail

inline std::vector<CnnWindow> make_cnn_windows(const UtilizationInstance& inst, std::size_t stride,
                                               std::size_t instance_id = 0) {
  std::vector<CnnWindow> out;
  for (std::size_t t0 : detail::window_offsets(inst.rows, kCnnWindowRows, stride, "make_cnn_windows"))
    out.push_back({detail::copy_rows(inst, t0, kCnnWindowRows), cnn_window_label(inst.labels, t0), instance_id, t0});
  return out;
}

/// Stride-1 windows by default; the trainer may subsample with a larger stride.
inline std::vector<AeWindow> make_ae_windows(const UtilizationInstance& inst, std::size_t instance_id = 0,
                                             std::size_t stride = 1) {
  std::vector<AeWindow> out;
  for (std::size_t t0 : detail::window_offsets(inst.rows, kAeWindowRows, stride, "make_ae_windows"))
    out.push_back({detail::copy_rows(inst, t0, kAeWindowRows), ae_window_label(inst.labels, t0), instance_id, t0});
  return out;
}

inline std::vector<SequenceExample> make_lstm_sequences(const UtilizationInstance& inst, std::size_t stride,
                                                        std::size_t instance_id = 0) {
  std::vector<SequenceExample> out;
  for (std::size_t t0 : detail::window_offsets(inst.rows, kLstmSequenceLength, stride, "make_lstm_sequences")) {
    SequenceExample ex;
    ex.steps = detail::copy_rows(inst, t0, kLstmSequenceLength);
    ex.step_labels.assign(inst.labels.begin() + static_cast<std::ptrdiff_t>(t0),
                          inst.labels.begin() + static_cast<std::ptrdiff_t>(t0 + kLstmSequenceLength));
    ex.instance_id = instance_id;
    ex.offset = t0;
    out.push_back(std::move(ex));
  }
  return out;
}

enum class Partition : std::uint8_t { train = 0, val = 1, test = 2 };

inline const char* to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::val: return "val";
    case Partition::test: return "test";
  }
  return "?";
}

inline Partition partition_from_string(const std::string& s) {
  if (s == "train") return Partition::train;
  if (s == "val") return Partition::val;
  if (s == "test") return Partition::test;
  throw std::invalid_argument("unknown partition '" + s + "'");
}

struct SplitSpec {
  double train_fraction = 0.7;
  double val_fraction = 0.2;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;
  std::vector<Partition> assignment;  // instance index -> partition
  std::vector<std::size_t> train, val, test;

  Partition partition_of(std::size_t instance) const { return assignment.at(instance); }
  const std::vector<std::size_t>& indices(Partition p) const {
    switch (p) {
      case Partition::train: return train;
      case Partition::val: return val;
      default: return test;
    }
  }
  bool operator==(const SplitSpec&) const = default;
};

/// Seeded permutation; the first 70% train, the next 20% validation, the rest test.
/// Each partition's index list is sorted ascending.
inline SplitSpec split_dataset(std::size_t n_instances, std::uint64_t seed) {
  if (n_instances < 10) throw std::invalid_argument("split_dataset: need at least 10 instances");
  std::vector<std::size_t> perm(n_instances);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0, Stream::split));
  rng.shuffle(std::span<std::size_t>(perm));

  SplitSpec spec;
  spec.seed = seed;
  const std::size_t n_train = n_instances * 7 / 10;
  const std::size_t n_val = n_instances * 2 / 10;
  spec.assignment.assign(n_instances, Partition::test);
  for (std::size_t i = 0; i < n_instances; ++i) {
    const Partition p = i < n_train ? Partition::train : i < n_train + n_val ? Partition::val : Partition::test;
    spec.assignment[perm[i]] = p;
  }
  for (std::size_t i = 0; i < n_instances; ++i) {
    switch (spec.assignment[i]) {
      case Partition::train: spec.train.push_back(i); break;
      case Partition::val: spec.val.push_back(i); break;
      case Partition::test: spec.test.push_back(i); break;
    }
  }
  return spec;
}

}  // namespace xfire
