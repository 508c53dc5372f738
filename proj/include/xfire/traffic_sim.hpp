#pragma once

// Synthetic decoy-server link utilization with ramped Crossfire attack traffic.
//
// Rates are in kilobits per second; one row per 1-minute sample, one column
// per decoy server. Every function here is a pure function of its inputs and
// seeds.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "xfire/rng.hpp"

namespace xfire {

struct ServerProfile {
  double mean_rate = 0.0;  // kbps
  double std_rate = 0.0;   // kbps
};

struct AttackProfile {
  std::size_t bots_per_server = 0;
  std::vector<double> bot_rates;  // kbps, one per bot
  double peak_rate = 0.0;         // sum of bot_rates
};

struct ScenarioConfig {
  std::size_t n_servers = 80;
  std::size_t n_attacked = 80;
  std::size_t pre_len = 45;
  std::size_t warmup_len = 30;
  std::size_t plateau_len = 45;
  std::size_t n_instances = 6000;
  std::uint64_t master_seed = 20180901;
  std::size_t bots_min = 5;
  std::size_t bots_max = 20;
  double ramp_jitter = 0.25;

  // Generator ranges.
  double mean_rate_min = 100.0;
  double mean_rate_max = 150.0;
  double std_rate_min = 0.45;
  double std_rate_max = 2.45;
  double bot_rate_min = 0.43;
  double bot_rate_max = 2.2;

  std::size_t length() const { return pre_len + warmup_len + plateau_len; }
  std::size_t warmup_begin() const { return pre_len; }
  std::size_t warmup_end() const { return pre_len + warmup_len; }

  /// "80/80", "70/80", ...
  std::string condition_tag() const {
    return std::to_string(n_attacked) + "/" + std::to_string(n_servers);
  }

  void validate() const {
    if (n_servers == 0) throw std::invalid_argument("ScenarioConfig: n_servers must be positive");
    if (n_attacked > n_servers)
      throw std::invalid_argument("ScenarioConfig: n_attacked exceeds n_servers");
    if (warmup_len < 1) throw std::invalid_argument("ScenarioConfig: warmup_len must be >= 1");
    if (bots_min < 1 || bots_max < bots_min)
      throw std::invalid_argument("ScenarioConfig: invalid bots_min/bots_max");
    if (!(ramp_jitter >= 0.0 && ramp_jitter < 1.0))
      throw std::invalid_argument("ScenarioConfig: ramp_jitter must lie in [0, 1)");
    if (!(mean_rate_min <= mean_rate_max) || !(std_rate_min > 0.0 && std_rate_min <= std_rate_max) ||
        !(bot_rate_min >= 0.0 && bot_rate_min <= bot_rate_max))
      throw std::invalid_argument("ScenarioConfig: invalid rate ranges");
  }
};

/// One attack episode. values is row-major [rows][cols].
struct UtilizationInstance {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> labels;  // 1 during warm-up
  std::vector<std::size_t> attacked_set;  // sorted server indices
  std::uint64_t instance_seed = 0;

  double at(std::size_t t, std::size_t s) const { return values[t * cols + s]; }
  double& at(std::size_t t, std::size_t s) { return values[t * cols + s]; }
  std::span<const double> row(std::size_t t) const { return {values.data() + t * cols, cols}; }
  std::vector<double> column(std::size_t s) const {
    std::vector<double> out(rows);
    for (std::size_t t = 0; t < rows; ++t) out[t] = at(t, s);
    return out;
  }

  bool operator==(const UtilizationInstance&) const = default;
};

struct NormStats {
  double global_min = 0.0;
  double global_max = 1.0;

  void validate() const {
    if (!(global_max > global_min)) throw std::invalid_argument("NormStats: global_max must exceed global_min");
  }
  double apply(double v) const { return (v - global_min) / (global_max - global_min); }
  double invert(double v) const { return v * (global_max - global_min) + global_min; }
  bool operator==(const NormStats&) const = default;
};

inline std::vector<ServerProfile> draw_server_profiles(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<ServerProfile> profiles(config.n_servers);
  for (auto& p : profiles) {
    p.mean_rate = rng.uniform(config.mean_rate_min, config.mean_rate_max);
    p.std_rate = rng.uniform(config.std_rate_min, config.std_rate_max);
  }
  return profiles;
}

/// n draws from Normal(mean_rate, std_rate), clamped at 0 from below.
inline std::vector<double> sample_background(const ServerProfile& profile, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = std::max(0.0, rng.normal(profile.mean_rate, profile.std_rate));
  return out;
}

inline AttackProfile draw_attack_profile(const ScenarioConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  AttackProfile a;
  a.bots_per_server = static_cast<std::size_t>(rng.uniform_int(config.bots_min, config.bots_max));
  a.bot_rates.resize(a.bots_per_server);
  for (auto& r : a.bot_rates) {
    r = rng.uniform(config.bot_rate_min, config.bot_rate_max);
    // uniform() is half-open; the clamp only matters for degenerate ranges.
    r = std::clamp(r, config.bot_rate_min, config.bot_rate_max);
  }
  for (double r : a.bot_rates) a.peak_rate += r;
  return a;
}

/// Jittered linear ramp reaching peak_rate exactly at the last warm-up sample.
inline std::vector<double> attack_ramp(const AttackProfile& profile, std::size_t warmup_len, double jitter,
                                       std::uint64_t seed) {
  if (warmup_len == 0) throw std::invalid_argument("attack_ramp: warmup_len must be >= 1");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw std::invalid_argument("attack_ramp: jitter must lie in [0, 1)");
  Rng rng(seed);
  const double peak = profile.peak_rate;
  std::vector<double> out(warmup_len);
  for (std::size_t k = 0; k < warmup_len; ++k) {
    const double base = peak * static_cast<double>(k + 1) / static_cast<double>(warmup_len);
    const double u = rng.uniform(-jitter, jitter);
    out[k] = std::clamp(base * (1.0 + u), 0.0, peak);
  }
  out.back() = peak;
  return out;
}

inline std::vector<std::uint8_t> warmup_labels(const ScenarioConfig& config) {
  std::vector<std::uint8_t> labels(config.length(), 0);
  for (std::size_t t = config.warmup_begin(); t < config.warmup_end(); ++t) labels[t] = 1;
  return labels;
}

inline UtilizationInstance synthesize_instance(const ScenarioConfig& config,
                                               std::span<const ServerProfile> profiles,
                                               std::uint64_t instance_seed) {
  config.validate();
  if (profiles.size() != config.n_servers)
    throw std::invalid_argument("synthesize_instance: profile count does not match n_servers");

  UtilizationInstance inst;
  inst.rows = config.length();
  inst.cols = config.n_servers;
  inst.values.assign(inst.rows * inst.cols, 0.0);
  inst.labels = warmup_labels(config);
  inst.instance_seed = instance_seed;

  {
    std::vector<std::size_t> servers(config.n_servers);
    for (std::size_t s = 0; s < servers.size(); ++s) servers[s] = s;
    Rng rng(derive_seed(instance_seed, 0, Stream::attacked_set));
    // Partial Fisher-Yates: the first n_attacked slots are a uniform sample.
    for (std::size_t i = 0; i < config.n_attacked; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(i, servers.size() - 1));
      std::swap(servers[i], servers[j]);
    }
    inst.attacked_set.assign(servers.begin(), servers.begin() + static_cast<std::ptrdiff_t>(config.n_attacked));
    std::sort(inst.attacked_set.begin(), inst.attacked_set.end());
  }

  for (std::size_t s = 0; s < config.n_servers; ++s) {
    const auto bg = sample_background(profiles[s], inst.rows, derive_seed(instance_seed, s, Stream::background));
    for (std::size_t t = 0; t < inst.rows; ++t) inst.at(t, s) = bg[t];
  }

  for (std::size_t s : inst.attacked_set) {
    const auto attack = draw_attack_profile(config, derive_seed(instance_seed, s, Stream::bots));
    const auto ramp = attack_ramp(attack, config.warmup_len, config.ramp_jitter,
                                  derive_seed(instance_seed, s, Stream::ramp));
    for (std::size_t k = 0; k < config.warmup_len; ++k) inst.at(config.warmup_begin() + k, s) += ramp[k];
    for (std::size_t t = config.warmup_end(); t < inst.rows; ++t) inst.at(t, s) += attack.peak_rate;
  }
  return inst;
}

inline std::uint64_t profiles_seed(const ScenarioConfig& config) {
  return derive_seed(config.master_seed, 0, Stream::profiles);
}

inline std::uint64_t instance_seed(const ScenarioConfig& config, std::size_t index) {
  return derive_seed(config.master_seed, index, Stream::instance);
}

/// Generates all n_instances. Instance i depends only on (master_seed, i), so
/// the worker count never changes the output.
inline std::vector<UtilizationInstance> synthesize_dataset(const ScenarioConfig& config, unsigned threads = 1) {
  config.validate();
  const auto profiles = draw_server_profiles(config, profiles_seed(config));
  std::vector<UtilizationInstance> out(config.n_instances);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < out.size(); i += stride)
      out[i] = synthesize_instance(config, profiles, instance_seed(config, i));
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, out.size()))));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
  }
  return out;
}

inline NormStats compute_minmax(std::span<const UtilizationInstance> instances) {
  if (instances.empty()) throw std::invalid_argument("compute_minmax: empty input");
  NormStats stats{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& inst : instances) {
    for (double v : inst.values) {
      stats.global_min = std::min(stats.global_min, v);
      stats.global_max = std::max(stats.global_max, v);
    }
  }
  stats.validate();
  return stats;
}

/// (v - min) / (max - min). Values outside the fitted range are not clamped.
inline UtilizationInstance normalize(UtilizationInstance inst, const NormStats& stats) {
  stats.validate();
  for (auto& v : inst.values) v = stats.apply(v);
  return inst;
}

inline UtilizationInstance denormalize(UtilizationInstance inst, const NormStats& stats) {
  stats.validate();
  for (auto& v : inst.values) v = stats.invert(v);
  return inst;
}

}  // namespace xfire
