#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "xfire/traffic_sim.hpp"

namespace {

using namespace xfire;

ScenarioConfig small_config(std::size_t instances = 12) {
  ScenarioConfig c;
  c.n_instances = instances;
  return c;
}

TEST(Rng, SeedDerivationSeparatesStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 100; ++i)
    for (auto tag : {Stream::background, Stream::bots, Stream::ramp}) seen.insert(derive_seed(42, i, tag));
  EXPECT_EQ(seen.size(), 300u);
  EXPECT_EQ(derive_seed(1, 2, Stream::split), derive_seed(1, 2, Stream::split));
}

TEST(Rng, UniformIntStaysInRangeAndHitsBothEnds) {
  Rng rng(3);
  bool lo = false, hi = false;
  for (int i = 0; i < 2000; ++i) {
    const auto v = rng.uniform_int(5, 9);
    ASSERT_GE(v, 5u);
    ASSERT_LE(v, 9u);
    lo |= v == 5;
    hi |= v == 9;
  }
  EXPECT_TRUE(lo && hi);
}

TEST(Rng, NormalMomentsMatch) {
  Rng rng(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal(3.0, 2.0);
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 3.0, 0.02);
  EXPECT_NEAR(var, 4.0, 0.05);
}

TEST(ScenarioConfig, DefaultsAndValidation) {
  ScenarioConfig c;
  EXPECT_EQ(c.n_servers, 80u);
  EXPECT_EQ(c.n_instances, 6000u);
  EXPECT_EQ(c.length(), 120u);
  EXPECT_EQ(c.condition_tag(), "80/80");
  c.n_attacked = 81;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig{};
  c.warmup_len = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig{};
  c.ramp_jitter = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig{};
  c.bots_max = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(ServerProfiles, DrawnWithinConfiguredRanges) {
  const auto c = small_config();
  const auto p = draw_server_profiles(c, 9);
  ASSERT_EQ(p.size(), 80u);
  for (const auto& s : p) {
    EXPECT_GE(s.mean_rate, 100.0);
    EXPECT_LT(s.mean_rate, 150.0);
    EXPECT_GE(s.std_rate, 0.45);
    EXPECT_LT(s.std_rate, 2.45);
  }
}

TEST(AttackProfile, PeakIsSumOfBotRates) {
  const auto c = small_config();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = draw_attack_profile(c, seed);
    ASSERT_GE(a.bots_per_server, 5u);
    ASSERT_LE(a.bots_per_server, 20u);
    ASSERT_EQ(a.bot_rates.size(), a.bots_per_server);
    double sum = 0;
    for (double r : a.bot_rates) {
      EXPECT_GE(r, 0.43);
      EXPECT_LE(r, 2.2);
      sum += r;
    }
    EXPECT_DOUBLE_EQ(a.peak_rate, sum);
  }
}

TEST(AttackRamp, UnjitteredRampIsLinear) {
  AttackProfile a;
  a.peak_rate = 10.0;
  const auto r = attack_ramp(a, 30, 0.0, 1);
  ASSERT_EQ(r.size(), 30u);
  EXPECT_DOUBLE_EQ(r[14], 5.0);
  for (std::size_t k = 0; k < 30; ++k) EXPECT_NEAR(r[k], 10.0 * (k + 1) / 30.0, 1e-12);
}

TEST(AttackRamp, JitteredRampIsClampedAndEndsAtPeak) {
  AttackProfile a;
  a.peak_rate = 7.5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = attack_ramp(a, 30, 0.25, seed);
    for (double v : r) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 7.5);
    }
    EXPECT_EQ(r.back(), 7.5);
  }
  EXPECT_THROW(attack_ramp(a, 0, 0.1, 1), std::invalid_argument);
  EXPECT_THROW(attack_ramp(a, 30, 1.0, 1), std::invalid_argument);
}

TEST(SynthesizeInstance, LabelsMarkExactlyTheWarmup) {
  const auto c = small_config();
  const auto profiles = draw_server_profiles(c, profiles_seed(c));
  for (std::size_t i = 0; i < 5; ++i) {
    const auto inst = synthesize_instance(c, profiles, instance_seed(c, i));
    ASSERT_EQ(inst.labels.size(), c.length());
    for (std::size_t t = 0; t < inst.rows; ++t)
      EXPECT_EQ(inst.labels[t] != 0, t >= c.pre_len && t < c.pre_len + c.warmup_len) << "t=" << t;
  }
}

TEST(SynthesizeInstance, AttackedSetHasRequestedSize) {
  auto c = small_config();
  c.n_attacked = 70;
  const auto profiles = draw_server_profiles(c, profiles_seed(c));
  const auto inst = synthesize_instance(c, profiles, 77);
  ASSERT_EQ(inst.attacked_set.size(), 70u);
  EXPECT_TRUE(std::is_sorted(inst.attacked_set.begin(), inst.attacked_set.end()));
  EXPECT_EQ(std::set<std::size_t>(inst.attacked_set.begin(), inst.attacked_set.end()).size(), 70u);
}

TEST(SynthesizeInstance, UnattackedColumnsArePureBackground) {
  auto c = small_config();
  c.n_attacked = 70;
  const auto profiles = draw_server_profiles(c, profiles_seed(c));
  const std::uint64_t seed = 1234;
  const auto inst = synthesize_instance(c, profiles, seed);
  for (std::size_t s = 0; s < c.n_servers; ++s) {
    if (std::binary_search(inst.attacked_set.begin(), inst.attacked_set.end(), s)) continue;
    const auto bg = sample_background(profiles[s], inst.rows, derive_seed(seed, s, Stream::background));
    EXPECT_EQ(inst.column(s), bg);
  }
}

TEST(SynthesizeInstance, NoAttackDegeneratesToBackground) {
  auto c = small_config();
  c.n_attacked = 0;
  const auto profiles = draw_server_profiles(c, profiles_seed(c));
  const auto inst = synthesize_instance(c, profiles, 5);
  EXPECT_TRUE(inst.attacked_set.empty());
  EXPECT_EQ(std::count(inst.labels.begin(), inst.labels.end(), 1), 30);
  for (std::size_t s = 0; s < c.n_servers; ++s)
    EXPECT_EQ(inst.column(s), sample_background(profiles[s], inst.rows, derive_seed(5, s, Stream::background)));
}

TEST(SynthesizeInstance, PlateauMeanMatchesProfilePlusPeak) {
  const auto c = small_config();
  const auto profiles = draw_server_profiles(c, profiles_seed(c));
  const std::uint64_t seed = 99;
  const auto inst = synthesize_instance(c, profiles, seed);
  for (std::size_t s = 0; s < c.n_servers; ++s) {
    const auto peak = draw_attack_profile(c, derive_seed(seed, s, Stream::bots)).peak_rate;
    double sum = 0;
    for (std::size_t t = c.warmup_end(); t < c.length(); ++t) sum += inst.at(t, s);
    const double mean = sum / static_cast<double>(c.plateau_len);
    EXPECT_NEAR(mean, profiles[s].mean_rate + peak, 3 * profiles[s].std_rate / std::sqrt(double(c.plateau_len)))
        << "server " << s;
  }
}

TEST(SynthesizeDataset, OutputIndependentOfThreadCount) {
  const auto c = small_config(9);
  const auto a = synthesize_dataset(c, 1);
  const auto b = synthesize_dataset(c, 4);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[3], synthesize_instance(c, draw_server_profiles(c, profiles_seed(c)), instance_seed(c, 3)));
}

TEST(SynthesizeDataset, SeedChangesData) {
  auto c = small_config(2);
  const auto a = synthesize_dataset(c);
  c.master_seed += 1;
  EXPECT_NE(a, synthesize_dataset(c));
}

TEST(Normalization, MinMaxRoundTrip) {
  const auto c = small_config(4);
  const auto data = synthesize_dataset(c);
  const auto stats = compute_minmax(data);
  const auto n = normalize(data[0], stats);
  double lo = 1e9, hi = -1e9;
  for (double v : n.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, 0.0);
  EXPECT_LE(hi, 1.0);
  const auto back = denormalize(n, stats);
  for (std::size_t i = 0; i < back.values.size(); ++i) EXPECT_NEAR(back.values[i], data[0].values[i], 1e-9);
}

TEST(Normalization, RejectsDegenerateInput) {
  EXPECT_THROW(compute_minmax(std::span<const UtilizationInstance>{}), std::invalid_argument);
  UtilizationInstance flat;
  flat.rows = 2;
  flat.cols = 1;
  flat.values = {3.0, 3.0};
  EXPECT_THROW(compute_minmax(std::span(&flat, 1)), std::invalid_argument);
}

}  // namespace
