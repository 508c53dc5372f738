#include <gtest/gtest.h>

#include "xfire/detector.hpp"

namespace {

using namespace xfire;

std::vector<std::uint8_t> random_trace(std::size_t n, double p_one, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> t(n);
  for (auto& v : t) v = rng.uniform(0.0, 1.0) < p_one ? 1 : 0;
  return t;
}

std::vector<Decision> decisions(const std::vector<std::uint8_t>& raw) {
  std::vector<Decision> out(raw.size());
  for (std::size_t t = 0; t < raw.size(); ++t) out[t] = {t, raw[t] ? 1.0f : 0.0f, raw[t], 0};
  return out;
}

TEST(SmoothingBuffer, FiresOnlyWhenFullOfOnes) {
  SmoothingBuffer b(3);
  EXPECT_EQ(b.push_and_decide(1), 0);
  EXPECT_EQ(b.push_and_decide(1), 0);
  EXPECT_EQ(b.push_and_decide(1), 1);
  EXPECT_EQ(b.push_and_decide(0), 0);
  EXPECT_EQ(b.push_and_decide(1), 0);
  EXPECT_EQ(b.push_and_decide(1), 0);
  EXPECT_EQ(b.push_and_decide(1), 1);
  EXPECT_EQ(b.size(), 3u);
  b.reset();
  EXPECT_EQ(b.size(), 0u);
  EXPECT_EQ(b.push_and_decide(1), 0);
}

TEST(SmoothingBuffer, CapacityOneIsIdentity) {
  const auto raw = random_trace(200, 0.5, 1);
  EXPECT_EQ(smooth_trace(raw, 1), raw);
}

TEST(SmoothingBuffer, RejectsInvalidInput) {
  EXPECT_THROW(SmoothingBuffer(0), std::invalid_argument);
  SmoothingBuffer b;
  EXPECT_EQ(b.capacity(), 7u);
  EXPECT_THROW(b.push_and_decide(2), std::invalid_argument);
}

TEST(SmoothingBuffer, MatchesBruteForceWindowRule) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::size_t cap = 1 + seed % 9;
    const auto raw = random_trace(300, 0.8, seed);
    const auto smoothed = smooth_trace(raw, cap);
    for (std::size_t t = 0; t < raw.size(); ++t) {
      bool all = t + 1 >= cap;
      for (std::size_t k = 0; all && k < cap; ++k) all = raw[t - k] == 1;
      ASSERT_EQ(smoothed[t], all ? 1 : 0) << "seed " << seed << " t " << t;
    }
  }
}

TEST(ScanDecisions, OraclePredictorHasLatencyEqualToCapacity) {
  std::vector<std::uint8_t> raw(120, 0);
  for (std::size_t t = 45; t < 75; ++t) raw[t] = 1;
  for (std::size_t cap = 1; cap <= 9; ++cap) {
    const auto r = resmooth(decisions(raw), 45, cap, 3);
    ASSERT_TRUE(r.event);
    EXPECT_EQ(r.event->latency, cap);
    EXPECT_EQ(r.event->detect_index, 44 + cap);
    EXPECT_EQ(r.event->instance_id, 3u);
    EXPECT_FALSE(r.false_alarm);
  }
}

TEST(ScanDecisions, AllZeroPredictorNeverFires) {
  const auto r = resmooth(decisions(std::vector<std::uint8_t>(120, 0)), 45, 7);
  EXPECT_FALSE(r.event);
  EXPECT_FALSE(r.false_alarm);
}

TEST(ScanDecisions, EarlyAlarmIsFalseAlarm) {
  std::vector<std::uint8_t> raw(120, 0);
  for (std::size_t t = 10; t < 20; ++t) raw[t] = 1;
  const auto r = resmooth(decisions(raw), 45, 7);
  EXPECT_TRUE(r.false_alarm);
  EXPECT_FALSE(r.event);
}

TEST(ScanDecisions, LatencyNonDecreasingInCapacity) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto raw = random_trace(120, 0.3, seed);
    for (std::size_t t = 45; t < 120; ++t) raw[t] = raw[t] || (seed + t) % 5 != 0;
    std::size_t prev = 0;  // 0 = no event yet seen at a smaller capacity
    bool lost = false;
    for (std::size_t cap = 1; cap <= 9; ++cap) {
      const auto r = resmooth(decisions(raw), 45, cap);
      if (lost) {
        ASSERT_FALSE(r.event) << "capacity " << cap << " detected after a smaller one missed";
        continue;
      }
      if (!r.event) {
        lost = true;
        continue;
      }
      ASSERT_GE(r.event->latency, prev);
      prev = r.event->latency;
    }
  }
}

models::LstmModel<float> small_model() {
  models::LstmModel<float> m(models::LstmArch{80, 6, 5, 2});
  m.init(4);
  m.norm = NormStats{90.0, 200.0};
  return m;
}

TEST(StreamState, RequiresNormalization) {
  models::LstmModel<float> m(models::LstmArch{80, 6, 5, 2});
  EXPECT_THROW(StreamState{m}, std::invalid_argument);
}

TEST(StreamDetect, MatchesBatchForward) {
  const auto m = small_model();
  ScenarioConfig c;
  c.n_instances = 1;
  const auto inst = synthesize_dataset(c).front();
  const auto r = stream_detect(m, inst, 45);
  ASSERT_EQ(r.trace.size(), 120u);

  const auto norm = normalize(inst, *m.norm);
  nn::Tensor<float> x({1, 120, 80});
  for (std::size_t i = 0; i < norm.values.size(); ++i) x[i] = static_cast<float>(norm.values[i]);
  const auto p = nn::softmax(m.forward(x));
  std::vector<std::uint8_t> raw;
  for (std::size_t t = 0; t < 120; ++t) {
    EXPECT_NEAR(r.trace[t].p, p(t, 1), 1e-5) << t;
    raw.push_back(r.trace[t].raw);
  }
  const auto smoothed = smooth_trace(raw, 7);
  for (std::size_t t = 0; t < 120; ++t) EXPECT_EQ(r.trace[t].smoothed, smoothed[t]);
}

TEST(StreamDetect, RejectsWidthMismatch) {
  const auto m = small_model();
  StreamState s(m);
  EXPECT_THROW(s.push(std::vector<double>(79, 100.0)), std::invalid_argument);
  UtilizationInstance inst;
  inst.rows = 3;
  inst.cols = 70;
  inst.values.assign(210, 100.0);
  inst.labels.assign(3, 0);
  EXPECT_THROW(stream_detect(m, inst, 1), std::invalid_argument);
}

}  // namespace
