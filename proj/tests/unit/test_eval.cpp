#include <gtest/gtest.h>

#include <cmath>

#include "xfire/eval.hpp"
#include "xfire/rng.hpp"

namespace {

using namespace xfire;

// Mann-Whitney: P(score_pos > score_neg) + 0.5 P(tie), by brute force over all pairs.
double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return num / den;
}

TEST(Prf, WorkedExample) {
  const ConfusionCounts c{97, 34, 0, 3};
  const auto r = prf1(c);
  EXPECT_NEAR(r.precision, 97.0 / 131.0, 1e-12);
  EXPECT_NEAR(r.precision, 0.740, 5e-4);
  EXPECT_DOUBLE_EQ(r.recall, 0.97);
  EXPECT_NEAR(r.f1, 0.840, 5e-4);
  EXPECT_FALSE(r.degenerate);
}

TEST(Prf, InvariantToScalingCounts) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const ConfusionCounts c{rng.uniform_int(1, 500), rng.uniform_int(0, 500), rng.uniform_int(0, 500),
                            rng.uniform_int(0, 500)};
    const std::uint64_t k = rng.uniform_int(2, 9);
    const auto a = prf1(c), b = prf1({c.tp * k, c.fp * k, c.tn * k, c.fn * k});
    EXPECT_NEAR(a.precision, b.precision, 1e-12);
    EXPECT_NEAR(a.recall, b.recall, 1e-12);
    EXPECT_NEAR(a.f1, b.f1, 1e-12);
  }
}

TEST(Prf, DegenerateDenominators) {
  const auto r = prf1({0, 0, 10, 0});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.f1, 0.0);
}

TEST(Confusion, CountsAndThreshold) {
  const std::vector<std::uint8_t> pred{1, 1, 0, 0, 1}, act{1, 0, 0, 1, 1};
  EXPECT_EQ(confusion(pred, act), (ConfusionCounts{2, 1, 1, 1}));
  const std::vector<double> scores{0.9, 0.5, 0.49, 0.1, 0.7};
  EXPECT_EQ(confusion_at(scores, act), (ConfusionCounts{2, 1, 1, 1}));
  EXPECT_THROW(confusion(pred, std::vector<std::uint8_t>{1}), std::invalid_argument);
}

TEST(RocAuc, PerfectSeparationIsOne) {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<std::uint8_t> y{0, 0, 1, 1};
  const auto r = roc_auc(s, y);
  EXPECT_DOUBLE_EQ(r.auc, 1.0);
  EXPECT_EQ(r.points.front(), (std::pair<double, double>{0.0, 0.0}));
  EXPECT_EQ(r.points.back(), (std::pair<double, double>{1.0, 1.0}));
}

TEST(RocAuc, RandomScoresNearHalf) {
  Rng rng(5);
  std::vector<double> s(10000);
  std::vector<std::uint8_t> y(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform(0.0, 1.0);
    y[i] = rng.uniform(0.0, 1.0) < 0.3;
  }
  EXPECT_NEAR(roc_auc(s, y).auc, 0.5, 0.02);
}

TEST(RocAuc, MatchesPairwiseOracleWithTies) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<double> s(200);
    std::vector<std::uint8_t> y(200);
    for (std::size_t i = 0; i < s.size(); ++i) {
      y[i] = rng.uniform(0.0, 1.0) < 0.4;
      s[i] = std::round((rng.uniform(0.0, 1.0) + 0.3 * y[i]) * 10.0) / 10.0;  // coarse grid forces ties
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(roc_auc(s, y).auc, pairwise_auc(s, y), 1e-12) << "seed " << seed;
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransform) {
  Rng rng(9);
  std::vector<double> s(300), t(300);
  std::vector<std::uint8_t> y(300);
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = i % 3 == 0;
    s[i] = rng.uniform(0.0, 1.0) + 0.2 * y[i];
    t[i] = std::exp(3.0 * s[i]) - 7.0;
  }
  EXPECT_DOUBLE_EQ(roc_auc(s, y).auc, roc_auc(t, y).auc);
}

TEST(RocAuc, RejectsInvalidInput) {
  const std::vector<double> s{0.1, 0.2};
  EXPECT_THROW(roc_auc(s, std::vector<std::uint8_t>{1, 1}), std::invalid_argument);
  EXPECT_THROW(roc_auc(s, std::vector<std::uint8_t>{1}), std::invalid_argument);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, std::nan("")}, std::vector<std::uint8_t>{1, 0}), std::invalid_argument);
}

TEST(Latency, SummaryOverDetectedOnly) {
  const std::vector<std::size_t> l{7, 9, 14};
  const auto s = latency_stats(l, 5);
  EXPECT_EQ(s.instances, 5u);
  EXPECT_EQ(s.detected, 3u);
  EXPECT_EQ(s.min, 7u);
  EXPECT_EQ(s.max, 14u);
  EXPECT_DOUBLE_EQ(s.mean, 10.0);
  EXPECT_EQ(latency_stats({}, 2).detected, 0u);
}

EvalReport sample_report() {
  EvalReport r;
  r.model = "lstm";
  r.config = {{"buffer", 7}};
  for (const char* cond : {"80/80", "70/80"}) {
    ConditionResult c;
    c.condition = cond;
    c.rows.push_back(metric_row("sample", {2800, 40, 8000, 200}));
    c.rows.push_back(metric_row("event", {100, 0, 100, 0}));
    c.latency = LatencyStats{100, 100, 7, 8.5, 12};
    c.tradeoff.push_back({7, 1.0, 1.0, 12, 100});
    c.auc = 0.97;
    r.conditions.push_back(c);
  }
  return r;
}

TEST(Report, JsonRoundTrip) {
  const auto r = sample_report();
  const auto back = report_from_json(json::parse(render_json(r)));
  EXPECT_EQ(back, r);
  EXPECT_NE(r.find("70/80", "event"), nullptr);
  EXPECT_EQ(r.find("70/80", "window"), nullptr);
}

TEST(Report, MarkdownHasOneTablePerUnit) {
  const auto md = render_report(sample_report(), "markdown");
  EXPECT_NE(md.find("## Per sample"), std::string::npos);
  EXPECT_NE(md.find("## Per event"), std::string::npos);
  std::size_t rows = 0;
  for (std::size_t p = md.find("| 80/80 |"); p != std::string::npos; p = md.find("| 80/80 |", p + 1)) ++rows;
  EXPECT_EQ(rows, 3u);  // sample, event, AUC
  EXPECT_THROW(render_report(sample_report(), "xml"), std::invalid_argument);
}

TEST(Report, RocCsvHeader) {
  const std::vector<std::pair<double, double>> pts{{0, 0}, {0.5, 1}, {1, 1}};
  const auto csv = roc_csv(pts);
  EXPECT_EQ(csv.substr(0, 8), "fpr,tpr\n");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

}  // namespace
