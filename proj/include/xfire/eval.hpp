#pragma once

// Classification metrics, ROC/AUC, latency statistics and report rendering.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace xfire {

using json = nlohmann::json;

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("confusion: size mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0, a = actual[i] != 0;
    (p ? (a ? c.tp : c.fp) : (a ? c.fn : c.tn)) += 1;
  }
  return c;
}

inline ConfusionCounts confusion_at(std::span<const double> scores, std::span<const std::uint8_t> actual,
                                    double threshold = 0.5) {
  std::vector<std::uint8_t> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) p[i] = scores[i] >= threshold ? 1 : 0;
  return confusion(p, actual);
}

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // some denominator was zero
  bool operator==(const Prf&) const = default;
};

/// Zero denominators yield 0 and set `degenerate`.
inline Prf prf1(const ConfusionCounts& c) {
  Prf r;
  const auto pd = c.tp + c.fp, rd = c.tp + c.fn;
  if (pd) r.precision = static_cast<double>(c.tp) / static_cast<double>(pd); else r.degenerate = true;
  if (rd) r.recall = static_cast<double>(c.tp) / static_cast<double>(rd); else r.degenerate = true;
  if (r.precision + r.recall > 0) r.f1 = 2 * r.precision * r.recall / (r.precision + r.recall);
  else r.degenerate = true;
  return r;
}

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr) from (0,0) to (1,1)
  double auc = 0.0;
};

/// Threshold sweep over unique scores in descending order; tied scores enter
/// together, so ties contribute a diagonal segment.
inline RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: size mismatch");
  const auto pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: both classes must be present");
  for (double s : scores)
    if (std::isnan(s)) throw std::invalid_argument("roc_auc: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.emplace_back(0.0, 0.0);
  std::size_t tp = 0, fp = 0;
  double area = 0.0;  // in units of pos*neg
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    const std::size_t tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? tp : fp) += 1;
    area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) * 0.5;
    roc.points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos));
  }
  roc.auc = area / (static_cast<double>(pos) * static_cast<double>(neg));
  return roc;
}

struct LatencyStats {
  std::size_t instances = 0;
  std::size_t detected = 0;
  std::size_t min = 0;
  double mean = 0.0;
  std::size_t max = 0;
  bool operator==(const LatencyStats&) const = default;
};

/// Over detected instances only; `instances` counts all evaluated streams.
inline LatencyStats latency_stats(std::span<const std::size_t> latencies, std::size_t instances) {
  LatencyStats s;
  s.instances = instances;
  s.detected = latencies.size();
  if (latencies.empty()) return s;
  s.min = *std::min_element(latencies.begin(), latencies.end());
  s.max = *std::max_element(latencies.begin(), latencies.end());
  double sum = 0.0;
  for (auto l : latencies) sum += static_cast<double>(l);
  s.mean = sum / static_cast<double>(latencies.size());
  return s;
}

/// One metrics row. `unit` is the counting granularity: window, sample,
/// smoothed_sample or event. Rows of different units are never merged.
struct MetricRow {
  std::string unit;
  ConfusionCounts counts;
  Prf prf;
  bool operator==(const MetricRow&) const = default;
};

inline MetricRow metric_row(std::string unit, const ConfusionCounts& c) { return {std::move(unit), c, prf1(c)}; }

struct TradeoffRow {
  std::size_t capacity = 0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t max_latency = 0;
  std::size_t detected = 0;
  bool operator==(const TradeoffRow&) const = default;
};

struct ConditionResult {
  std::string condition;  // "80/80" or "70/80"
  std::vector<MetricRow> rows;
  std::optional<double> auc;
  std::optional<LatencyStats> latency;
  std::vector<TradeoffRow> tradeoff;
  std::vector<std::pair<double, double>> roc;  // not serialized into report.json
  bool operator==(const ConditionResult&) const = default;
};

struct EvalReport {
  std::string model;  // ae_rf, cnn or lstm
  std::vector<ConditionResult> conditions;
  json config;

  const MetricRow* find(const std::string& condition, const std::string& unit) const {
    for (const auto& c : conditions)
      if (c.condition == condition)
        for (const auto& r : c.rows)
          if (r.unit == unit) return &r;
    return nullptr;
  }
  bool operator==(const EvalReport&) const = default;
};

inline json to_json(const ConfusionCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}; }

inline json to_json(const MetricRow& r) {
  return {{"unit", r.unit},
          {"counts", to_json(r.counts)},
          {"precision", r.prf.precision},
          {"recall", r.prf.recall},
          {"f1", r.prf.f1},
          {"degenerate", r.prf.degenerate}};
}

inline json to_json(const LatencyStats& s) {
  return {{"instances", s.instances}, {"detected", s.detected}, {"min", s.min}, {"mean", s.mean}, {"max", s.max}};
}

inline json to_json(const EvalReport& r) {
  json conds = json::array();
  for (const auto& c : r.conditions) {
    json jc{{"condition", c.condition}, {"rows", json::array()}};
    for (const auto& row : c.rows) jc["rows"].push_back(to_json(row));
    if (c.auc) jc["auc"] = *c.auc;
    if (c.latency) jc["latency"] = to_json(*c.latency);
    if (!c.tradeoff.empty()) {
      jc["tradeoff"] = json::array();
      for (const auto& t : c.tradeoff)
        jc["tradeoff"].push_back({{"capacity", t.capacity},
                                  {"precision", t.precision},
                                  {"recall", t.recall},
                                  {"max_latency", t.max_latency},
                                  {"detected", t.detected}});
    }
    conds.push_back(std::move(jc));
  }
  return {{"model", r.model}, {"conditions", std::move(conds)}, {"config", r.config}};
}

inline EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.config = j.value("config", json::object());
  for (const auto& jc : j.at("conditions")) {
    ConditionResult c;
    c.condition = jc.at("condition").get<std::string>();
    for (const auto& jr : jc.at("rows")) {
      MetricRow row;
      row.unit = jr.at("unit").get<std::string>();
      const auto& k = jr.at("counts");
      row.counts = {k.at("tp").get<std::uint64_t>(), k.at("fp").get<std::uint64_t>(), k.at("tn").get<std::uint64_t>(),
                    k.at("fn").get<std::uint64_t>()};
      row.prf = {jr.at("precision").get<double>(), jr.at("recall").get<double>(), jr.at("f1").get<double>(),
                 jr.at("degenerate").get<bool>()};
      c.rows.push_back(std::move(row));
    }
    if (jc.contains("auc")) c.auc = jc["auc"].get<double>();
    if (jc.contains("latency")) {
      const auto& l = jc["latency"];
      c.latency = LatencyStats{l.at("instances").get<std::size_t>(), l.at("detected").get<std::size_t>(),
                               l.at("min").get<std::size_t>(), l.at("mean").get<double>(), l.at("max").get<std::size_t>()};
    }
    for (const auto& t : jc.value("tradeoff", json::array()))
      c.tradeoff.push_back({t.at("capacity").get<std::size_t>(), t.at("precision").get<double>(),
                            t.at("recall").get<double>(), t.at("max_latency").get<std::size_t>(),
                            t.at("detected").get<std::size_t>()});
    r.conditions.push_back(std::move(c));
  }
  return r;
}

namespace detail {
inline std::string fixed(double v, int digits = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}
}  // namespace detail

/// Markdown: one table per counting unit, one row per condition.
inline std::string render_markdown(const EvalReport& r) {
  std::ostringstream os;
  os << "# Evaluation: " << r.model << "\n";
  std::vector<std::string> units;
  for (const auto& c : r.conditions)
    for (const auto& row : c.rows)
      if (std::find(units.begin(), units.end(), row.unit) == units.end()) units.push_back(row.unit);
  for (const auto& unit : units) {
    os << "\n## Per " << unit << "\n\n| condition | precision | recall | F1 |\n|---|---|---|---|\n";
    for (const auto& c : r.conditions)
      for (const auto& row : c.rows)
        if (row.unit == unit)
          os << "| " << c.condition << " | " << detail::fixed(row.prf.precision) << " | " << detail::fixed(row.prf.recall)
             << " | " << detail::fixed(row.prf.f1) << " |" << (row.prf.degenerate ? " (degenerate)" : "") << "\n";
  }
  bool any_auc = false;
  for (const auto& c : r.conditions) any_auc |= c.auc.has_value();
  if (any_auc) {
    os << "\n## ROC AUC\n\n| condition | AUC |\n|---|---|\n";
    for (const auto& c : r.conditions)
      if (c.auc) os << "| " << c.condition << " | " << detail::fixed(*c.auc) << " |\n";
  }
  for (const auto& c : r.conditions) {
    if (c.latency) {
      const auto& l = *c.latency;
      os << "\n## Detection latency (" << c.condition << ", samples)\n\n"
         << "detected " << l.detected << " of " << l.instances << "; min " << l.min << ", mean " << detail::fixed(l.mean, 2)
         << ", max " << l.max << "\n";
    }
    if (!c.tradeoff.empty()) {
      os << "\n## Buffer capacity trade-off (" << c.condition
         << ")\n\n| capacity | precision | recall | max latency | detected |\n|---|---|---|---|---|\n";
      for (const auto& t : c.tradeoff)
        os << "| " << t.capacity << " | " << detail::fixed(t.precision) << " | " << detail::fixed(t.recall) << " | "
           << t.max_latency << " | " << t.detected << " |\n";
    }
  }
  return os.str();
}

inline std::string render_json(const EvalReport& r) { return to_json(r).dump(2) + "\n"; }

inline std::string render_report(const EvalReport& r, const std::string& format) {
  if (format == "json") return render_json(r);
  if (format == "markdown" || format == "md") return render_markdown(r);
  throw std::invalid_argument("render_report: unknown format '" + format + "'");
}

inline std::string roc_csv(std::span<const std::pair<double, double>> points) {
  std::ostringstream os;
  os.precision(17);
  os << "fpr,tpr\n";
  for (const auto& [f, t] : points) os << f << "," << t << "\n";
  return os.str();
}

}  // namespace xfire
