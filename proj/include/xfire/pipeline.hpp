#pragma once

// End-to-end wiring: run configuration, dataset generation and loading,
// per-model training, checkpoint packing and evaluation.

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "xfire/dataset.hpp"
#include "xfire/detector.hpp"
#include "xfire/eval.hpp"
#include "xfire/io.hpp"
#include "xfire/models/autoencoder.hpp"
#include "xfire/models/checkpoint.hpp"
#include "xfire/models/cnn.hpp"
#include "xfire/models/lstm_model.hpp"
#include "xfire/models/random_forest.hpp"
#include "xfire/traffic_sim.hpp"

namespace xfire {

namespace fs = std::filesystem;
using models::ForestConfig;
using models::TrainConfig;

struct WindowingOptions {
  std::size_t cnn_train_stride = 5;
  std::size_t cnn_eval_stride = 1;
  std::size_t ae_train_stride = 5;
  std::size_t ae_eval_stride = 1;
  // 28 puts one sequence over both the attack onset and the warm-up end; at 56 none does.
  std::size_t lstm_train_stride = 28;
  bool operator==(const WindowingOptions&) const = default;
};

struct RunConfig {
  std::string profile = "desk";
  ScenarioConfig scenario;
  WindowingOptions windowing;
  std::uint64_t split_seed = 20180902;
  TrainConfig ae{1e-3, 32, 30, 10, 101};
  TrainConfig cnn{3e-6, 32, 200, 10, 102};
  TrainConfig lstm{1e-3, 32, 100, 10, 103};
  ForestConfig rf{};
  std::size_t buffer_capacity = kDefaultBufferCapacity;
  std::vector<std::size_t> buffer_sweep{1, 2, 3, 4, 5, 6, 7, 8, 9};

  /// 1000 instances; sized for a single desktop core.
  static RunConfig desk() {
    RunConfig c;
    c.profile = "desk";
    c.scenario.n_instances = 1000;
    return c;
  }

  /// 6000 instances as in the original protocol.
  static RunConfig paper() {
    RunConfig c;
    c.profile = "paper";
    c.scenario.n_instances = 6000;
    c.ae.max_epochs = 100;
    return c;
  }

  static RunConfig for_profile(const std::string& name) {
    if (name == "desk") return desk();
    if (name == "paper") return paper();
    throw std::invalid_argument("unknown profile '" + name + "' (expected desk or paper)");
  }
};

// ------------------------------------------------------------ config JSON

inline json to_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"seed", t.seed}};
}

inline void from_json(const json& j, TrainConfig& t) {
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.patience = j.value("patience", t.patience);
  t.seed = j.value("seed", t.seed);
}

inline json to_json(const ForestConfig& f) {
  return {{"n_trees", f.n_trees},           {"max_depth", f.max_depth}, {"min_leaf", f.min_leaf},
          {"max_features", f.max_features}, {"bootstrap", f.bootstrap}, {"seed", f.seed}};
}

inline void from_json(const json& j, ForestConfig& f) {
  f.n_trees = j.value("n_trees", f.n_trees);
  f.max_depth = j.value("max_depth", f.max_depth);
  f.min_leaf = j.value("min_leaf", f.min_leaf);
  f.max_features = j.value("max_features", f.max_features);
  f.bootstrap = j.value("bootstrap", f.bootstrap);
  f.seed = j.value("seed", f.seed);
}

inline json to_json(const WindowingOptions& w) {
  return {{"cnn_train_stride", w.cnn_train_stride},
          {"cnn_eval_stride", w.cnn_eval_stride},
          {"ae_train_stride", w.ae_train_stride},
          {"ae_eval_stride", w.ae_eval_stride},
          {"lstm_train_stride", w.lstm_train_stride}};
}

inline void from_json(const json& j, WindowingOptions& w) {
  w.cnn_train_stride = j.value("cnn_train_stride", w.cnn_train_stride);
  w.cnn_eval_stride = j.value("cnn_eval_stride", w.cnn_eval_stride);
  w.ae_train_stride = j.value("ae_train_stride", w.ae_train_stride);
  w.ae_eval_stride = j.value("ae_eval_stride", w.ae_eval_stride);
  w.lstm_train_stride = j.value("lstm_train_stride", w.lstm_train_stride);
}

inline json to_json(const RunConfig& c) {
  return {{"profile", c.profile},
          {"scenario", io::to_json(c.scenario)},
          {"windowing", to_json(c.windowing)},
          {"split_seed", c.split_seed},
          {"ae", to_json(c.ae)},
          {"cnn", to_json(c.cnn)},
          {"lstm", to_json(c.lstm)},
          {"rf", to_json(c.rf)},
          {"buffer_capacity", c.buffer_capacity},
          {"buffer_sweep", c.buffer_sweep}};
}

/// The profile (if present) selects the base; other keys override it.
inline RunConfig run_config_from_json(const json& j, const std::string& default_profile = "desk") {
  RunConfig c = RunConfig::for_profile(j.value("profile", default_profile));
  if (j.contains("scenario")) io::from_json(j.at("scenario"), c.scenario);
  if (j.contains("windowing")) from_json(j.at("windowing"), c.windowing);
  c.split_seed = j.value("split_seed", c.split_seed);
  if (j.contains("ae")) from_json(j.at("ae"), c.ae);
  if (j.contains("cnn")) from_json(j.at("cnn"), c.cnn);
  if (j.contains("lstm")) from_json(j.at("lstm"), c.lstm);
  if (j.contains("rf")) from_json(j.at("rf"), c.rf);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.buffer_sweep = j.value("buffer_sweep", c.buffer_sweep);
  return c;
}

/// XFIRE_THREADS if set and positive, otherwise the hardware concurrency.
inline unsigned generation_threads() {
  if (const char* env = std::getenv("XFIRE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// ------------------------------------------------------------ datasets

/// Manifest plus the instances that were loaded, indexed by instance id.
/// Instances hold raw (unnormalized) values rounded to storage precision.
struct Dataset {
  io::DatasetManifest manifest;
  std::vector<std::optional<UtilizationInstance>> instances;

  const ScenarioConfig& scenario() const { return manifest.scenario; }
  const NormStats& norm() const { return manifest.norm; }
  std::string condition() const { return manifest.scenario.condition_tag(); }

  const UtilizationInstance& raw(std::size_t id) const {
    if (id >= instances.size() || !instances[id]) throw std::logic_error("instance " + std::to_string(id) + " not loaded");
    return *instances[id];
  }
  const std::vector<std::size_t>& ids(Partition p) const { return manifest.split.indices(p); }
};

inline Dataset simulate_dataset(const RunConfig& config, unsigned threads = 1) {
  auto instances = synthesize_dataset(config.scenario, threads);
  for (auto& inst : instances) io::round_to_storage(inst);

  Dataset ds;
  auto& m = ds.manifest;
  m.scenario = config.scenario;
  m.split = split_dataset(instances.size(), config.split_seed);
  std::vector<UtilizationInstance> train;
  for (auto id : m.split.train) train.push_back(instances[id]);
  m.norm = compute_minmax(train);
  m.profiles = draw_server_profiles(config.scenario, profiles_seed(config.scenario));
  for (std::size_t i = 0; i < instances.size(); ++i)
    m.instances.push_back({i, io::instance_file_name(i), instances[i].instance_seed, instances[i].attacked_set});
  m.extra = json{{"run_config", to_json(config)}};
  ds.instances.assign(std::make_move_iterator(instances.begin()), std::make_move_iterator(instances.end()));
  return ds;
}

inline std::uint32_t write_dataset(const fs::path& dir, const Dataset& ds) {
  std::vector<UtilizationInstance> all;
  all.reserve(ds.instances.size());
  for (std::size_t i = 0; i < ds.instances.size(); ++i) all.push_back(ds.raw(i));
  return io::write_dataset(dir, ds.manifest, all);
}

/// Loads the manifest and the instances of the requested partitions.
inline Dataset load_dataset(const fs::path& dir, std::initializer_list<Partition> parts = {Partition::train, Partition::val,
                                                                                           Partition::test}) {
  Dataset ds;
  ds.manifest = io::read_manifest(dir);
  ds.instances.resize(ds.manifest.instances.size());
  for (auto p : parts)
    for (auto id : ds.ids(p)) ds.instances[id] = io::read_instance(dir, ds.manifest, id);
  return ds;
}

inline UtilizationInstance normalized(const Dataset& ds, std::size_t id) { return normalize(ds.raw(id), ds.norm()); }

inline std::vector<CnnWindow> cnn_windows(const Dataset& ds, Partition p, std::size_t stride) {
  std::vector<CnnWindow> out;
  for (auto id : ds.ids(p)) {
    auto w = make_cnn_windows(normalized(ds, id), stride, id);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

inline std::vector<AeWindow> ae_windows(const Dataset& ds, Partition p, std::size_t stride) {
  std::vector<AeWindow> out;
  for (auto id : ds.ids(p)) {
    auto w = make_ae_windows(normalized(ds, id), id, stride);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

inline std::vector<SequenceExample> lstm_sequences(const Dataset& ds, Partition p, std::size_t stride) {
  std::vector<SequenceExample> out;
  for (auto id : ds.ids(p)) {
    auto w = make_lstm_sequences(normalized(ds, id), stride, id);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

/// Window files for every model and partition, plus a descriptor JSON.
inline void export_windows(const fs::path& dir, const Dataset& ds, const WindowingOptions& w) {
  fs::create_directories(dir);
  json descriptors = json::array();
  const auto cols = ds.scenario().n_servers;
  for (auto p : {Partition::train, Partition::val, Partition::test}) {
    const bool train = p == Partition::train;
    const std::string tag = to_string(p);
    const auto cs = train ? w.cnn_train_stride : w.cnn_eval_stride;
    const auto as = train ? w.ae_train_stride : w.ae_eval_stride;
    const auto ls = train ? w.lstm_train_stride : kLstmSequenceLength;
    io::write_file(dir / ("cnn_" + tag + ".xfir"), io::encode_matrix(io::windows_to_matrix(cnn_windows(ds, p, cs))));
    io::write_file(dir / ("ae_" + tag + ".xfir"), io::encode_matrix(io::windows_to_matrix(ae_windows(ds, p, as))));
    io::write_file(dir / ("lstm_" + tag + ".xfir"), io::encode_matrix(io::windows_to_matrix(lstm_sequences(ds, p, ls))));
    auto d = [&](const char* type, std::size_t stride, const char* rule, std::vector<std::size_t> shape) {
      auto j = io::to_json(io::WindowDescriptor{type, stride, rule, std::move(shape)});
      j["partition"] = tag;
      j["file"] = std::string(type) + "_" + tag + ".xfir";
      descriptors.push_back(std::move(j));
    };
    d("cnn", cs, "positive iff at least 5 of 15 rows are warm-up", {kCnnWindowRows, cols, 1});
    d("ae", as, "positive iff at least 3 of 5 rows are warm-up", {kAeWindowRows * cols});
    d("lstm", ls, "row label is 1 iff any step is warm-up; per-step labels follow the instance labels",
      {kLstmSequenceLength, cols});
  }
  io::write_text(dir / "windows.json", json{{"windows", descriptors}}.dump(2) + "\n");
}

/// Rejects evaluation on training data unless explicitly allowed.
inline void require_no_leakage(Partition p, bool allow_leakage) {
  if (p == Partition::train && !allow_leakage)
    throw std::invalid_argument("evaluating on the training split requires --allow-leakage");
}

// ------------------------------------------------------------ training

using EpochCallback = std::function<void(const models::EpochRecord&)>;

inline models::AutoencoderResult train_ae(const Dataset& ds, const RunConfig& c, const EpochCallback& cb = {}) {
  auto r = models::train_autoencoder(ae_windows(ds, Partition::train, c.windowing.ae_train_stride),
                                     ae_windows(ds, Partition::val, c.windowing.ae_train_stride), c.ae, {}, cb);
  r.model.norm = ds.norm();
  return r;
}

/// Features of AE windows from one partition with their majority labels.
inline std::pair<std::vector<std::vector<float>>, std::vector<std::uint8_t>> rf_dataset(
    const models::Autoencoder<float>& ae, const Dataset& ds, Partition p, std::size_t stride) {
  const auto windows = ae_windows(ds, p, stride);
  std::vector<std::uint8_t> labels;
  labels.reserve(windows.size());
  for (const auto& w : windows) labels.push_back(w.label ? 1 : 0);
  return {models::ae_features(ae, windows), std::move(labels)};
}

inline models::RandomForest train_rf(const models::Autoencoder<float>& ae, const Dataset& ds, const RunConfig& c) {
  const auto [features, labels] = rf_dataset(ae, ds, Partition::train, c.windowing.ae_train_stride);
  return models::train_random_forest(features, labels, c.rf);
}

inline models::CnnResult train_cnn(const Dataset& ds, const RunConfig& c, const EpochCallback& cb = {}) {
  auto r = models::train_cnn(cnn_windows(ds, Partition::train, c.windowing.cnn_train_stride),
                             cnn_windows(ds, Partition::val, c.windowing.cnn_train_stride), c.cnn,
                             models::CnnArch{kCnnWindowRows, ds.scenario().n_servers}, cb);
  r.model.norm = ds.norm();
  return r;
}

inline models::LstmResult train_lstm(const Dataset& ds, const RunConfig& c, const EpochCallback& cb = {}) {
  auto r = models::train_lstm(lstm_sequences(ds, Partition::train, c.windowing.lstm_train_stride),
                              lstm_sequences(ds, Partition::val, c.windowing.lstm_train_stride), c.lstm,
                              models::LstmArch{ds.scenario().n_servers}, cb);
  r.model.norm = ds.norm();
  return r;
}

inline std::string curve_csv(const models::TrainingCurve& curve) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_loss,val_loss\n";
  for (const auto& e : curve.epochs) os << e.epoch << "," << e.train_loss << "," << e.val_loss << "\n";
  return os.str();
}

// ------------------------------------------------------------ checkpoints

inline json training_meta(const std::string& condition, const TrainConfig& t, const models::TrainingCurve& curve) {
  return {{"condition", condition},
          {"train_config", to_json(t)},
          {"epochs_run", curve.epochs.size()},
          {"best_epoch", curve.best_epoch},
          {"best_val_loss", curve.best_val_loss},
          {"stopped_early", curve.stopped_early}};
}

inline models::ModelCheckpoint to_checkpoint(const models::Autoencoder<float>& ae, json meta) {
  meta["arch"] = {{"widths", ae.arch().widths}};
  return {"ae", std::move(meta), ae.norm, ae.named_tensors()};
}

/// Self-contained AE+RF checkpoint: the forest plus the encoder it consumes.
inline models::ModelCheckpoint to_checkpoint(const models::Autoencoder<float>& ae, const models::RandomForest& rf,
                                             json meta) {
  auto ck = to_checkpoint(ae, std::move(meta));
  ck.architecture = "ae_rf";
  for (auto& t : rf.named_tensors()) ck.tensors.push_back(std::move(t));
  return ck;
}

inline models::ModelCheckpoint to_checkpoint(const models::CnnModel<float>& m, json meta) {
  const auto& a = m.arch();
  meta["arch"] = {{"rows", a.rows},           {"servers", a.servers},       {"t_kernel", a.t_kernel},
                  {"t_channels", a.t_channels}, {"s_kernel", a.s_kernel},   {"s_channels", a.s_channels},
                  {"classes", a.classes}};
  return {"cnn", std::move(meta), m.norm, m.named_tensors()};
}

inline models::ModelCheckpoint to_checkpoint(const models::LstmModel<float>& m, json meta) {
  const auto& a = m.arch();
  meta["arch"] = {{"input", a.input}, {"hidden1", a.hidden1}, {"hidden2", a.hidden2}, {"classes", a.classes}};
  return {"lstm", std::move(meta), m.norm, m.named_tensors()};
}

inline void require_architecture(const models::ModelCheckpoint& ck, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed)
    if (ck.architecture == a) return;
  std::string list;
  for (const char* a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
  throw models::CheckpointError(models::CheckpointError::Kind::format,
                                "architecture mismatch: checkpoint is '" + ck.architecture + "', expected " + list);
}

inline models::Autoencoder<float> load_ae(const models::ModelCheckpoint& ck) {
  require_architecture(ck, {"ae", "ae_rf"});
  models::AutoencoderArch arch;
  arch.widths = ck.meta.at("arch").at("widths").get<std::vector<std::size_t>>();
  models::Autoencoder<float> m(arch);
  m.load_tensors(ck);
  m.norm = ck.norm;
  return m;
}

inline models::RandomForest load_rf(const models::ModelCheckpoint& ck) {
  require_architecture(ck, {"ae_rf"});
  return models::RandomForest::from_checkpoint(ck);
}

inline models::CnnModel<float> load_cnn(const models::ModelCheckpoint& ck) {
  require_architecture(ck, {"cnn"});
  const auto& a = ck.meta.at("arch");
  models::CnnArch arch{a.at("rows"),       a.at("servers"),    a.at("t_kernel"), a.at("t_channels"),
                       a.at("s_kernel"),   a.at("s_channels"), a.at("classes")};
  models::CnnModel<float> m(arch);
  m.load_tensors(ck);
  m.norm = ck.norm;
  return m;
}

inline models::LstmModel<float> load_lstm(const models::ModelCheckpoint& ck) {
  require_architecture(ck, {"lstm"});
  const auto& a = ck.meta.at("arch");
  models::LstmModel<float> m(models::LstmArch{a.at("input"), a.at("hidden1"), a.at("hidden2"), a.at("classes")});
  m.load_tensors(ck);
  m.norm = ck.norm;
  return m;
}

/// Checkpoint and dataset must describe the same attack condition.
inline void require_condition(const models::ModelCheckpoint& ck, const Dataset& ds) {
  const auto tag = ck.meta.value("condition", std::string{});
  if (tag != ds.condition())
    throw std::invalid_argument("condition mismatch: checkpoint trained on '" + tag + "', dataset is '" + ds.condition() +
                                "'");
}

/// Predictions use the checkpoint's normalization; it must match the dataset's.
inline void require_norm(const models::ModelCheckpoint& ck, const Dataset& ds) {
  if (!ck.norm) throw std::invalid_argument("checkpoint has no normalization statistics");
  if (*ck.norm != ds.norm())
    throw std::invalid_argument("checkpoint normalization differs from the dataset's; it was trained on another dataset");
}

// ------------------------------------------------------------ evaluation

inline ConditionResult evaluate_ae_rf(const models::Autoencoder<float>& ae, const models::RandomForest& rf,
                                      const Dataset& ds, Partition p, std::size_t stride) {
  const auto [features, labels] = rf_dataset(ae, ds, p, stride);
  const auto scores = models::rf_score(rf, features);
  ConditionResult r;
  r.condition = ds.condition();
  r.rows.push_back(metric_row("window", confusion_at(scores, labels)));
  const auto roc = roc_auc(scores, labels);
  r.auc = roc.auc;
  r.roc = roc.points;
  return r;
}

inline ConditionResult evaluate_cnn(const models::CnnModel<float>& m, const Dataset& ds, Partition p, std::size_t stride) {
  const auto windows = cnn_windows(ds, p, stride);
  const auto probs = models::cnn_predict(m, windows);
  std::vector<double> scores(probs.begin(), probs.end());
  std::vector<std::uint8_t> labels;
  for (const auto& w : windows) labels.push_back(w.label ? 1 : 0);
  ConditionResult r;
  r.condition = ds.condition();
  r.rows.push_back(metric_row("window", confusion_at(scores, labels)));
  return r;
}

/// Event-level counting per instance: the pre-attack segment is one negative
/// unit (false positive if any smoothed alarm fires there) and the attack is
/// one positive unit (true positive if the first event falls inside warm-up).
inline ConfusionCounts event_counts(const StreamResult& s, std::size_t warmup_end) {
  ConfusionCounts c;
  (s.false_alarm ? c.fp : c.tn) += 1;
  (s.event && s.event->detect_index < warmup_end ? c.tp : c.fn) += 1;
  return c;
}

/// Re-smooths recorded per-sample predictions at each capacity.
inline std::vector<TradeoffRow> latency_tradeoff(const std::vector<StreamResult>& streams, std::size_t warmup_begin,
                                                 std::size_t warmup_end, const std::vector<std::size_t>& capacities) {
  std::vector<TradeoffRow> rows;
  for (auto cap : capacities) {
    ConfusionCounts ec;
    std::vector<std::size_t> lat;
    for (const auto& s : streams) {
      const auto rs = resmooth(s.trace, warmup_begin, cap);
      ec += event_counts(rs, warmup_end);
      if (rs.event) lat.push_back(rs.event->latency);
    }
    const auto prf = prf1(ec);
    const auto ls = latency_stats(lat, streams.size());
    rows.push_back({cap, prf.precision, prf.recall, ls.max, ls.detected});
  }
  return rows;
}

struct LstmEvaluation {
  ConditionResult result;
  std::vector<StreamResult> streams;  // one per evaluated instance, at the headline capacity
};

inline LstmEvaluation evaluate_lstm(const models::LstmModel<float>& m, const Dataset& ds, Partition p,
                                    std::size_t capacity, const std::vector<std::size_t>& sweep = {}) {
  const auto& sc = ds.scenario();
  LstmEvaluation out;
  auto& r = out.result;
  r.condition = ds.condition();
  ConfusionCounts raw, smoothed, events;
  std::vector<std::size_t> latencies;
  for (auto id : ds.ids(p)) {
    const auto& inst = ds.raw(id);
    auto s = stream_detect(m, inst, sc.warmup_begin(), capacity, id);
    for (const auto& d : s.trace) {
      const bool a = inst.labels[d.t] != 0;
      (d.raw ? (a ? raw.tp : raw.fp) : (a ? raw.fn : raw.tn)) += 1;
      (d.smoothed ? (a ? smoothed.tp : smoothed.fp) : (a ? smoothed.fn : smoothed.tn)) += 1;
    }
    events += event_counts(s, sc.warmup_end());
    if (s.event) latencies.push_back(s.event->latency);
    out.streams.push_back(std::move(s));
  }
  r.rows.push_back(metric_row("sample", raw));
  r.rows.push_back(metric_row("smoothed_sample", smoothed));
  r.rows.push_back(metric_row("event", events));
  r.latency = latency_stats(latencies, out.streams.size());

  r.tradeoff = latency_tradeoff(out.streams, sc.warmup_begin(), sc.warmup_end(), sweep);
  return out;
}

}  // namespace xfire
