// xfire: simulate, train, eval, detect and gradcheck subcommands.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xfire/nn/gradcheck_suite.hpp"
#include "xfire/pipeline.hpp"

namespace {

using namespace xfire;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "xfire-out";
  std::string profile;
};

RunConfig resolve_config(const Globals& g) {
  json j = json::object();
  if (!g.config_path.empty()) j = json::parse(io::read_text(g.config_path));
  if (!g.profile.empty()) j["profile"] = g.profile;
  return run_config_from_json(j);
}

void write_config(const fs::path& dir, const RunConfig& c) {
  fs::create_directories(dir);
  io::write_text(dir / "config.json", to_json(c).dump(2) + "\n");
}

void log_epoch(const char* tag, const models::EpochRecord& e) {
  std::fprintf(stderr, "[%s] epoch %3zu  train %.6f  val %.6f\n", tag, e.epoch, e.train_loss, e.val_loss);
}

int cmd_simulate(const Globals& g, std::optional<std::size_t> instances, std::optional<std::size_t> attacked,
                 bool with_windows, bool csv) {
  auto c = resolve_config(g);
  if (g.seed) c.scenario.master_seed = *g.seed;
  if (instances) c.scenario.n_instances = *instances;
  if (attacked) c.scenario.n_attacked = *attacked;
  c.scenario.validate();

  const fs::path out = g.out;
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = simulate_dataset(c, generation_threads());
  const auto crc = write_dataset(out, ds);
  write_config(out, c);
  if (with_windows) export_windows(out / "windows", ds, c.windowing);
  if (csv) {
    fs::create_directories(out / "csv");
    for (std::size_t i = 0; i < ds.instances.size(); ++i) {
      auto name = io::instance_file_name(i);
      io::write_text(out / "csv" / name.replace(name.size() - 5, 5, ".csv"), io::instance_csv(ds.raw(i)));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& sc = c.scenario;
  std::printf("dataset     %s\n", out.string().c_str());
  std::printf("condition   %s\n", sc.condition_tag().c_str());
  std::printf("instances   %zu (train %zu, val %zu, test %zu)\n", sc.n_instances, ds.manifest.split.train.size(),
              ds.manifest.split.val.size(), ds.manifest.split.test.size());
  std::printf("size        %zu samples x %zu servers per instance\n", sc.length(), sc.n_servers);
  std::printf("labels      %zu warm-up, %zu other samples per instance\n", sc.warmup_len, sc.length() - sc.warmup_len);
  std::printf("norm        [%.6f, %.6f]\n", ds.norm().global_min, ds.norm().global_max);
  std::printf("manifest    crc32 %08x\n", crc);
  std::printf("elapsed     %.2f s\n", secs);
  return 0;
}

int cmd_train(const Globals& g, const std::string& model, const std::string& dataset_dir, const std::string& ae_ckpt,
              std::optional<std::size_t> epochs, std::optional<double> lr) {
  auto c = resolve_config(g);
  const fs::path out = g.out;
  TrainConfig* tc = model == "ae" ? &c.ae : model == "cnn" ? &c.cnn : model == "lstm" ? &c.lstm : nullptr;
  if (tc) {
    if (g.seed) tc->seed = *g.seed;
    if (epochs) tc->max_epochs = *epochs;
    if (lr) tc->learning_rate = *lr;
  } else if (g.seed) {
    c.rf.seed = *g.seed;
  }
  if (model == "rf" && ae_ckpt.empty()) throw std::invalid_argument("train rf requires --ae-checkpoint");

  const auto ds = load_dataset(dataset_dir, {Partition::train, Partition::val});
  const auto cond = ds.condition();
  write_config(out, c);
  auto cb = [&](const models::EpochRecord& e) { log_epoch(model.c_str(), e); };
  models::ModelCheckpoint ck;
  std::optional<models::TrainingCurve> curve;
  if (model == "ae") {
    auto r = train_ae(ds, c, cb);
    ck = to_checkpoint(r.model, training_meta(cond, c.ae, r.curve));
    curve = r.curve;
  } else if (model == "rf") {
    const auto ae_ck = models::load_checkpoint(ae_ckpt);
    auto ae = load_ae(ae_ck);
    if (ae.norm != ds.norm()) throw std::invalid_argument("AE checkpoint was trained on a different dataset");
    const auto rf = train_rf(ae, ds, c);
    json meta = ae_ck.meta;
    meta["condition"] = cond;
    meta["rf_config"] = to_json(c.rf);
    ck = to_checkpoint(ae, rf, std::move(meta));
  } else if (model == "cnn") {
    auto r = train_cnn(ds, c, cb);
    ck = to_checkpoint(r.model, training_meta(cond, c.cnn, r.curve));
    curve = r.curve;
  } else if (model == "lstm") {
    auto r = train_lstm(ds, c, cb);
    ck = to_checkpoint(r.model, training_meta(cond, c.lstm, r.curve));
    curve = r.curve;
  } else {
    throw std::invalid_argument("unknown model '" + model + "'");
  }
  const auto name = model == "rf" ? std::string("ae_rf") : model;
  models::save_checkpoint(ck, out / (name + ".xfck"));
  if (curve) io::write_text(out / (name + "_curve.csv"), curve_csv(*curve));
  std::printf("checkpoint  %s\n", (out / (name + ".xfck")).string().c_str());
  if (curve)
    std::printf("epochs      %zu (best %zu, val loss %.6f%s)\n", curve->epochs.size(), curve->best_epoch,
                curve->best_val_loss, curve->stopped_early ? ", early stop" : "");
  return 0;
}

std::vector<std::size_t> parse_sweep(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  const auto dash = s.find("..");
  if (dash != std::string::npos) {
    const auto lo = std::stoul(s.substr(0, dash)), hi = std::stoul(s.substr(dash + 2));
    if (lo == 0 || hi < lo) throw std::invalid_argument("--sweep expects a range like 1..9");
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
    return out;
  }
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) out.push_back(std::stoul(tok));
  return out;
}

int cmd_eval(const Globals& g, const std::vector<std::string>& ckpts, const std::vector<std::string>& datasets,
             const std::string& partition, bool allow_leakage, std::optional<std::size_t> buffer,
             const std::string& sweep) {
  if (ckpts.empty() || ckpts.size() != datasets.size())
    throw std::invalid_argument("eval needs one --dataset per --checkpoint");
  const auto part = partition_from_string(partition);
  require_no_leakage(part, allow_leakage);
  auto c = resolve_config(g);
  const std::size_t capacity = buffer.value_or(c.buffer_capacity);
  const auto caps = sweep.empty() ? c.buffer_sweep : parse_sweep(sweep);

  EvalReport report;
  report.config = {{"partition", partition}, {"buffer_capacity", capacity}, {"checkpoints", json::array()}};
  const fs::path out = g.out;
  fs::create_directories(out);
  std::vector<std::pair<std::string, std::string>> rocs;  // (condition, csv)
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    const auto ck = models::load_checkpoint(ckpts[i]);
    const auto& arch = ck.architecture;
    if (arch == "ae") throw std::invalid_argument("eval needs the ae_rf checkpoint produced by 'train rf'");
    if (report.model.empty()) report.model = arch;
    if (arch != report.model) throw std::invalid_argument("all checkpoints must share one architecture");
    const auto ds = load_dataset(datasets[i], {part});
    require_condition(ck, ds);
    require_norm(ck, ds);
    report.config["checkpoints"].push_back({{"file", fs::path(ckpts[i]).filename().string()}, {"meta", ck.meta}, {"condition", ds.condition()}});
    if (arch == "ae_rf") {
      auto r = evaluate_ae_rf(load_ae(ck), load_rf(ck), ds, part, c.windowing.ae_eval_stride);
      rocs.emplace_back(r.condition, roc_csv(r.roc));
      report.conditions.push_back(std::move(r));
    } else if (arch == "cnn") {
      report.conditions.push_back(evaluate_cnn(load_cnn(ck), ds, part, c.windowing.cnn_eval_stride));
    } else if (arch == "lstm") {
      report.conditions.push_back(evaluate_lstm(load_lstm(ck), ds, part, capacity, caps).result);
    } else {
      throw std::invalid_argument("cannot evaluate architecture '" + ck.architecture + "'");
    }
  }
  io::write_text(out / "report.json", render_json(report));
  io::write_text(out / "report.md", render_markdown(report));
  for (std::size_t i = 0; i < rocs.size(); ++i) {
    auto tag = rocs[i].first;
    std::replace(tag.begin(), tag.end(), '/', '-');
    if (i == 0) io::write_text(out / "roc_points.csv", rocs[i].second);
    io::write_text(out / ("roc_points_" + tag + ".csv"), rocs[i].second);
  }
  std::cout << render_markdown(report);
  return 0;
}

/// Exit code 0 if an event fired, 1 if none.
int cmd_detect(const std::string& ckpt, const std::string& input, std::optional<std::size_t> buffer,
               std::optional<std::size_t> warmup_start, double threshold) {
  const auto ck = models::load_checkpoint(ckpt);
  if (ck.architecture != "lstm") throw std::invalid_argument("detect requires an LSTM checkpoint");
  const auto model = load_lstm(ck);
  if (!model.norm) throw std::invalid_argument("checkpoint has no normalization statistics");
  StreamState state(model, buffer.value_or(kDefaultBufferCapacity));

  std::ifstream file;
  if (input != "-") {
    file.open(input);
    if (!file) throw std::runtime_error("cannot open " + input);
  }
  std::istream& in = input == "-" ? std::cin : file;
  const std::size_t width = model.arch().input;
  bool fired = false;
  std::vector<double> sample;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    sample.clear();
    bool ok = true;
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) {
      try {
        std::size_t used = 0;
        sample.push_back(std::stod(tok, &used));
        while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used]))) ++used;
        ok = ok && used == tok.size();
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok || sample.size() != width) {
      std::fprintf(stderr, "warning: line %zu: expected %zu comma-separated numbers, skipped\n", line_no, width);
      continue;
    }
    const auto d = state.push(sample, threshold);
    std::printf("{\"t\":%zu,\"p\":%.6g,\"raw\":%d,\"smoothed\":%d}\n", d.t, static_cast<double>(d.p), d.raw, d.smoothed);
    const bool counts = !warmup_start || d.t >= *warmup_start;
    if (d.smoothed && counts && !fired) {
      fired = true;
      json ev{{"event", "detection"}, {"detect_index", d.t}};
      if (warmup_start) ev["latency"] = d.t - *warmup_start + 1;
      std::fprintf(stderr, "%s\n", ev.dump().c_str());
    }
  }
  std::fflush(stdout);
  return fired ? 0 : 1;
}

int cmd_gradcheck(std::size_t trials, const std::string& corrupt, std::uint64_t seed) {
  if (!corrupt.empty()) {
    bool known = false;
    for (const auto& l : nn::gradcheck_layers()) known = known || corrupt == l.name;
    if (!known) throw std::invalid_argument("unknown layer '" + corrupt + "' for --corrupt");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = nn::run_gradcheck_suite({trials, seed, corrupt});
  bool ok = true;
  std::printf("%-12s %8s %10s %14s %10s  %s\n", "layer", "trials", "checked", "max_rel_err", "tolerance", "result");
  for (const auto& r : results) {
    std::printf("%-12s %8zu %10zu %14.3e %10.0e  %s\n", r.layer.c_str(), r.trials, r.checked, r.max_rel_error,
                r.tolerance, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  std::printf("elapsed %.2f s\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crossfire early-warning pipeline: simulate, train, eval, detect, gradcheck"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Override the seed of the selected command");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--profile", g.profile, "Scale profile")->check(CLI::IsMember({"desk", "paper"}));

  auto* sim = app.add_subcommand("simulate", "Generate a dataset directory");
  std::optional<std::size_t> instances, attacked;
  bool export_w = false, csv = false;
  sim->add_option("--instances", instances, "Number of instances");
  sim->add_option("--attacked", attacked, "Attacked servers per instance (80 or 70 for the two conditions)");
  sim->add_flag("--export-windows", export_w, "Also write CNN/AE/LSTM window files");
  sim->add_flag("--csv", csv, "Also write one CSV per instance");

  auto* train = app.add_subcommand("train", "Train one model on a dataset");
  std::string model, dataset, ae_ckpt;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  train->add_option("model", model, "ae | rf | cnn | lstm")->required()->check(CLI::IsMember({"ae", "rf", "cnn", "lstm"}));
  train->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--ae-checkpoint", ae_ckpt, "Autoencoder checkpoint (required for rf)");
  train->add_option("--epochs", epochs, "Override max epochs");
  train->add_option("--lr", lr, "Override learning rate");

  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints and write report files");
  std::vector<std::string> ckpts, datasets;
  std::string partition = "test", sweep;
  bool allow_leakage = false;
  std::optional<std::size_t> buffer;
  ev->add_option("--checkpoint", ckpts, "Checkpoint (repeatable, paired with --dataset)")->required();
  ev->add_option("--dataset", datasets, "Dataset directory (repeatable)")->required();
  ev->add_option("--partition", partition, "train | val | test")->capture_default_str();
  ev->add_flag("--allow-leakage", allow_leakage, "Permit evaluation on the training split");
  ev->add_option("--buffer", buffer, "Smoothing buffer capacity");
  ev->add_option("--sweep", sweep, "Buffer capacities for the trade-off table, e.g. 1..9 or 3,5,7");

  auto* det = app.add_subcommand("detect", "Stream samples through an LSTM checkpoint");
  std::string det_ckpt, input = "-";
  std::optional<std::size_t> det_buffer, warmup_start;
  double threshold = 0.5;
  det->add_option("--checkpoint", det_ckpt, "LSTM checkpoint")->required();
  det->add_option("--input", input, "Sample file, or - for standard input")->capture_default_str();
  det->add_option("--buffer", det_buffer, "Smoothing buffer capacity");
  det->add_option("--warmup-start", warmup_start, "Known warm-up start; enables latency output");
  det->add_option("--threshold", threshold, "Per-sample probability threshold")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks for every layer type");
  std::size_t trials = 100;
  std::string corrupt;
  gc->add_option("--trials", trials, "Randomized trials per layer")->capture_default_str();
  gc->add_option("--corrupt", corrupt, "Double one layer's analytic gradient (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*sim) return cmd_simulate(g, instances, attacked, export_w, csv);
    if (*train) return cmd_train(g, model, dataset, ae_ckpt, epochs, lr);
    if (*ev) return cmd_eval(g, ckpts, datasets, partition, allow_leakage, buffer, sweep);
    if (*det) return cmd_detect(det_ckpt, input, det_buffer, warmup_start, threshold);
    if (*gc) return cmd_gradcheck(trials, corrupt, g.seed.value_or(1));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
