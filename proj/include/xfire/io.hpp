#pragma once

// Byte-level helpers and the on-disk dataset layout.
//
// A dataset directory holds manifest.json plus one instance_NNNNN.xfir per
// instance:
//
//   "XFIR" | u32 version | u32 rows | u32 cols
//   | rows*cols float32, little-endian, row-major | rows label bytes (0/1)
//
// Windowed exports reuse the container with one row per window.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "xfire/dataset.hpp"
#include "xfire/traffic_sim.hpp"

namespace xfire::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::uint32_t kInstanceVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr char kInstanceMagic[4] = {'X', 'F', 'I', 'R'};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

inline std::uint32_t crc32_bytes(const std::string& s) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

// ------------------------------------------------------------ matrix container

struct LabeledMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> labels;
};

inline std::vector<std::uint8_t> encode_matrix(const LabeledMatrix& m) {
  if (m.values.size() != std::size_t{m.rows} * m.cols || m.labels.size() != m.rows)
    throw std::invalid_argument("encode_matrix: inconsistent sizes");
  std::vector<std::uint8_t> out;
  out.reserve(16 + 4 * m.values.size() + m.rows);
  out.insert(out.end(), std::begin(kInstanceMagic), std::end(kInstanceMagic));
  put_u32(out, kInstanceVersion);
  put_u32(out, m.rows);
  put_u32(out, m.cols);
  for (float v : m.values) put_f32(out, v);
  for (auto l : m.labels) out.push_back(l ? 1 : 0);
  return out;
}

inline LabeledMatrix decode_matrix(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kInstanceMagic, 4) != 0)
    throw FormatError("not an XFIR container");
  const auto version = get_u32(bytes.data() + 4);
  if (version != kInstanceVersion) throw FormatError("unsupported XFIR version " + std::to_string(version));
  LabeledMatrix m;
  m.rows = get_u32(bytes.data() + 8);
  m.cols = get_u32(bytes.data() + 12);
  const std::size_t n = std::size_t{m.rows} * m.cols;
  if (bytes.size() != 16 + 4 * n + m.rows) throw FormatError("XFIR container has wrong length");
  m.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.values[i] = get_f32(bytes.data() + 16 + 4 * i);
  m.labels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(16 + 4 * n), bytes.end());
  for (auto l : m.labels)
    if (l > 1) throw FormatError("XFIR label byte out of range");
  return m;
}

inline std::vector<std::uint8_t> encode_instance(const UtilizationInstance& inst) {
  LabeledMatrix m{static_cast<std::uint32_t>(inst.rows), static_cast<std::uint32_t>(inst.cols),
                  std::vector<float>(inst.values.begin(), inst.values.end()), inst.labels};
  return encode_matrix(m);
}

inline UtilizationInstance decode_instance(const std::vector<std::uint8_t>& bytes) {
  const auto m = decode_matrix(bytes);
  UtilizationInstance inst;
  inst.rows = m.rows;
  inst.cols = m.cols;
  inst.values.assign(m.values.begin(), m.values.end());
  inst.labels = m.labels;
  return inst;
}

/// Rounds values to the stored 32-bit precision so in-memory and on-disk data agree.
inline void round_to_storage(UtilizationInstance& inst) {
  for (auto& v : inst.values) v = static_cast<double>(static_cast<float>(v));
}

// ------------------------------------------------------------ JSON mappings

inline json to_json(const ScenarioConfig& c) {
  return json{{"n_servers", c.n_servers},       {"n_attacked", c.n_attacked},
              {"pre_len", c.pre_len},           {"warmup_len", c.warmup_len},
              {"plateau_len", c.plateau_len},   {"n_instances", c.n_instances},
              {"master_seed", c.master_seed},   {"bots_min", c.bots_min},
              {"bots_max", c.bots_max},         {"ramp_jitter", c.ramp_jitter},
              {"mean_rate_min", c.mean_rate_min}, {"mean_rate_max", c.mean_rate_max},
              {"std_rate_min", c.std_rate_min}, {"std_rate_max", c.std_rate_max},
              {"bot_rate_min", c.bot_rate_min}, {"bot_rate_max", c.bot_rate_max}};
}

/// Missing keys keep the defaults already in `c`.
inline void from_json(const json& j, ScenarioConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("n_servers", c.n_servers);
  get("n_attacked", c.n_attacked);
  get("pre_len", c.pre_len);
  get("warmup_len", c.warmup_len);
  get("plateau_len", c.plateau_len);
  get("n_instances", c.n_instances);
  get("master_seed", c.master_seed);
  get("bots_min", c.bots_min);
  get("bots_max", c.bots_max);
  get("ramp_jitter", c.ramp_jitter);
  get("mean_rate_min", c.mean_rate_min);
  get("mean_rate_max", c.mean_rate_max);
  get("std_rate_min", c.std_rate_min);
  get("std_rate_max", c.std_rate_max);
  get("bot_rate_min", c.bot_rate_min);
  get("bot_rate_max", c.bot_rate_max);
}

inline json to_json(const NormStats& s) { return json{{"global_min", s.global_min}, {"global_max", s.global_max}}; }

inline NormStats norm_stats_from_json(const json& j) {
  NormStats s{j.at("global_min").get<double>(), j.at("global_max").get<double>()};
  s.validate();
  return s;
}

// ------------------------------------------------------------ dataset directory

struct InstanceRecord {
  std::size_t id = 0;
  std::string file;
  std::uint64_t seed = 0;
  std::vector<std::size_t> attacked;
};

struct DatasetManifest {
  std::uint32_t format_version = kManifestVersion;
  ScenarioConfig scenario;
  NormStats norm;
  SplitSpec split;
  std::vector<ServerProfile> profiles;
  std::vector<InstanceRecord> instances;
  json extra = json::object();  // e.g. window descriptors, run config
};

inline std::string instance_file_name(std::size_t i) {
  std::ostringstream os;
  os << "instance_" << std::setw(5) << std::setfill('0') << i << ".xfir";
  return os.str();
}

inline json to_json(const DatasetManifest& m) {
  json profiles = json::array();
  for (const auto& p : m.profiles) profiles.push_back({{"mean_rate", p.mean_rate}, {"std_rate", p.std_rate}});
  json instances = json::array();
  for (const auto& r : m.instances)
    instances.push_back({{"id", r.id}, {"file", r.file}, {"seed", r.seed}, {"attacked", r.attacked}});
  return json{{"format_version", m.format_version},
              {"scenario", to_json(m.scenario)},
              {"condition", m.scenario.condition_tag()},
              {"norm_stats", to_json(m.norm)},
              {"split",
               {{"seed", m.split.seed},
                {"fractions", {m.split.train_fraction, m.split.val_fraction, m.split.test_fraction}},
                {"train", m.split.train},
                {"val", m.split.val},
                {"test", m.split.test}}},
              {"profiles", profiles},
              {"instances", instances},
              {"extra", m.extra}};
}

inline DatasetManifest manifest_from_json(const json& j) {
  DatasetManifest m;
  m.format_version = j.at("format_version").get<std::uint32_t>();
  if (m.format_version != kManifestVersion)
    throw FormatError("unsupported manifest version " + std::to_string(m.format_version));
  from_json(j.at("scenario"), m.scenario);
  m.norm = norm_stats_from_json(j.at("norm_stats"));
  const auto& s = j.at("split");
  m.split.seed = s.at("seed").get<std::uint64_t>();
  m.split.train = s.at("train").get<std::vector<std::size_t>>();
  m.split.val = s.at("val").get<std::vector<std::size_t>>();
  m.split.test = s.at("test").get<std::vector<std::size_t>>();
  m.split.assignment.assign(m.scenario.n_instances, Partition::train);
  for (auto i : m.split.val) m.split.assignment.at(i) = Partition::val;
  for (auto i : m.split.test) m.split.assignment.at(i) = Partition::test;
  for (const auto& p : j.at("profiles")) m.profiles.push_back({p.at("mean_rate"), p.at("std_rate")});
  for (const auto& r : j.at("instances"))
    m.instances.push_back({r.at("id"), r.at("file"), r.at("seed"), r.at("attacked").get<std::vector<std::size_t>>()});
  if (j.contains("extra")) m.extra = j.at("extra");
  return m;
}

inline std::string manifest_text(const DatasetManifest& m) { return to_json(m).dump(2) + "\n"; }

/// Writes every instance file and then manifest.json. Returns the CRC-32 of the manifest text.
inline std::uint32_t write_dataset(const fs::path& dir, const DatasetManifest& manifest,
                                   const std::vector<UtilizationInstance>& instances) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < instances.size(); ++i)
    write_file(dir / manifest.instances.at(i).file, encode_instance(instances[i]));
  const auto text = manifest_text(manifest);
  write_text(dir / "manifest.json", text);
  return crc32_bytes(text);
}

inline DatasetManifest read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw std::runtime_error("no manifest.json in " + dir.string());
  return manifest_from_json(json::parse(read_text(path)));
}

inline UtilizationInstance read_instance(const fs::path& dir, const DatasetManifest& m, std::size_t id) {
  const auto& rec = m.instances.at(id);
  auto inst = decode_instance(read_file(dir / rec.file));
  if (inst.cols != m.scenario.n_servers || inst.rows != m.scenario.length())
    throw FormatError(rec.file + ": shape does not match manifest");
  inst.attacked_set = rec.attacked;
  inst.instance_seed = rec.seed;
  return inst;
}

inline std::vector<UtilizationInstance> read_instances(const fs::path& dir, const DatasetManifest& m,
                                                       const std::vector<std::size_t>& ids) {
  std::vector<UtilizationInstance> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(read_instance(dir, m, id));
  return out;
}

/// CSV with header `t,label,s0..s{cols-1}`.
inline std::string instance_csv(const UtilizationInstance& inst) {
  std::ostringstream os;
  os << "t,label";
  for (std::size_t s = 0; s < inst.cols; ++s) os << ",s" << s;
  os << '\n';
  char buf[32];
  for (std::size_t t = 0; t < inst.rows; ++t) {
    os << t << ',' << int(inst.labels[t]);
    for (std::size_t s = 0; s < inst.cols; ++s) {
      std::snprintf(buf, sizeof buf, ",%.9g", inst.at(t, s));
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

// ------------------------------------------------------------ windowed export

struct WindowDescriptor {
  std::string type;        // "cnn", "ae", "lstm"
  std::size_t stride = 1;
  std::string label_rule;  // human-readable rule
  std::vector<std::size_t> window_shape;
};

inline json to_json(const WindowDescriptor& w) {
  return json{{"type", w.type}, {"stride", w.stride}, {"label_rule", w.label_rule}, {"window_shape", w.window_shape}};
}

/// One row per window: flattened values, and a single label byte (for LSTM
/// sequences, the byte is 1 if any step is labeled; per-step labels go in a
/// side file).
template <class Window>
LabeledMatrix windows_to_matrix(const std::vector<Window>& windows) {
  LabeledMatrix m;
  if (windows.empty()) return m;
  const auto& first = [&]() -> const std::vector<float>& {
    if constexpr (requires { windows[0].grid; }) return windows[0].grid;
    else if constexpr (requires { windows[0].vector; }) return windows[0].vector;
    else return windows[0].steps;
  }();
  m.rows = static_cast<std::uint32_t>(windows.size());
  m.cols = static_cast<std::uint32_t>(first.size());
  m.values.reserve(std::size_t{m.rows} * m.cols);
  for (const auto& w : windows) {
    if constexpr (requires { w.grid; }) {
      m.values.insert(m.values.end(), w.grid.begin(), w.grid.end());
      m.labels.push_back(w.label ? 1 : 0);
    } else if constexpr (requires { w.vector; }) {
      m.values.insert(m.values.end(), w.vector.begin(), w.vector.end());
      m.labels.push_back(w.label ? 1 : 0);
    } else {
      m.values.insert(m.values.end(), w.steps.begin(), w.steps.end());
      bool any = false;
      for (auto l : w.step_labels) any = any || l;
      m.labels.push_back(any ? 1 : 0);
    }
  }
  return m;
}

}  // namespace xfire::io
