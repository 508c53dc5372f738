#pragma once

// Checkpoint container:
//
//   "XFCK" | u32 version | u32 header_len | header JSON (UTF-8)
//   | float32 blobs (little-endian, in tensor-directory order)
//   | u32 CRC-32 of every preceding byte
//
// The header carries the architecture tag, training metadata, NormStats and
// a tensor directory of {name, shape, offset, count}; offsets are in bytes
// from the start of the blob section.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "xfire/io.hpp"
#include "xfire/nn/tensor.hpp"
#include "xfire/traffic_sim.hpp"

namespace xfire::models {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'X', 'F', 'C', 'K'};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, format, version, checksum };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  nn::Tensor<float> tensor;
  bool operator==(const NamedTensor&) const = default;
};

struct ModelCheckpoint {
  std::string architecture;  // "ae", "ae_rf", "cnn", "lstm"
  nlohmann::json meta = nlohmann::json::object();  // training config, condition, epochs run
  std::optional<NormStats> norm;
  std::vector<NamedTensor> tensors;

  const nn::Tensor<float>& tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.tensor;
    throw CheckpointError(CheckpointError::Kind::format, "checkpoint has no tensor '" + name + "'");
  }
  bool has_tensor(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
  bool operator==(const ModelCheckpoint&) const = default;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::vector<std::uint8_t> to_bytes(const ModelCheckpoint& ck) {
  nlohmann::json header;
  header["architecture"] = ck.architecture;
  header["meta"] = ck.meta;
  header["norm_stats"] = ck.norm ? nlohmann::json{{"global_min", ck.norm->global_min}, {"global_max", ck.norm->global_max}}
                                 : nlohmann::json(nullptr);
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    dir.push_back({{"name", t.name}, {"shape", t.tensor.shape()}, {"offset", offset}, {"count", t.tensor.size()}});
    offset += 4 * t.tensor.size();
  }
  header["tensors"] = dir;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : ck.tensors)
    for (float v : t.tensor.vec()) io::put_f32(out, v);
  io::put_u32(out, crc32_of(out.data(), out.size()));
  return out;
}

inline ModelCheckpoint from_bytes(const std::vector<std::uint8_t>& bytes) {
  using K = CheckpointError::Kind;
  if (bytes.size() < 16) throw CheckpointError(K::checksum, "checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw CheckpointError(K::format, "not a checkpoint (bad magic)");
  const std::uint32_t stored = io::get_u32(bytes.data() + bytes.size() - 4);
  if (crc32_of(bytes.data(), bytes.size() - 4) != stored)
    throw CheckpointError(K::checksum, "checkpoint corrupt (checksum mismatch)");
  const std::uint32_t version = io::get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw CheckpointError(K::version, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t header_len = io::get_u32(bytes.data() + 8);
  if (12 + std::size_t{header_len} + 4 > bytes.size()) throw CheckpointError(K::format, "checkpoint header overruns file");

  ModelCheckpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    ck.architecture = header.at("architecture").get<std::string>();
    ck.meta = header.at("meta");
    if (!header.at("norm_stats").is_null())
      ck.norm = NormStats{header["norm_stats"].at("global_min").get<double>(),
                          header["norm_stats"].at("global_max").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::format, std::string("checkpoint header invalid: ") + e.what());
  }
  const std::size_t blob_begin = 12 + header_len;
  const std::size_t blob_len = bytes.size() - 4 - blob_begin;
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<nn::Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto count = entry.at("count").get<std::uint64_t>();
    if (count != nn::shape_size(shape) || offset + 4 * count > blob_len)
      throw CheckpointError(K::format, "checkpoint tensor directory inconsistent");
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) data[i] = io::get_f32(bytes.data() + blob_begin + offset + 4 * i);
    ck.tensors.push_back({entry.at("name").get<std::string>(), nn::Tensor<float>(shape, std::move(data))});
  }
  return ck;
}

inline void save_checkpoint(const ModelCheckpoint& ck, const std::filesystem::path& path) {
  io::write_file(path, to_bytes(ck));
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::io, e.what());
  }
  return from_bytes(bytes);
}

}  // namespace xfire::models
