#pragma once

// Named-tensor container shared by model checkpoints and spectrogram caches.
//
// Layout (little-endian):
//   8 bytes   magic "PZSEQ001"
//   u64       length of the JSON header in bytes
//   header    {"<name>": {"dtype": "f32", "shape": [...], "byte_offset": n}, ...,
//              "config": {...}}
//   payload   raw f32 tensors; byte_offset is relative to the payload start
//
// Tensors are written in name order, so equal contents give equal bytes.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "puzzle/error.hpp"
#include "puzzle/tensor.hpp"

namespace puzzle {

inline constexpr std::array<char, 8> kCheckpointMagic{'P', 'Z', 'S', 'E', 'Q', '0', '0', '1'};
inline constexpr const char* kConfigKey = "config";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

struct TensorArchive {
  std::map<std::string, Tensor<float>> tensors;
  nlohmann::json config = nlohmann::json::object();

  const Tensor<float>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("archive has no tensor named '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

inline std::vector<char> encode_archive(const TensorArchive& archive) {
  nlohmann::json header = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    if (name == kConfigKey) throw UsageError("tensor name 'config' is reserved");
    header[name] = {{"dtype", "f32"}, {"shape", t.shape()}, {"byte_offset", offset}};
    offset += t.size() * sizeof(float);
  }
  header[kConfigKey] = archive.config;
  const std::string text = header.dump();
  const std::uint64_t header_len = text.size();

  std::vector<char> bytes;
  bytes.reserve(16 + text.size() + offset);
  bytes.insert(bytes.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  const auto* len_bytes = reinterpret_cast<const char*>(&header_len);
  bytes.insert(bytes.end(), len_bytes, len_bytes + sizeof(header_len));
  bytes.insert(bytes.end(), text.begin(), text.end());
  for (const auto& [name, t] : archive.tensors) {
    const auto* p = reinterpret_cast<const char*>(t.ptr());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(float));
  }
  return bytes;
}

inline TensorArchive decode_archive(const std::vector<char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic.data(), 8) != 0) {
    throw DataError("not a PZSEQ001 archive");
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, sizeof(header_len));
  if (header_len > bytes.size() - 16) throw DataError("archive header length out of range");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16,
                                   bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("archive header is not valid JSON: ") + e.what());
  }
  const std::size_t payload = 16 + header_len;
  TensorArchive archive;
  for (const auto& [name, entry] : header.items()) {
    if (name == kConfigKey) {
      archive.config = entry;
      continue;
    }
    if (entry.value("dtype", "") != "f32") throw DataError("tensor " + name + ": unsupported dtype");
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("byte_offset").get<std::uint64_t>();
    const std::size_t n = shape_size(shape);
    if (payload + offset + n * sizeof(float) > bytes.size()) {
      throw DataError("tensor " + name + " extends past end of archive");
    }
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes.data() + payload + offset, n * sizeof(float));
    archive.tensors.emplace(name, Tensor<float>(shape, std::move(data)));
  }
  return archive;
}

inline void save_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  const auto bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

inline TensorArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

}  // namespace puzzle
