#pragma once

// On-disk spectrogram cache. Each song is <id>.pzt (tensor archive, key
// "mel", raw log-mel) plus an <id>.json sidecar; optional cut points live in
// <id>.boundaries.json.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "puzzle/audio.hpp"
#include "puzzle/checkpoint.hpp"
#include "puzzle/corpus.hpp"
#include "puzzle/error.hpp"

namespace puzzle::cache {

namespace fs = std::filesystem;

struct Entry {
  std::string id;
  std::string source;
  int sample_rate = audio::kSampleRate;
  audio::MelSpectrogram mel;  // raw log-mel, not normalized
};

inline fs::path mel_path(const fs::path& dir, const std::string& id) { return dir / (id + ".pzt"); }
inline fs::path sidecar_path(const fs::path& dir, const std::string& id) { return dir / (id + ".json"); }
inline fs::path boundary_path(const fs::path& dir, const std::string& id) {
  return dir / (id + ".boundaries.json");
}

inline void write_entry(const fs::path& dir, const Entry& e) {
  if (e.id.empty()) throw UsageError("cache entry needs an id");
  if (e.mel.normalized) throw UsageError("cache stores raw log-mel, got a normalized spectrogram");
  fs::create_directories(dir);
  TensorArchive ar;
  ar.tensors.emplace("mel", e.mel.data);
  save_archive(mel_path(dir, e.id), ar);
  const nlohmann::json side{{"source", e.source}, {"sample_rate", e.sample_rate}, {"frames", e.mel.frames()}};
  std::ofstream out(sidecar_path(dir, e.id));
  if (!out) throw DataError("cannot write " + sidecar_path(dir, e.id).string());
  out << side.dump(2) << '\n';
}

inline Entry read_entry(const fs::path& dir, const std::string& id) {
  Entry e;
  e.id = id;
  const auto ar = load_archive(mel_path(dir, id));
  e.mel.data = ar.at("mel");
  if (e.mel.data.rank() != 2 || e.mel.data.dim(1) != audio::kMelBands) {
    throw DataError(id + ": cached mel must be [frames, 128]");
  }
  std::ifstream in(sidecar_path(dir, id));
  if (!in) throw DataError("missing sidecar for " + id);
  try {
    const auto side = nlohmann::json::parse(in);
    e.source = side.at("source").get<std::string>();
    e.sample_rate = side.at("sample_rate").get<int>();
    if (side.at("frames").get<std::size_t>() != e.mel.frames()) {
      throw DataError(id + ": sidecar frame count disagrees with the cached tensor");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(id + ": bad sidecar: " + ex.what());
  }
  return e;
}

/// Sorted ids of every cached song in dir.
inline std::vector<std::string> list_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("cache directory not found: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& f : fs::directory_iterator(dir)) {
    if (f.is_regular_file() && f.path().extension() == ".pzt") ids.push_back(f.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline std::optional<BoundaryList> read_boundaries(const fs::path& dir, const std::string& id) {
  const auto p = boundary_path(dir, id);
  if (!fs::exists(p)) return std::nullopt;
  return read_boundary_file(p);
}

struct PreprocessSummary {
  std::size_t songs = 0;
  std::size_t with_boundaries = 0;
};

/// Every .wav under in_dir goes through the front end into out_dir. When
/// boundary_dir is given, <id>.json (boundary list) or <id>.csv (sections)
/// found there is copied into the cache as <id>.boundaries.json.
inline PreprocessSummary preprocess(const fs::path& in_dir, const fs::path& out_dir,
                                    const std::optional<fs::path>& boundary_dir) {
  if (!fs::is_directory(in_dir)) throw DataError("input directory not found: " + in_dir.string());
  std::vector<fs::path> wavs;
  for (const auto& f : fs::directory_iterator(in_dir)) {
    auto ext = f.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (f.is_regular_file() && ext == ".wav") wavs.push_back(f.path());
  }
  std::sort(wavs.begin(), wavs.end());
  if (wavs.empty()) throw DataError("no .wav files in " + in_dir.string());
  PreprocessSummary summary;
  for (const auto& w : wavs) {
    const auto clip = audio::load_wav(w);
    Entry e;
    e.id = w.stem().string();
    e.source = w.string();
    e.sample_rate = clip.sample_rate;
    e.mel = audio::mel_from_audio(clip);
    write_entry(out_dir, e);
    ++summary.songs;
    if (!boundary_dir) continue;
    const auto json_file = *boundary_dir / (e.id + ".json");
    const auto csv_file = *boundary_dir / (e.id + ".csv");
    if (fs::exists(json_file)) {
      auto b = read_boundary_file(json_file);
      b.song_id = e.id;
      write_boundary_file(boundary_path(out_dir, e.id), b);
      ++summary.with_boundaries;
    } else if (fs::exists(csv_file)) {
      write_boundary_file(boundary_path(out_dir, e.id), sections_to_boundaries(e.id, read_sections_csv(csv_file)));
      ++summary.with_boundaries;
    }
  }
  return summary;
}

}  // namespace puzzle::cache
