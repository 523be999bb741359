#pragma once

// Fragments, labeled fragment pairs, and corpus splits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "puzzle/audio.hpp"
#include "puzzle/error.hpp"
#include "puzzle/model.hpp"

namespace puzzle {

struct Fragment {
  std::string song_id;
  std::size_t index = 0;  // chronological position within the song
  std::size_t begin_frame = 0;
  std::size_t end_frame = 0;  // exclusive

  std::size_t frames() const { return end_frame - begin_frame; }
  double begin_sec(double frame_rate = audio::kSampleRate / double(audio::kHop)) const {
    return static_cast<double>(begin_frame) / frame_rate;
  }
  double end_sec(double frame_rate = audio::kSampleRate / double(audio::kHop)) const {
    return static_cast<double>(end_frame) / frame_rate;
  }
  bool operator==(const Fragment&) const = default;
};

/// R1R2 is the only positive class.
enum class PairClass { r1r2, r2r1, r1r3, r3r1 };

inline const char* pair_class_name(PairClass c) {
  switch (c) {
    case PairClass::r1r2: return "R1R2";
    case PairClass::r2r1: return "R2R1";
    case PairClass::r1r3: return "R1R3";
    case PairClass::r3r1: return "R3R1";
  }
  return "?";
}

inline PairClass parse_pair_class(const std::string& s) {
  for (auto c : {PairClass::r1r2, PairClass::r2r1, PairClass::r1r3, PairClass::r3r1}) {
    if (s == pair_class_name(c)) return c;
  }
  throw DataError("unknown pair class '" + s + "'");
}

struct FragmentPair {
  Fragment a;
  Fragment b;
  int label = 0;
  PairClass cls = PairClass::r1r2;
};

struct NegativeClasses {
  bool r2r1 = true;
  bool r1r3 = true;
  bool r3r1 = true;

  bool any() const { return r2r1 || r1r3 || r3r1; }
  bool operator==(const NegativeClasses&) const = default;
};

/// Copies the fragment's rows out of a song spectrogram.
inline Tensor<float> fragment_data(const audio::MelSpectrogram& mel, const Fragment& f) {
  if (f.end_frame > mel.frames() || f.begin_frame >= f.end_frame) {
    throw UsageError("fragment frames [" + std::to_string(f.begin_frame) + ", " +
                     std::to_string(f.end_frame) + ") outside spectrogram of " +
                     std::to_string(mel.frames()) + " frames");
  }
  return mel.data.rows(f.begin_frame, f.end_frame);
}

// ---------------------------------------------------------------------------
// Segmentation

/// n equal fragments; remainder frames are dropped from the end.
inline std::vector<Fragment> segment_fixed(const std::string& song_id, std::size_t total_frames,
                                           std::size_t n,
                                           std::size_t min_frames = kMinFragmentFrames) {
  if (n < 2) throw UsageError("segment_fixed: need at least 2 fragments");
  const std::size_t len = total_frames / n;
  if (len < min_frames) {
    throw DataError("clip of " + std::to_string(total_frames) + " frames is too short for " +
                    std::to_string(n) + " fragments of at least " + std::to_string(min_frames) +
                    " frames");
  }
  std::vector<Fragment> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({song_id, i, i * len, (i + 1) * len});
  return out;
}

struct BoundaryList {
  std::string song_id;
  std::vector<double> boundaries_sec;

  void validate() const {
    for (std::size_t i = 0; i < boundaries_sec.size(); ++i) {
      if (!std::isfinite(boundaries_sec[i]) || boundaries_sec[i] < 0.0) {
        throw DataError("boundary list for " + song_id + " has an invalid time");
      }
      if (i > 0 && !(boundaries_sec[i] > boundaries_sec[i - 1])) {
        throw DataError("boundary list for " + song_id + " is not strictly increasing");
      }
    }
  }
};

inline constexpr double kBoundaryTolerance = 0.30;

/// Picks n-1 cut points from the candidate list, each the unused candidate
/// nearest to the next equally spaced target; every resulting fragment must
/// be within +-30% of total/n frames and at least min_frames long.
inline std::vector<Fragment> segment_at_boundaries(std::size_t total_frames,
                                                   const BoundaryList& boundaries, std::size_t n,
                                                   std::size_t min_frames = kMinFragmentFrames,
                                                   double frame_rate = audio::kSampleRate /
                                                                       double(audio::kHop)) {
  if (n < 2) throw UsageError("segment_at_boundaries: need at least 2 fragments");
  boundaries.validate();
  std::vector<std::size_t> candidates;
  for (double t : boundaries.boundaries_sec) {
    const auto f = static_cast<std::size_t>(std::llround(t * frame_rate));
    if (f > 0 && f < total_frames) candidates.push_back(f);
  }
  std::vector<std::size_t> cuts;
  std::size_t next = 0;  // candidates before this index are used or behind the last cut
  const double target_len = static_cast<double>(total_frames) / static_cast<double>(n);
  for (std::size_t k = 1; k < n; ++k) {
    const double target = target_len * static_cast<double>(k);
    std::size_t best = candidates.size();
    for (std::size_t i = next; i < candidates.size(); ++i) {
      if (best == candidates.size() ||
          std::abs(static_cast<double>(candidates[i]) - target) <
              std::abs(static_cast<double>(candidates[best]) - target)) {
        best = i;
      }
    }
    if (best == candidates.size()) {
      throw DataError("song " + boundaries.song_id + ": not enough boundaries for " +
                      std::to_string(n) + " fragments");
    }
    cuts.push_back(candidates[best]);
    next = best + 1;
  }
  std::vector<Fragment> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t end = i + 1 < n ? cuts[i] : total_frames;
    const double len = static_cast<double>(end - begin);
    if (len < min_frames || std::abs(len - target_len) > kBoundaryTolerance * target_len) {
      throw DataError("song " + boundaries.song_id + ": boundary segmentation infeasible (fragment " +
                      std::to_string(i) + " has " + std::to_string(end - begin) +
                      " frames, target " + std::to_string(target_len) + ")");
    }
    out.push_back({boundaries.song_id, i, begin, end});
    begin = end;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pairs

/// Positives (R_i, R_i+1) and the enabled negative classes (R_i+1, R_i),
/// (R_i, R_i+2), (R_i+2, R_i), in that order.
inline std::vector<FragmentPair> make_pairs(const std::vector<Fragment>& fragments,
                                            const NegativeClasses& negatives = {}) {
  const std::size_t n = fragments.size();
  if (n < 3) throw UsageError("make_pairs: need at least 3 fragments, got " + std::to_string(n));
  std::vector<FragmentPair> out;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    out.push_back({fragments[i], fragments[i + 1], 1, PairClass::r1r2});
  }
  if (negatives.r2r1) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      out.push_back({fragments[i + 1], fragments[i], 0, PairClass::r2r1});
    }
  }
  if (negatives.r1r3) {
    for (std::size_t i = 0; i + 2 < n; ++i) {
      out.push_back({fragments[i], fragments[i + 2], 0, PairClass::r1r3});
    }
  }
  if (negatives.r3r1) {
    for (std::size_t i = 0; i + 2 < n; ++i) {
      out.push_back({fragments[i + 2], fragments[i], 0, PairClass::r3r1});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct CorpusSplit {
  std::vector<std::string> train, validation, test;
};

/// Song-level split; deterministic for a given seed and id set (input order
/// does not matter).
inline CorpusSplit split_corpus(std::vector<std::string> ids, const SplitRatios& ratios,
                                std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw DataError("split_corpus: duplicate song id " +
                    *std::adjacent_find(ids.begin(), ids.end()));
  }
  const double total = ratios.train + ratios.validation + ratios.test;
  if (!(total > 0.0) || ratios.train < 0 || ratios.validation < 0 || ratios.test < 0) {
    throw UsageError("split_corpus: ratios must be non-negative with a positive sum");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(ids[i - 1], ids[pick(rng)]);
  }
  const auto n = static_cast<double>(ids.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * ratios.train / total));
  const auto n_val = std::min(ids.size() - n_train,
                              static_cast<std::size_t>(std::llround(n * ratios.validation / total)));
  CorpusSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                      ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return s;
}

// ---------------------------------------------------------------------------
// File formats

inline BoundaryList read_boundary_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    BoundaryList b{j.at("song_id").get<std::string>(),
                   j.at("boundaries_sec").get<std::vector<double>>()};
    b.validate();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void write_boundary_file(const std::filesystem::path& path, const BoundaryList& b) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << nlohmann::json{{"song_id", b.song_id}, {"boundaries_sec", b.boundaries_sec}}.dump()
      << '\n';
}

struct Section {
  double start_sec = 0.0;
  double end_sec = 0.0;
  std::string label;
};

/// RWC-style section annotation: one "start_sec,end_sec,label" row per
/// section. A non-numeric first row is treated as a header.
inline std::vector<Section> read_sections_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Section> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, label;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, label);
    try {
      std::size_t used_a = 0, used_b = 0;
      Section s{std::stod(a, &used_a), std::stod(b, &used_b), label};
      if (!(s.end_sec > s.start_sec)) {
        throw DataError(path.string() + ":" + std::to_string(row) + ": section end before start");
      }
      if (!out.empty() && s.start_sec < out.back().end_sec - 1e-6) {
        throw DataError(path.string() + ":" + std::to_string(row) + ": overlapping sections");
      }
      out.push_back(std::move(s));
    } catch (const std::invalid_argument&) {
      if (out.empty() && row == 1) continue;
      throw DataError(path.string() + ":" + std::to_string(row) + ": malformed row");
    }
  }
  if (out.empty()) throw DataError(path.string() + ": no sections");
  return out;
}

inline BoundaryList sections_to_boundaries(const std::string& song_id,
                                           const std::vector<Section>& sections) {
  BoundaryList b{song_id, {}};
  for (std::size_t i = 1; i < sections.size(); ++i) b.boundaries_sec.push_back(sections[i].start_sec);
  b.validate();
  return b;
}

inline nlohmann::json pair_to_json(const FragmentPair& p) {
  return {{"song_id", p.a.song_id},
          {"idx_a", p.a.index},
          {"idx_b", p.b.index},
          {"label", p.label},
          {"class", pair_class_name(p.cls)}};
}

inline void write_pair_manifest(const std::filesystem::path& path,
                                const std::vector<FragmentPair>& pairs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& p : pairs) out << pair_to_json(p).dump() << '\n';
}

/// Manifest records reference fragments by index; the caller supplies each
/// song's fragment list.
struct ManifestEntry {
  std::string song_id;
  std::size_t idx_a = 0, idx_b = 0;
  int label = 0;
  PairClass cls = PairClass::r1r2;
};

inline std::vector<ManifestEntry> read_pair_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("song_id").get<std::string>(), j.at("idx_a").get<std::size_t>(),
                     j.at("idx_b").get<std::size_t>(), j.at("label").get<int>(),
                     parse_pair_class(j.at("class").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace puzzle
