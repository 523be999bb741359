#pragma once

// End-user games: ordering one clip from each of several songs (medley) and
// ordering the annotated sections of a whole song (sequencing).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "puzzle/audio.hpp"
#include "puzzle/corpus.hpp"
#include "puzzle/error.hpp"
#include "puzzle/model.hpp"
#include "puzzle/solver.hpp"
#include "puzzle/train.hpp"

namespace puzzle {

inline constexpr double kMedleyMinClipSec = 5.0;
inline constexpr double kMedleyMaxClipSec = 30.0;
inline constexpr double kFadeSec = 0.010;

struct MedleyClip {
  std::string path;
  std::optional<double> in_sec, out_sec;
};

struct MedleyJob {
  std::vector<MedleyClip> clips;
  std::optional<std::vector<std::size_t>> reference;

  void validate() const {
    if (clips.size() < 2) throw UsageError("medley job needs at least two clips");
    if (clips.size() > kHeldKarpMax) throw UsageError("medley job has too many clips");
    if (reference) check_permutation(*reference, clips.size());
  }
};

/// {"clips": [{"path", "in", "out"}, ...], "reference": [...]}; relative
/// clip paths resolve against the job file's directory.
inline MedleyJob read_medley_job(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  MedleyJob job;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& c : j.at("clips")) {
      MedleyClip clip;
      std::filesystem::path p = c.at("path").get<std::string>();
      if (p.is_relative()) p = path.parent_path() / p;
      clip.path = p.string();
      if (c.contains("in")) clip.in_sec = c.at("in").get<double>();
      if (c.contains("out")) clip.out_sec = c.at("out").get<double>();
      job.clips.push_back(std::move(clip));
    }
    if (j.contains("reference")) job.reference = j.at("reference").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  job.validate();
  return job;
}

/// Cuts [in, out) from a clip already at the working sample rate.
inline audio::AudioClip trim_clip(const audio::AudioClip& clip, std::optional<double> in_sec,
                                  std::optional<double> out_sec) {
  const double dur = clip.duration();
  const double a = in_sec.value_or(0.0);
  const double b = out_sec.value_or(dur);
  if (!(a >= 0.0 && b > a && b <= dur + 1e-9)) throw DataError("clip in/out points outside the audio");
  const auto first = static_cast<std::size_t>(std::llround(a * clip.sample_rate));
  const auto last = std::min(clip.samples.size(), static_cast<std::size_t>(std::llround(b * clip.sample_rate)));
  audio::AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(first),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(last));
  return out;
}

inline void check_medley_clip(const audio::AudioClip& clip, std::size_t index) {
  const double d = clip.duration();
  if (d < kMedleyMinClipSec - 1e-9 || d > kMedleyMaxClipSec + 1e-9) {
    throw DataError("medley clip " + std::to_string(index) + " lasts " + std::to_string(d) +
                    " s; clips must last 5 to 30 s");
  }
}

/// Loads, resamples and trims every clip of the job.
inline std::vector<audio::AudioClip> load_medley_clips(const MedleyJob& job) {
  job.validate();
  std::vector<audio::AudioClip> out;
  for (std::size_t i = 0; i < job.clips.size(); ++i) {
    const auto& c = job.clips[i];
    auto clip = trim_clip(audio::resample(audio::load_wav(c.path), audio::kSampleRate), c.in_sec, c.out_sec);
    check_medley_clip(clip, i);
    out.push_back(std::move(clip));
  }
  return out;
}

struct MedleyResult {
  Ordering ordering;
  ScoreMatrix scores;
  std::optional<double> pa, ga;
};

/// Front end, pairwise scores, exact solve.
inline MedleyResult order_medley(const PuzzleModel<float>& model, const audio::CorpusStats& stats,
                                 const std::vector<audio::AudioClip>& clips,
                                 const std::optional<std::vector<std::size_t>>& reference = std::nullopt) {
  if (clips.size() < 2) throw UsageError("medley needs at least two clips");
  std::vector<Tensor<float>> mels;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    auto mel = audio::zscore(audio::mel_from_audio(clips[i]), stats);
    if (mel.frames() < model.min_frames()) {
      throw DataError("medley clip " + std::to_string(i) + " is too short for the model");
    }
    mels.push_back(std::move(mel.data));
  }
  MedleyResult r;
  r.scores = score_all_pairs(clips.size(), [&](std::size_t a, std::size_t b) {
    return static_cast<double>(model.probability(mels[a], mels[b]));
  });
  r.ordering = solve_heldkarp(r.scores);
  if (reference) {
    r.pa = pairwise_accuracy(r.ordering.perm, *reference);
    r.ga = global_accuracy(r.ordering.perm, *reference);
  }
  return r;
}

/// Concatenates the clips in order with a 10 ms linear fade at both ends of
/// each clip. The output is exactly as long as the inputs combined.
inline audio::AudioClip render_medley(const std::vector<audio::AudioClip>& clips,
                                      const std::vector<std::size_t>& order) {
  check_permutation(order, clips.size());
  audio::AudioClip out;
  out.sample_rate = audio::kSampleRate;
  for (auto i : order) {
    const auto& c = clips[i];
    if (c.sample_rate != audio::kSampleRate) throw UsageError("render_medley expects 22050 Hz clips");
    const std::size_t len = c.samples.size();
    const std::size_t fade = std::min(static_cast<std::size_t>(std::llround(kFadeSec * audio::kSampleRate)), len / 2);
    for (std::size_t k = 0; k < len; ++k) {
      float g = 1.0f;
      if (fade > 0 && k < fade) g = static_cast<float>(k) / static_cast<float>(fade);
      if (fade > 0 && len - 1 - k < fade) g = std::min(g, static_cast<float>(len - 1 - k) / static_cast<float>(fade));
      out.samples.push_back(c.samples[k] * g);
    }
  }
  return out;
}

inline nlohmann::json to_json(const MedleyResult& r) {
  nlohmann::json j{{"perm", r.ordering.perm}, {"fitness", r.ordering.fitness}};
  if (r.pa) j["pa"] = *r.pa;
  if (r.ga) j["ga"] = *r.ga;
  return j;
}

// ---------------------------------------------------------------------------
// Sequencing

inline constexpr std::size_t kMaxSequencingSections = 10;

/// One fragment per annotated section, in chronological order, keeping the
/// first ten. A section shorter than the model's minimum input is a DataError
/// naming the section.
inline std::vector<Fragment> section_fragments(const std::string& song_id, const std::vector<Section>& sections,
                                               std::size_t total_frames, std::size_t min_frames,
                                               double frame_rate = audio::kSampleRate / double(audio::kHop)) {
  std::vector<Fragment> out;
  for (const auto& s : sections) {
    if (out.size() == kMaxSequencingSections) break;
    const auto a = std::min<std::size_t>(total_frames, static_cast<std::size_t>(std::llround(s.start_sec * frame_rate)));
    const auto b = std::min<std::size_t>(total_frames, static_cast<std::size_t>(std::llround(s.end_sec * frame_rate)));
    if (b <= a) continue;  // past the end of the audio
    if (b - a < min_frames) {
      throw DataError(song_id + ": section '" + s.label + "' at " + std::to_string(s.start_sec) + " s spans " +
                      std::to_string(b - a) + " frames, under the model's " + std::to_string(min_frames));
    }
    out.push_back({song_id, out.size(), a, b});
  }
  return out;
}

}  // namespace puzzle
