#pragma once

// Glue between the cache, the splits and the trainer: what the CLI and the
// acceptance harness both need.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "puzzle/audio.hpp"
#include "puzzle/cache.hpp"
#include "puzzle/corpus.hpp"
#include "puzzle/error.hpp"
#include "puzzle/synth.hpp"
#include "puzzle/train.hpp"

namespace puzzle {

enum class Segmentation { fixed, boundary };

inline Segmentation parse_segmentation(const std::string& s) {
  if (s == "fixed") return Segmentation::fixed;
  if (s == "boundary") return Segmentation::boundary;
  throw UsageError("unknown segmentation '" + s + "' (expected fixed or boundary)");
}

/// Corpus statistics over the given cached songs, rounded to what a
/// checkpoint stores so that training and reloaded evaluation agree.
inline audio::CorpusStats cache_stats(const std::filesystem::path& dir, const std::vector<std::string>& ids) {
  std::vector<audio::MelSpectrogram> mels;
  mels.reserve(ids.size());
  for (const auto& id : ids) mels.push_back(cache::read_entry(dir, id).mel);
  return stored_stats(audio::compute_stats(mels));
}

struct PuzzleSet {
  std::vector<JigsawSong> songs;
  std::vector<std::string> skipped;  // songs whose cut points did not fit
};

/// Normalized n-piece puzzles for the given songs. Boundary segmentation
/// reads <id>.boundaries.json and skips songs without a usable cut set.
inline PuzzleSet puzzle_set(const std::filesystem::path& dir, const std::vector<std::string>& ids,
                            const audio::CorpusStats& stats, std::size_t n, std::size_t min_frames,
                            Segmentation seg = Segmentation::fixed) {
  PuzzleSet out;
  for (const auto& id : ids) {
    auto mel = audio::zscore(cache::read_entry(dir, id).mel, stats);
    if (seg == Segmentation::fixed) {
      out.songs.push_back(fixed_jigsaw(id, mel, n, min_frames));
      continue;
    }
    const auto b = cache::read_boundaries(dir, id);
    if (!b) {
      out.skipped.push_back(id);
      continue;
    }
    try {
      JigsawSong s{id, std::move(mel.data), {}};
      s.fragments = segment_at_boundaries(s.mel.dim(0), *b, n, min_frames);
      for (auto& f : s.fragments) f.song_id = id;
      out.songs.push_back(std::move(s));
    } catch (const DataError&) {
      out.skipped.push_back(id);
    }
  }
  return out;
}

inline std::string synth_song_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth-%05zu", index);
  return buf;
}

/// Writes params.n_songs generated songs into the cache. With wav set, each
/// song is rendered as audio and passed through the front end; audio_dir,
/// when given, also receives the WAV files.
inline void synth_to_cache(const synth::SynthParams& params, const std::filesystem::path& out_dir, bool wav,
                           const std::optional<std::filesystem::path>& audio_dir = std::nullopt) {
  params.validate();
  if (audio_dir) std::filesystem::create_directories(*audio_dir);
  for (std::size_t i = 0; i < params.n_songs; ++i) {
    cache::Entry e;
    e.id = synth_song_id(i);
    e.source = std::string(wav ? "synth-wav" : "synth-mel") + ":seed=" + std::to_string(params.seed) +
               ":index=" + std::to_string(i);
    if (wav) {
      const auto clip = synth::gen_wav_song(params, i);
      if (audio_dir) audio::write_wav(*audio_dir / (e.id + ".wav"), clip);
      e.mel = audio::mel_from_audio(clip);
    } else {
      e.mel = synth::gen_mel_song(params, i);
    }
    cache::write_entry(out_dir, e);
  }
}

struct TrainingRun {
  Checkpoint checkpoint;
  TrainResult result;
};

/// Split, normalize, calibrate, train. The checkpoint holds the best epoch.
inline TrainingRun train_from_cache(const std::filesystem::path& dir, const TrainConfig& cfg,
                                    const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  const auto split = split_corpus(cache::list_ids(dir), cfg.split, cfg.split_seed);
  if (split.train.empty() || split.validation.empty()) throw DataError("train: cache too small to split");
  const auto stats = cache_stats(dir, split.train);
  const std::size_t min_frames = min_fragment_frames(cfg.arch());
  const auto train_set = puzzle_set(dir, split.train, stats, cfg.pieces, min_frames);
  const auto val_set = puzzle_set(dir, split.validation, stats, cfg.pieces, min_frames);
  auto model = initial_model(cfg, train_set.songs);
  TrainingRun run;
  run.result = train(model, cfg, train_set.songs, val_set.songs, on_epoch);
  run.checkpoint.arch = cfg.arch();
  run.checkpoint.config = cfg;
  run.checkpoint.stats = stats;
  run.checkpoint.params = run.result.best;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& e : run.result.history) history.push_back(to_json(e));
  run.checkpoint.extra = {{"best_epoch", run.result.best_epoch},
                          {"best_val_pa", run.result.best_val_pa},
                          {"history", history},
                          {"train_songs", split.train.size()}};
  return run;
}

/// The songs of one split, recomputed from the checkpoint's split settings.
inline std::vector<std::string> split_ids(const std::filesystem::path& dir, const TrainConfig& cfg,
                                          const std::string& which) {
  auto ids = cache::list_ids(dir);
  if (which == "all") return ids;
  const auto split = split_corpus(std::move(ids), cfg.split, cfg.split_seed);
  if (which == "train") return split.train;
  if (which == "validation") return split.validation;
  if (which == "test") return split.test;
  throw UsageError("unknown split '" + which + "' (expected train, validation, test or all)");
}

}  // namespace puzzle
