#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "puzzle/audio.hpp"
#include "puzzle/corpus.hpp"
#include "puzzle/synth.hpp"

using namespace puzzle;
using namespace puzzle::synth;

namespace {

double frame_distance(const Tensor<float>& a, std::size_t fa, const Tensor<float>& b, std::size_t fb) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.dim(1); ++k) {
    const double d = double(a(fa, k)) - double(b(fb, k));
    s += d * d;
  }
  return std::sqrt(s);
}

double mean_step(const Tensor<float>& a, const Tensor<float>& b) {
  // mean |a_t - b_t| over frames and bins; a == b shifted by one frame gives
  // the within-song step
  double s = 0.0;
  const std::size_t frames = std::min(a.dim(0), b.dim(0));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < a.dim(1); ++k) s += std::abs(double(a(t, k)) - double(b(t, k)));
  }
  return s / double(frames * a.dim(1));
}

// Fraction of (R_i, R_i+1) joins whose edge-frame distance beats R_i joined
// to randomly drawn other fragments of the corpus.
double continuity_rate(const std::vector<Tensor<float>>& mels, std::size_t n, std::size_t draws) {
  struct Piece {
    std::size_t song, begin, end;
  };
  std::vector<std::vector<Piece>> pieces;
  std::vector<Piece> all;
  for (std::size_t s = 0; s < mels.size(); ++s) {
    pieces.emplace_back();
    for (const auto& f : segment_fixed("s", mels[s].dim(0), n)) {
      pieces.back().push_back({s, f.begin_frame, f.end_frame});
      all.push_back(pieces.back().back());
    }
  }
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  std::size_t wins = 0, total = 0;
  for (const auto& song : pieces) {
    for (std::size_t i = 0; i + 1 < song.size(); ++i) {
      const auto& a = song[i];
      const double truth = frame_distance(mels[a.song], a.end - 1, mels[a.song], song[i + 1].begin);
      for (std::size_t d = 0; d < draws; ++d) {
        const auto& o = all[pick(rng)];
        if (o.song == a.song && (o.begin == song[i + 1].begin || o.begin == a.begin)) continue;
        ++total;
        if (truth < frame_distance(mels[a.song], a.end - 1, mels[o.song], o.begin)) ++wins;
      }
    }
  }
  return double(wins) / double(total);
}

}  // namespace

TEST(SynthParams, Validation) {
  SynthParams p;
  EXPECT_NO_THROW(p.validate());
  p.alpha = 1.0;
  EXPECT_THROW(p.validate(), UsageError);
  p = SynthParams{};
  p.duration_sec = 8.0;  // 343 frames, under 120 per piece
  EXPECT_THROW(p.validate(), UsageError);
  p = SynthParams{};
  p.motif_count = 0;
  EXPECT_THROW(p.validate(), UsageError);
  EXPECT_EQ(SynthParams{}.frames(), 1030u);
}

TEST(MelSynth, DeterministicAndSeedSensitive) {
  SynthParams p;
  const auto a = gen_mel_song(p, 3), b = gen_mel_song(p, 3), c = gen_mel_song(p, 4);
  EXPECT_EQ(a.data, b.data);
  EXPECT_NE(a.data, c.data);
  EXPECT_EQ(a.frames(), 1030u);
  EXPECT_TRUE(a.data.all_finite());
}

TEST(MelSynth, NoNoiseAndSlowLimitIsConstant) {
  SynthParams p;
  p.noise_std = 0.0;
  p.alpha = 1.0 - 1e-9;
  const auto m = gen_mel_song(p, 0);
  for (std::size_t t = 0; t < m.frames(); ++t) {
    for (std::size_t k = 0; k < 128; ++k) ASSERT_NEAR(m.data(t, k), m.data(0, k), 1e-4);
  }
}

TEST(MelSynth, WithinSongStepsAreSmallerThanCrossSong) {
  SynthParams p;
  double within = 0.0, across = 0.0;
  for (std::size_t s = 0; s < 100; ++s) {
    const auto a = gen_mel_song(p, s).data;
    const auto b = gen_mel_song(p, s + 100).data;
    within += mean_step(a.rows(0, a.dim(0) - 1), a.rows(1, a.dim(0)));
    across += mean_step(a, b);
  }
  EXPECT_LT(within, across);
}

TEST(MelSynth, ContinuityOracle) {
  SynthParams p;
  std::vector<Tensor<float>> mels;
  for (std::size_t s = 0; s < 100; ++s) mels.push_back(gen_mel_song(p, s).data);
  EXPECT_GE(continuity_rate(mels, 3, 5), 0.99);
}

TEST(WavSynth, DeterministicLengthAndFinite) {
  SynthParams p;
  const auto a = gen_wav_song(p, 1), b = gen_wav_song(p, 1);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.samples.size(), 24u * 22050u);
  EXPECT_EQ(a.sample_rate, 22050);
  for (auto v : a.samples) ASSERT_TRUE(std::isfinite(v));
  EXPECT_NE(gen_wav_song(p, 2).samples, a.samples);
}

TEST(WavSynth, DriftIsBounded) {
  SynthParams p;
  WavSynth w(p, 5);
  const auto timbre = w.make_timbre(6);
  auto prev = w.frequencies();
  for (int f = 0; f < 400; ++f) {
    (void)w.render(1, timbre);
    const auto now = w.frequencies();
    for (std::size_t v = 0; v < WavSynth::kVoices; ++v) {
      ASSERT_LE(std::abs(now[v] - prev[v]), WavSynth::kMaxDriftHz + 1e-9);
      ASSERT_GE(now[v], WavSynth::kMinHz);
      ASSERT_LE(now[v], WavSynth::kMaxHz);
    }
    prev = now;
  }
}

TEST(WavSynth, FrontEndContinuityMatchesTheMelGenerator) {
  SynthParams p;
  std::vector<Tensor<float>> mels;
  double within = 0.0, across = 0.0;
  for (std::size_t s = 0; s < 20; ++s) mels.push_back(audio::mel_from_audio(gen_wav_song(p, s)).data);
  for (std::size_t s = 0; s < 20; ++s) {
    const auto& a = mels[s];
    within += mean_step(a.rows(0, a.dim(0) - 1), a.rows(1, a.dim(0)));
    across += mean_step(a, mels[(s + 1) % 20]);
  }
  EXPECT_LT(within, across);
  EXPECT_GE(continuity_rate(mels, 3, 25), 0.99);
}

TEST(MedleyChain, ClipsJoinSmoothly) {
  SynthParams p;
  const std::vector<std::size_t> songs{4, 9, 2, 7};
  const auto clips = gen_medley_chain(p, songs, 6.0, 1);
  ASSERT_EQ(clips.size(), 4u);
  std::vector<Tensor<float>> mels;
  for (const auto& c : clips) {
    EXPECT_EQ(c.sample_rate, 22050);
    EXPECT_NEAR(c.duration(), 6.0, 512.0 / 22050.0);
    mels.push_back(audio::mel_from_audio(c).data);
  }
  // each clip's tail is closer to its successor's head than to any other head
  for (std::size_t k = 0; k + 1 < mels.size(); ++k) {
    const double next = frame_distance(mels[k], mels[k].dim(0) - 1, mels[k + 1], 0);
    for (std::size_t o = 0; o < mels.size(); ++o) {
      if (o == k || o == k + 1) continue;
      EXPECT_LT(next, frame_distance(mels[k], mels[k].dim(0) - 1, mels[o], 0));
    }
  }
  EXPECT_THROW(gen_medley_chain(p, {1}, 6.0, 1), UsageError);
  EXPECT_EQ(gen_medley_chain(p, songs, 6.0, 1)[2].samples, clips[2].samples);
}
