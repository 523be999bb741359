#pragma once

// Synthetic songs with real temporal coherence: slowly evolving state plus
// a recurring motif schedule, so consecutive fragments join smoothly and
// distant ones do not.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "puzzle/audio.hpp"
#include "puzzle/error.hpp"

namespace puzzle::synth {

inline constexpr std::size_t kMinPieceFrames = 120;

struct SynthParams {
  std::uint64_t seed = 1;
  std::size_t n_songs = 100;
  double duration_sec = 24.0;
  double alpha = 0.98;  // frame-to-frame AR coefficient
  std::size_t motif_count = 4;
  std::size_t motif_period_frames = 64;
  double noise_std = 0.1;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("synth: alpha must lie in (0, 1)");
    if (motif_count == 0 || motif_period_frames == 0) {
      throw UsageError("synth: motif_count and motif_period_frames must be positive");
    }
    if (noise_std < 0.0) throw UsageError("synth: noise_std must be non-negative");
    if (frames() / 3 < kMinPieceFrames) {
      throw UsageError("synth: duration must give at least 120 frames per piece of a 3-piece puzzle");
    }
  }

  std::size_t samples() const {
    return static_cast<std::size_t>(std::llround(duration_sec * audio::kSampleRate));
  }
  std::size_t frames() const { return audio::stft_frame_count(samples()); }
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + index * 0xBF58476D1CE4E5B9ULL +
                    stream * 0x94D049BB133111EBULL + 0x2545F4914F6CDD1DULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::size_t active_motif(const SynthParams& p, std::size_t frame) {
  return (frame / p.motif_period_frames) % p.motif_count;
}

/// x_t = alpha x_{t-1} + (1 - alpha) m_{motif(t)} + eps_t, starting at m_0;
/// motif(t) cycles through the song's motifs every motif_period_frames.
inline audio::MelSpectrogram gen_mel_song(const SynthParams& p, std::size_t song_index) {
  p.validate();
  std::mt19937_64 rng(mix_seed(p.seed, song_index));
  std::normal_distribution<double> unit(0.0, 1.0);
  const std::size_t bins = audio::kMelBands;
  // Per-song spectral envelope plus per-motif variation, in log-energy units.
  std::vector<double> envelope(bins);
  for (std::size_t b = 0; b < bins; ++b) envelope[b] = -2.0 - 0.02 * static_cast<double>(b) + unit(rng);
  std::vector<std::vector<double>> motifs(p.motif_count, std::vector<double>(bins));
  for (auto& m : motifs) {
    for (std::size_t b = 0; b < bins; ++b) m[b] = envelope[b] + 1.5 * unit(rng);
  }
  const std::size_t frames = p.frames();
  audio::MelSpectrogram mel;
  mel.data = Tensor<float>({frames, bins});
  std::vector<double> x = motifs[0];
  for (std::size_t t = 0; t < frames; ++t) {
    const auto& m = motifs[active_motif(p, t)];
    for (std::size_t b = 0; b < bins; ++b) {
      if (t > 0) x[b] = p.alpha * x[b] + (1.0 - p.alpha) * m[b];
      if (p.noise_std > 0.0) x[b] += p.noise_std * unit(rng);
      mel.data(t, b) = static_cast<float>(x[b]);
    }
  }
  return mel;
}

/// Audio-domain generator: eight sinusoids whose frequencies drift with
/// bounded velocity (at most 2 Hz per frame) and whose amplitudes relax
/// toward the active motif with the same AR coefficient, over a broadband
/// noise bed whose spectral envelope wanders slowly. The bed keeps every mel
/// band informative; without it, bands between partials only carry
/// interference flicker. The state carries across render() calls, which lets
/// one process span several songs.
class WavSynth {
 public:
  static constexpr std::size_t kVoices = 8;
  static constexpr double kMaxDriftHz = 2.0;
  static constexpr double kMinHz = 80.0;
  static constexpr double kMaxHz = 5000.0;

  struct Timbre {
    std::vector<std::array<double, kVoices>> motifs;  // amplitude per voice
  };

  static constexpr std::size_t kBands = 16;
  static constexpr double kBedRho = 0.998;  // per-frame AR coefficient of band log-gains
  static constexpr double kBedSpread = 1.0;  // stationary std of band log-gains

  WavSynth(const SynthParams& p, std::uint64_t stream_seed) : p_(p), rng_(stream_seed) {
    std::uniform_real_distribution<double> logf(std::log(120.0), std::log(3000.0));
    for (std::size_t v = 0; v < kVoices; ++v) {
      freq_[v] = std::exp(logf(rng_));
      vel_[v] = 0.0;
      phase_[v] = std::polar(1.0, 2.0 * std::numbers::pi * unit01(rng_));
      amp_[v] = 0.0;
    }
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::size_t b = 0; b < kBands; ++b) {
      // RBJ band-pass, 0 dB peak, log-spaced centres
      const double f0 = 80.0 * std::pow(9000.0 / 80.0, static_cast<double>(b) / (kBands - 1));
      const double w0 = 2.0 * std::numbers::pi * f0 / audio::kSampleRate;
      const double alpha = std::sin(w0) / (2.0 * 1.5);
      const double a0 = 1.0 + alpha;
      bands_[b] = {alpha / a0, -alpha / a0, -2.0 * std::cos(w0) / a0, (1.0 - alpha) / a0};
      bed_log_[b] = kBedSpread * unit(rng_);
    }
  }

  Timbre make_timbre(std::uint64_t timbre_seed) const {
    std::mt19937_64 rng(timbre_seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Timbre t;
    t.motifs.resize(p_.motif_count);
    for (auto& m : t.motifs) {
      for (auto& a : m) a = 0.02 + 0.2 * u(rng) * u(rng);
    }
    return t;
  }

  void set_amplitudes(const std::array<double, kVoices>& a) { amp_ = a; }
  const std::array<double, kVoices>& frequencies() const { return freq_; }

  /// Renders `frames` hops (512 samples each) using the given timbre.
  std::vector<float> render(std::size_t frames, const Timbre& timbre) {
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<float> out(frames * audio::kHop);
    for (std::size_t f = 0; f < frames; ++f) {
      const auto& target = timbre.motifs[active_motif(p_, frame_)];
      std::array<double, kVoices> next_amp{};
      std::array<std::complex<double>, kVoices> rot{};
      for (std::size_t v = 0; v < kVoices; ++v) {
        vel_[v] = std::clamp(0.97 * vel_[v] + 0.6 * unit(rng_), -kMaxDriftHz, kMaxDriftHz);
        freq_[v] += vel_[v];
        if (freq_[v] < kMinHz || freq_[v] > kMaxHz) {
          vel_[v] = -vel_[v];
          freq_[v] = std::clamp(freq_[v], kMinHz, kMaxHz);
        }
        next_amp[v] = p_.alpha * amp_[v] + (1.0 - p_.alpha) * target[v];
        rot[v] = std::polar(1.0, 2.0 * std::numbers::pi * freq_[v] / audio::kSampleRate);
      }
      std::array<double, kBands> bed_next{};
      const double innov = kBedSpread * std::sqrt(1.0 - kBedRho * kBedRho);
      for (std::size_t b = 0; b < kBands; ++b) {
        bed_next[b] = kBedRho * bed_log_[b] + innov * unit(rng_);
      }
      for (std::size_t i = 0; i < audio::kHop; ++i) {
        const double w = static_cast<double>(i) / audio::kHop;
        double s = 0.0;
        for (std::size_t v = 0; v < kVoices; ++v) {
          phase_[v] *= rot[v];
          s += ((1.0 - w) * amp_[v] + w * next_amp[v]) * phase_[v].imag();
        }
        const double e = unit(rng_);
        for (std::size_t b = 0; b < kBands; ++b) {
          auto& q = bands_[b];
          const double y = q.b0 * e + q.z1;
          q.z1 = q.z2 - q.a1 * y;
          q.z2 = q.b2 * e - q.a2 * y;
          const double gain = kBedLevel * std::exp((1.0 - w) * bed_log_[b] + w * bed_next[b]);
          s += gain * y;
        }
        s += kNoiseFloor * unit(rng_);
        out[f * audio::kHop + i] = static_cast<float>(s);
      }
      bed_log_ = bed_next;
      for (auto& ph : phase_) ph /= std::abs(ph);
      amp_ = next_amp;
      ++frame_;
    }
    return out;
  }

 private:
  static constexpr double kNoiseFloor = 1e-4;
  static constexpr double kBedLevel = 0.01;

  struct Biquad {
    double b0, b2, a1, a2;  // b1 = 0 for a band-pass
    double z1 = 0.0, z2 = 0.0;
  };
  static double unit01(std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  }

  SynthParams p_;
  std::mt19937_64 rng_;
  std::array<double, kVoices> freq_{}, vel_{}, amp_{};
  std::array<std::complex<double>, kVoices> phase_{};
  std::array<Biquad, kBands> bands_{};
  std::array<double, kBands> bed_log_{};
  std::size_t frame_ = 0;
};

inline audio::AudioClip gen_wav_song(const SynthParams& p, std::size_t song_index) {
  p.validate();
  WavSynth synth(p, mix_seed(p.seed, song_index, 1));
  const auto timbre = synth.make_timbre(mix_seed(p.seed, song_index, 2));
  synth.set_amplitudes(timbre.motifs[0]);
  const std::size_t hops = (p.samples() + audio::kHop - 1) / audio::kHop;
  audio::AudioClip clip;
  clip.sample_rate = audio::kSampleRate;
  clip.samples = synth.render(hops, timbre);
  clip.samples.resize(p.samples());
  return clip;
}

/// One clip per song for `songs`, rendered by a single continuous process:
/// clip k uses song k's timbre and picks up exactly where clip k-1 stopped,
/// so adjacent clips cross-fade smoothly (amplitudes relax from one timbre to
/// the next) and the true order is recoverable from boundary continuity.
inline std::vector<audio::AudioClip> gen_medley_chain(const SynthParams& p,
                                                      const std::vector<std::size_t>& songs,
                                                      double clip_sec, std::uint64_t chain_seed) {
  p.validate();
  if (songs.size() < 2) throw UsageError("medley chain needs at least two songs");
  WavSynth synth(p, mix_seed(chain_seed, songs.front(), 3));
  const auto first = synth.make_timbre(mix_seed(p.seed, songs.front(), 2));
  synth.set_amplitudes(first.motifs[0]);
  const auto hops = static_cast<std::size_t>(std::llround(clip_sec * audio::kSampleRate / audio::kHop));
  std::vector<audio::AudioClip> clips;
  for (auto s : songs) {
    const auto timbre = synth.make_timbre(mix_seed(p.seed, s, 2));
    audio::AudioClip clip;
    clip.samples = synth.render(hops, timbre);
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace puzzle::synth
