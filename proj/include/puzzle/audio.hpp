#pragma once

// Audio front end: WAV I/O, resampling, STFT magnitude, log-mel, z-score.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "puzzle/error.hpp"
#include "puzzle/tensor.hpp"

namespace puzzle::audio {

inline constexpr int kSampleRate = 22050;
inline constexpr std::size_t kWindow = 2048;
inline constexpr std::size_t kHop = 512;
inline constexpr std::size_t kFftBins = kWindow / 2 + 1;
inline constexpr std::size_t kMelBands = 128;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kStdFloor = 1e-6;

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct MelSpectrogram {
  Tensor<float> data;  // [frames, 128]
  double frame_rate = static_cast<double>(kSampleRate) / kHop;
  bool normalized = false;

  std::size_t frames() const { return data.empty() ? 0 : data.dim(0); }
};

struct CorpusStats {
  std::vector<double> mean;
  std::vector<double> std;
};

// ---------------------------------------------------------------------------
// WAV

namespace detail {

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void write_le(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

/// Reads 16-bit PCM or 32-bit float WAV, mono or stereo; stereo is
/// downmixed by channel mean.
inline AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError(path.string() + ": not a RIFF/WAVE file");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* chunk = bytes.data() + pos;
    const auto len = detail::read_le<std::uint32_t>(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(len, bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && avail >= 16) {
      format = detail::read_le<std::uint16_t>(chunk + 8);
      channels = detail::read_le<std::uint16_t>(chunk + 10);
      rate = detail::read_le<std::uint32_t>(chunk + 12);
      bits = detail::read_le<std::uint16_t>(chunk + 22);
      if (format == 0xFFFE && avail >= 26) {
        format = detail::read_le<std::uint16_t>(chunk + 32);  // subformat GUID prefix
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = avail;
    }
    pos = body + len + (len & 1u);
  }
  if (format == 0 || data == nullptr) throw DataError(path.string() + ": missing fmt or data chunk");
  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32) {
    throw DataError(path.string() + ": unsupported encoding (format " + std::to_string(format) +
                    ", " + std::to_string(bits) + " bits)");
  }
  if (channels != 1 && channels != 2) {
    throw DataError(path.string() + ": unsupported channel count " + std::to_string(channels));
  }
  if (rate == 0) throw DataError(path.string() + ": zero sample rate");
  const std::size_t width = bits / 8;
  const std::size_t frames = data_len / (width * channels);
  if (frames == 0) throw DataError(path.string() + ": zero-length audio");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const char* p = data + (i * channels + c) * width;
      acc += pcm16 ? detail::read_le<std::int16_t>(p) / 32768.0
                   : static_cast<double>(detail::read_le<float>(p));
    }
    clip.samples[i] = static_cast<float>(acc / channels);
  }
  return clip;
}

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1).
inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const auto data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  detail::write_le<std::uint32_t>(out, 36 + data_len);
  out.write("WAVEfmt ", 8);
  detail::write_le<std::uint32_t>(out, 16);
  detail::write_le<std::uint16_t>(out, 1);
  detail::write_le<std::uint16_t>(out, 1);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  detail::write_le<std::uint16_t>(out, 2);
  detail::write_le<std::uint16_t>(out, 16);
  out.write("data", 4);
  detail::write_le<std::uint32_t>(out, data_len);
  for (float s : clip.samples) {
    const double v = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
    detail::write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(v * 32768.0)));
  }
  if (!out) throw DataError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Resampling: 64-tap Kaiser-windowed sinc low-pass. With both rates reduced
// by their gcd to up/down, output instants fall on `up` distinct fractional
// input phases; one normalized kernel is precomputed per phase.

inline AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw UsageError("resample: target rate must be positive");
  if (clip.sample_rate <= 0) throw UsageError("resample: source rate must be positive");
  if (clip.sample_rate == target_rate) return clip;
  constexpr std::ptrdiff_t kHalfTaps = 32;
  constexpr double kBeta = 8.0;
  const long g = std::gcd(static_cast<long>(clip.sample_rate), static_cast<long>(target_rate));
  const long up = target_rate / g;           // output samples per cycle
  const long down = clip.sample_rate / g;    // input samples per cycle
  const double ratio = static_cast<double>(up) / static_cast<double>(down);
  // Cutoff in cycles per input sample, a little under the lower Nyquist.
  const double cutoff = 0.5 * std::min(1.0, ratio) * 0.95;
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);

  // Output n sits at input time t = n * down / up = center + phase / up.
  std::vector<std::array<double, 2 * kHalfTaps>> kernels(static_cast<std::size_t>(up));
  for (long phase = 0; phase < up; ++phase) {
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    auto& h = kernels[static_cast<std::size_t>(phase)];
    double norm = 0.0;
    for (std::ptrdiff_t j = 0; j < 2 * kHalfTaps; ++j) {
      const double x = frac - static_cast<double>(j - kHalfTaps + 1);  // t - k
      const double r = x / kHalfTaps;
      double v = 0.0;
      if (std::abs(r) < 1.0) {
        const double win = std::cyl_bessel_i(0.0, kBeta * std::sqrt(1.0 - r * r)) / i0_beta;
        const double arg = 2.0 * cutoff * x;
        const double sinc =
            arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
        v = sinc * win;
      }
      h[static_cast<std::size_t>(j)] = v;
      norm += v;
    }
    for (auto& v : h) v /= norm;
  }

  const auto out_len = static_cast<std::size_t>(
      (static_cast<long long>(clip.samples.size()) * up + down / 2) / down);
  const auto n_in = static_cast<std::ptrdiff_t>(clip.samples.size());
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const long long num = static_cast<long long>(n) * down;
    const auto center = static_cast<std::ptrdiff_t>(num / up);
    const auto& h = kernels[static_cast<std::size_t>(num % up)];
    double acc = 0.0;
    for (std::ptrdiff_t j = 0; j < 2 * kHalfTaps; ++j) {
      const std::ptrdiff_t k = center + j - kHalfTaps + 1;
      if (k >= 0 && k < n_in) acc += h[static_cast<std::size_t>(j)] * clip.samples[static_cast<std::size_t>(k)];
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// STFT

/// Symmetric Hamming window, w[n] = 0.54 - 0.46 cos(2 pi n / (N - 1)).
inline std::vector<double> hamming(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(n - 1));
  }
  return w;
}

inline std::size_t stft_frame_count(std::size_t samples) {
  return samples < kWindow ? 0 : (samples - kWindow) / kHop + 1;
}

/// Magnitude STFT, frames start at sample 0 with no padding: [frames, 1025].
inline Tensor<double> stft_magnitude(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw UsageError("stft_magnitude expects " + std::to_string(kSampleRate) + " Hz audio");
  }
  const std::size_t frames = stft_frame_count(clip.samples.size());
  if (frames == 0) {
    throw DataError("clip of " + std::to_string(clip.samples.size()) +
                    " samples is shorter than one 2048-sample window");
  }
  const auto window = hamming(kWindow);
  Eigen::FFT<double> fft;
  std::vector<double> buf(kWindow);
  std::vector<std::complex<double>> spec;
  Tensor<double> out({frames, kFftBins});
  for (std::size_t f = 0; f < frames; ++f) {
    const float* src = clip.samples.data() + f * kHop;
    for (std::size_t i = 0; i < kWindow; ++i) buf[i] = window[i] * src[i];
    fft.fwd(spec, buf);
    double* row = out.ptr() + f * kFftBins;
    for (std::size_t b = 0; b < kFftBins; ++b) row[b] = std::abs(spec[b]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mel filterbank (HTK mel scale), each filter normalized to unit weight sum.

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// [128, 1025] filter weights spanning 0 Hz to Nyquist.
inline const Tensor<double>& mel_filterbank() {
  static const Tensor<double> bank = [] {
    Tensor<double> w({kMelBands, kFftBins});
    const double nyquist = kSampleRate / 2.0;
    const double top = hz_to_mel(nyquist);
    std::vector<double> edges(kMelBands + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(kMelBands + 1));
    }
    const double bin_hz = static_cast<double>(kSampleRate) / kWindow;
    for (std::size_t m = 0; m < kMelBands; ++m) {
      const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
      double sum = 0.0;
      for (std::size_t b = 0; b < kFftBins; ++b) {
        const double f = b * bin_hz;
        double v = 0.0;
        if (f > lo && f < mid) {
          v = (f - lo) / (mid - lo);
        } else if (f >= mid && f < hi) {
          v = (hi - f) / (hi - mid);
        }
        w(m, b) = v;
        sum += v;
      }
      if (sum > 0.0) {
        for (std::size_t b = 0; b < kFftBins; ++b) w(m, b) /= sum;
      } else {
        w(m, static_cast<std::size_t>(std::lround(mid / bin_hz))) = 1.0;
      }
    }
    return w;
  }();
  return bank;
}

/// ln(filterbank * magnitude + 1e-10), unnormalized.
inline MelSpectrogram log_mel(const Tensor<double>& magnitude) {
  if (magnitude.rank() != 2 || magnitude.dim(1) != kFftBins) {
    throw UsageError("log_mel expects [frames, 1025] magnitudes, got " +
                     shape_string(magnitude.shape()));
  }
  const std::size_t frames = magnitude.dim(0);
  const auto& bank = mel_filterbank();
  RowMatrix<double> mel = as_matrix(magnitude, frames, kFftBins) *
                          as_matrix(bank, kMelBands, kFftBins).transpose();
  MelSpectrogram out;
  out.data = Tensor<float>({frames, kMelBands});
  for (std::size_t i = 0; i < frames * kMelBands; ++i) {
    out.data[i] = static_cast<float>(std::log(mel.data()[i] + kLogFloor));
  }
  return out;
}

/// Full front end: resample to 22050 Hz, STFT, log-mel.
inline MelSpectrogram mel_from_audio(const AudioClip& clip) {
  return log_mel(stft_magnitude(resample(clip, kSampleRate)));
}

// ---------------------------------------------------------------------------
// Corpus normalization

/// Per-bin mean and population std over every frame of the corpus, in
/// double precision; std is floored at 1e-6.
inline CorpusStats compute_stats(const std::vector<const MelSpectrogram*>& corpus) {
  if (corpus.empty()) throw UsageError("compute_stats: empty corpus");
  CorpusStats s{std::vector<double>(kMelBands, 0.0), std::vector<double>(kMelBands, 0.0)};
  std::size_t count = 0;
  for (const auto* m : corpus) {
    for (std::size_t f = 0; f < m->frames(); ++f) {
      for (std::size_t b = 0; b < kMelBands; ++b) s.mean[b] += m->data(f, b);
    }
    count += m->frames();
  }
  if (count == 0) throw UsageError("compute_stats: corpus has no frames");
  for (auto& v : s.mean) v /= static_cast<double>(count);
  for (const auto* m : corpus) {
    for (std::size_t f = 0; f < m->frames(); ++f) {
      for (std::size_t b = 0; b < kMelBands; ++b) {
        const double d = m->data(f, b) - s.mean[b];
        s.std[b] += d * d;
      }
    }
  }
  for (auto& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(count)), kStdFloor);
  return s;
}

inline CorpusStats compute_stats(const std::vector<MelSpectrogram>& corpus) {
  std::vector<const MelSpectrogram*> ptrs;
  for (const auto& m : corpus) ptrs.push_back(&m);
  return compute_stats(ptrs);
}

inline MelSpectrogram zscore(const MelSpectrogram& mel, const CorpusStats& stats) {
  MelSpectrogram out = mel;
  for (std::size_t f = 0; f < mel.frames(); ++f) {
    for (std::size_t b = 0; b < kMelBands; ++b) {
      out.data(f, b) = static_cast<float>((mel.data(f, b) - stats.mean[b]) / stats.std[b]);
    }
  }
  out.normalized = true;
  return out;
}

inline MelSpectrogram unzscore(const MelSpectrogram& mel, const CorpusStats& stats) {
  MelSpectrogram out = mel;
  for (std::size_t f = 0; f < mel.frames(); ++f) {
    for (std::size_t b = 0; b < kMelBands; ++b) {
      out.data(f, b) = static_cast<float>(mel.data(f, b) * stats.std[b] + stats.mean[b]);
    }
  }
  out.normalized = false;
  return out;
}

}  // namespace puzzle::audio
