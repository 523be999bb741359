#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "puzzle/audio.hpp"
#include "puzzle/checkpoint.hpp"

using namespace puzzle;
using namespace puzzle::audio;
namespace fs = std::filesystem;

namespace {

AudioClip sine(double hz, double sec, int rate, double amp = 0.5) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(std::llround(sec * rate)));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate));
  }
  return c;
}

std::size_t peak_bin(const Tensor<double>& mag, std::size_t frame) {
  std::size_t best = 0;
  for (std::size_t b = 1; b < kFftBins; ++b) {
    if (mag(frame, b) > mag(frame, best)) best = b;
  }
  return best;
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "puzzle_audio_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

template <typename V>
void put(std::vector<char>& b, V v) {
  const char* p = reinterpret_cast<const char*>(&v);
  b.insert(b.end(), p, p + sizeof(V));
}

// Minimal WAV writer for formats write_wav does not produce.
std::vector<char> wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                            std::uint16_t bits, const std::vector<char>& payload) {
  std::vector<char> b;
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  put<std::uint32_t>(b, 36 + static_cast<std::uint32_t>(payload.size()));
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put<std::uint32_t>(b, 16);
  put<std::uint16_t>(b, format);
  put<std::uint16_t>(b, channels);
  put<std::uint32_t>(b, rate);
  put<std::uint32_t>(b, rate * channels * bits / 8);
  put<std::uint16_t>(b, static_cast<std::uint16_t>(channels * bits / 8));
  put<std::uint16_t>(b, bits);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  put<std::uint32_t>(b, static_cast<std::uint32_t>(payload.size()));
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

}  // namespace

TEST(Hamming, SymmetricWithTextbookEndpoints) {
  const auto w = hamming(kWindow);
  ASSERT_EQ(w.size(), 2048u);
  EXPECT_NEAR(w.front(), 0.08, 1e-15);
  EXPECT_NEAR(w.back(), 0.08, 1e-15);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], w[w.size() - 1 - i], 1e-12);
  EXPECT_NEAR(w[1023], 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * 1023.0 / 2047.0), 1e-15);
}

TEST(Stft, FrameCountHasNoPadding) {
  EXPECT_EQ(stft_frame_count(2047), 0u);
  EXPECT_EQ(stft_frame_count(2048), 1u);
  EXPECT_EQ(stft_frame_count(2559), 1u);
  EXPECT_EQ(stft_frame_count(2560), 2u);
  EXPECT_EQ(stft_frame_count(24 * 22050), 1030u);
}

TEST(Stft, MatchesDirectDft) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  AudioClip c;
  c.samples.resize(3000);
  for (auto& s : c.samples) s = static_cast<float>(d(rng));
  const auto mag = stft_magnitude(c);
  ASSERT_EQ(mag.dim(0), 2u);
  const auto w = hamming(kWindow);
  for (std::size_t frame : {0u, 1u}) {
    for (std::size_t k : {0u, 1u, 17u, 512u, 1024u}) {
      std::complex<double> acc = 0.0;
      for (std::size_t n = 0; n < kWindow; ++n) {
        acc += w[n] * static_cast<double>(c.samples[frame * kHop + n]) *
               std::polar(1.0, -2.0 * std::numbers::pi * double(k) * double(n) / double(kWindow));
      }
      EXPECT_NEAR(mag(frame, k), std::abs(acc), 1e-9 * (1.0 + std::abs(acc)));
    }
  }
}

TEST(Stft, SinePeakSitsAtItsBin) {
  const auto mag = stft_magnitude(sine(1000.0, 1.0, kSampleRate));
  const auto expected = static_cast<std::size_t>(std::lround(1000.0 / (22050.0 / 2048.0)));
  for (std::size_t f = 0; f < mag.dim(0); ++f) EXPECT_EQ(peak_bin(mag, f), expected);
}

TEST(Stft, RejectsWrongRateAndShortClips) {
  EXPECT_THROW(stft_magnitude(sine(440, 1.0, 44100)), UsageError);
  EXPECT_THROW(stft_magnitude(sine(440, 0.05, kSampleRate)), DataError);
}

TEST(Mel, HtkFormulaAndInverse) {
  EXPECT_NEAR(hz_to_mel(700.0), 2595.0 * std::log10(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(hz_to_mel(0.0), 0.0);
  for (double f : {20.0, 440.0, 5000.0, 11025.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
}

TEST(Mel, FilterbankRowsAreNonNegativeUnitSums) {
  const auto& bank = mel_filterbank();
  ASSERT_EQ(bank.dim(0), 128u);
  ASSERT_EQ(bank.dim(1), 1025u);
  for (std::size_t m = 0; m < 128; ++m) {
    double sum = 0.0;
    for (std::size_t b = 0; b < 1025; ++b) {
      EXPECT_GE(bank(m, b), 0.0);
      sum += bank(m, b);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Mel, SilenceHitsTheLogFloor) {
  Tensor<double> mag({3, kFftBins});
  const auto mel = log_mel(mag);
  for (auto v : mel.data.storage()) EXPECT_FLOAT_EQ(v, static_cast<float>(std::log(1e-10)));
}

TEST(Mel, FullFrontEndShape) {
  const auto mel = mel_from_audio(sine(440.0, 24.0, kSampleRate));
  EXPECT_EQ(mel.frames(), 1030u);
  EXPECT_EQ(mel.data.dim(1), 128u);
  EXPECT_FALSE(mel.normalized);
}

TEST(Mel, DeterministicToTheBit) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> d(0.0, 0.1);
  AudioClip c;
  c.samples.resize(22050 * 3);
  for (auto& s : c.samples) s = static_cast<float>(d(rng));
  const auto a = mel_from_audio(c), b = mel_from_audio(c);
  ASSERT_EQ(a.data.size(), b.data.size());
  EXPECT_EQ(std::memcmp(a.data.ptr(), b.data.ptr(), a.data.size() * sizeof(float)), 0);
}

TEST(Resample, LengthAndPitchPreserved) {
  for (int src : {44100, 16000, 48000}) {
    const auto out = resample(sine(1000.0, 2.0, src), kSampleRate);
    EXPECT_EQ(out.sample_rate, kSampleRate);
    EXPECT_NEAR(static_cast<double>(out.samples.size()), 2.0 * kSampleRate, 1.0);
    const auto mag = stft_magnitude(out);
    EXPECT_EQ(peak_bin(mag, mag.dim(0) / 2), 93u) << "source rate " << src;
    // passband gain close to unity away from the edges
    double peak = 0.0;
    for (std::size_t i = 4000; i < 40000; ++i) peak = std::max(peak, std::abs(double(out.samples[i])));
    EXPECT_NEAR(peak, 0.5, 0.01);
  }
}

TEST(Resample, IdentityAtSameRate) {
  const auto c = sine(300.0, 0.5, kSampleRate);
  EXPECT_EQ(resample(c, kSampleRate).samples, c.samples);
}

TEST(Wav, Pcm16RoundTrip) {
  const auto c = sine(440.0, 0.5, kSampleRate, 0.7);
  const auto p = temp_file("rt.wav");
  write_wav(p, c);
  const auto back = load_wav(p);
  ASSERT_EQ(back.samples.size(), c.samples.size());
  EXPECT_EQ(back.sample_rate, kSampleRate);
  for (std::size_t i = 0; i < c.samples.size(); ++i) EXPECT_NEAR(back.samples[i], c.samples[i], 1.0 / 32768.0);
}

TEST(Wav, StereoIsDownmixedByMean) {
  std::vector<char> payload;
  for (int i = 0; i < 10; ++i) {
    put<std::int16_t>(payload, 16384);
    put<std::int16_t>(payload, -8192);
  }
  const auto p = temp_file("stereo.wav");
  write_bytes(p, wav_bytes(1, 2, 8000, 16, payload));
  const auto c = load_wav(p);
  ASSERT_EQ(c.samples.size(), 10u);
  EXPECT_EQ(c.sample_rate, 8000);
  for (auto s : c.samples) EXPECT_FLOAT_EQ(s, 0.125f);
}

TEST(Wav, Float32Accepted) {
  std::vector<char> payload;
  for (float v : {0.25f, -0.5f, 1.0f}) put<float>(payload, v);
  const auto p = temp_file("f32.wav");
  write_bytes(p, wav_bytes(3, 1, 22050, 32, payload));
  const auto c = load_wav(p);
  EXPECT_EQ(c.samples, (std::vector<float>{0.25f, -0.5f, 1.0f}));
}

TEST(Wav, MalformedInputIsADataError) {
  const auto p = temp_file("junk.wav");
  write_bytes(p, {'n', 'o', 'p', 'e'});
  EXPECT_THROW(load_wav(p), DataError);
  EXPECT_THROW(load_wav(temp_file("missing.wav")), DataError);
  std::vector<char> payload(8, 0);
  write_bytes(p, wav_bytes(1, 1, 22050, 24, payload));
  EXPECT_THROW(load_wav(p), DataError);
}

TEST(Normalization, StatsMatchNaiveComputation) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(2.0, 3.0);
  std::vector<MelSpectrogram> corpus(3);
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    corpus[k].data = Tensor<float>({10 + 5 * k, kMelBands});
    for (auto& v : corpus[k].data.storage()) v = static_cast<float>(d(rng));
  }
  const auto s = compute_stats(corpus);
  for (std::size_t b : {0u, 64u, 127u}) {
    std::vector<double> xs;
    for (const auto& m : corpus) {
      for (std::size_t f = 0; f < m.frames(); ++f) xs.push_back(m.data(f, b));
    }
    double mean = 0.0;
    for (auto x : xs) mean += x;
    mean /= double(xs.size());
    double var = 0.0;
    for (auto x : xs) var += (x - mean) * (x - mean);
    EXPECT_NEAR(s.mean[b], mean, 1e-12);
    EXPECT_NEAR(s.std[b], std::sqrt(var / double(xs.size())), 1e-12);
  }
  // z-scored corpus has zero mean and unit spread per bin
  std::vector<MelSpectrogram> z;
  for (const auto& m : corpus) z.push_back(zscore(m, s));
  const auto zs = compute_stats(z);
  for (std::size_t b = 0; b < kMelBands; ++b) {
    EXPECT_NEAR(zs.mean[b], 0.0, 1e-6);
    EXPECT_NEAR(zs.std[b], 1.0, 1e-6);
  }
  const auto back = unzscore(z[1], s);
  for (std::size_t i = 0; i < back.data.size(); ++i) EXPECT_NEAR(back.data[i], corpus[1].data[i], 1e-5);
}

TEST(Normalization, ConstantBinsUseTheStdFloor) {
  MelSpectrogram m;
  m.data = Tensor<float>({4, kMelBands}, 1.5f);
  const auto s = compute_stats(std::vector<MelSpectrogram>{m});
  EXPECT_DOUBLE_EQ(s.std[0], kStdFloor);
  EXPECT_THROW(compute_stats(std::vector<MelSpectrogram>{}), UsageError);
}

TEST(Archive, RoundTripAndBadMagic) {
  TensorArchive ar;
  ar.tensors.emplace("mel", Tensor<float>({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6}));
  ar.config = {{"k", 1}};
  const auto p = temp_file("a.pzt");
  save_archive(p, ar);
  const auto back = load_archive(p);
  EXPECT_EQ(back.at("mel"), ar.at("mel"));
  EXPECT_EQ(back.config, ar.config);
  EXPECT_THROW(back.at("nope"), DataError);
  auto bytes = encode_archive(ar);
  bytes[0] = 'X';
  EXPECT_THROW(decode_archive(bytes), DataError);
}
