#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "puzzle/cache.hpp"
#include "puzzle/medley.hpp"
#include "puzzle/pipeline.hpp"
#include "puzzle/synth.hpp"

using namespace puzzle;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("puzzle_medley_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

audio::AudioClip tone(double seconds, double hz, float level = 0.5f) {
  audio::AudioClip c;
  c.samples.resize(static_cast<std::size_t>(seconds * audio::kSampleRate));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = level * static_cast<float>(std::sin(2.0 * 3.141592653589793 * hz * double(i) / audio::kSampleRate));
  }
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PUZZLE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

PuzzleModel<float> tiny_model() {
  ArchConfig a;
  a.trunk_channels = {4, 4, 6};
  a.head_channels = {2, 2, 3};
  a.dense_units = {8, 8};
  return PuzzleModel<float>(a, 1);
}

audio::CorpusStats unit_stats() {
  return {std::vector<double>(128, 0.0), std::vector<double>(128, 1.0)};
}

}  // namespace

TEST(MedleyJob, ParsesAndResolvesRelativePaths) {
  const auto d = fresh_dir("job");
  {
    std::ofstream out(d / "job.json");
    out << R"({"clips": [{"path": "a.wav", "in": 1.5, "out": 9}, {"path": "/abs/b.wav"}], "reference": [1, 0]})";
  }
  const auto job = read_medley_job(d / "job.json");
  ASSERT_EQ(job.clips.size(), 2u);
  EXPECT_EQ(fs::path(job.clips[0].path), d / "a.wav");
  EXPECT_EQ(job.clips[1].path, "/abs/b.wav");
  EXPECT_EQ(*job.clips[0].in_sec, 1.5);
  EXPECT_FALSE(job.clips[1].out_sec.has_value());
  EXPECT_EQ(*job.reference, (std::vector<std::size_t>{1, 0}));
  {
    std::ofstream out(d / "bad.json");
    out << R"({"clips": [{"path": "a.wav"}]})";
  }
  EXPECT_THROW(read_medley_job(d / "bad.json"), UsageError);
  {
    std::ofstream out(d / "bad.json");
    out << R"({"clips": [{"path": "a.wav"}, {"path": "b.wav"}], "reference": [0, 0]})";
  }
  EXPECT_THROW(read_medley_job(d / "bad.json"), UsageError);
}

TEST(MedleyClips, LengthLimitsAndTrim) {
  EXPECT_THROW(check_medley_clip(tone(4.0, 440), 0), DataError);
  EXPECT_THROW(check_medley_clip(tone(31.0, 440), 0), DataError);
  EXPECT_NO_THROW(check_medley_clip(tone(6.0, 440), 0));
  const auto t = trim_clip(tone(10.0, 440), 2.0, 8.0);
  EXPECT_EQ(t.samples.size(), 6u * audio::kSampleRate);
  EXPECT_THROW(trim_clip(tone(10.0, 440), 8.0, 2.0), DataError);
}

TEST(Render, ExactLengthAndFades) {
  const std::vector<audio::AudioClip> clips{tone(5.0, 300, 1.0f), tone(6.0, 500, 1.0f)};
  const auto r = render_medley(clips, {1, 0});
  ASSERT_EQ(r.samples.size(), clips[0].samples.size() + clips[1].samples.size());
  EXPECT_EQ(r.samples.front(), 0.0f);
  const std::size_t join = clips[1].samples.size();
  EXPECT_EQ(r.samples[join - 1], 0.0f);
  EXPECT_EQ(r.samples[join], 0.0f);
  // the middle of each clip is untouched
  EXPECT_EQ(r.samples[join / 2], clips[1].samples[join / 2]);
  EXPECT_THROW(render_medley(clips, {0, 0}), UsageError);
}

TEST(Render, WavRoundTrip) {
  const auto d = fresh_dir("wav");
  synth::SynthParams p;
  const auto clips = synth::gen_medley_chain(p, {1, 2, 3}, 5.0, 7);
  const auto r = render_medley(clips, {2, 0, 1});
  audio::write_wav(d / "m.wav", r);
  const auto back = audio::load_wav(d / "m.wav");
  EXPECT_EQ(back.sample_rate, audio::kSampleRate);
  ASSERT_EQ(back.samples.size(), r.samples.size());
  for (std::size_t i = 0; i < r.samples.size(); i += 997) EXPECT_NEAR(back.samples[i], r.samples[i], 1.0 / 32767.0);
}

TEST(OrderMedley, TwoClipsAndReferenceMetrics) {
  const auto model = tiny_model();
  const std::vector<audio::AudioClip> clips{tone(5.0, 300), tone(5.0, 700)};
  const auto r = order_medley(model, unit_stats(), clips, std::vector<std::size_t>{0, 1});
  const bool forward = r.scores(0, 1) >= r.scores(1, 0);
  EXPECT_EQ(r.ordering.perm, forward ? (std::vector<std::size_t>{0, 1}) : (std::vector<std::size_t>{1, 0}));
  const auto self = order_medley(model, unit_stats(), clips, r.ordering.perm);
  EXPECT_EQ(*self.pa, 1.0);
  EXPECT_EQ(*self.ga, 1.0);
  EXPECT_TRUE(to_json(r).contains("pa"));
}

TEST(Sequencing, FirstTenSectionsAndShortOnesRejected) {
  const double fr = audio::kSampleRate / double(audio::kHop);
  std::vector<Section> s;
  for (int k = 0; k < 12; ++k) s.push_back({2.0 * k, 2.0 * (k + 1), "s" + std::to_string(k)});
  const auto f = section_fragments("x", s, static_cast<std::size_t>(24.0 * fr), 39);
  ASSERT_EQ(f.size(), 10u);
  EXPECT_EQ(f[3].index, 3u);
  EXPECT_EQ(f[0].end_frame, f[1].begin_frame);
  s[4].end_sec = 8.3;
  s[5].start_sec = 8.3;
  EXPECT_THROW(section_fragments("x", s, static_cast<std::size_t>(24.0 * fr), 39), DataError);
}

TEST(Cache, EntryRoundTripAndValidation) {
  const auto d = fresh_dir("cache");
  cache::Entry e;
  e.id = "song";
  e.source = "x.wav";
  e.mel = synth::gen_mel_song(synth::SynthParams{}, 0);
  cache::write_entry(d, e);
  const auto back = cache::read_entry(d, "song");
  EXPECT_EQ(back.mel.data, e.mel.data);
  EXPECT_EQ(back.source, "x.wav");
  EXPECT_EQ(cache::list_ids(d), (std::vector<std::string>{"song"}));
  e.mel.normalized = true;
  EXPECT_THROW(cache::write_entry(d, e), UsageError);
  EXPECT_THROW(cache::read_entry(d, "missing"), DataError);
}

TEST(Cache, PreprocessIsDeterministicAndCopiesBoundaries) {
  const auto in = fresh_dir("pre_in");
  const auto b = fresh_dir("pre_b");
  audio::write_wav(in / "one.wav", tone(6.0, 440));
  audio::write_wav(in / "two.WAV", tone(6.0, 880));
  {
    std::ofstream out(b / "one.csv");
    out << "0,2,a\n2,4,b\n4,6,c\n";
  }
  const auto o1 = fresh_dir("pre_o1"), o2 = fresh_dir("pre_o2");
  const auto s = cache::preprocess(in, o1, b);
  EXPECT_EQ(s.songs, 2u);
  EXPECT_EQ(s.with_boundaries, 1u);
  cache::preprocess(in, o2, std::nullopt);
  EXPECT_EQ(cache::read_entry(o1, "two").mel.data, cache::read_entry(o2, "two").mel.data);
  EXPECT_EQ(cache::read_boundaries(o1, "one")->boundaries_sec, (std::vector<double>{2.0, 4.0}));
  EXPECT_FALSE(cache::read_boundaries(o1, "two").has_value());
}

TEST(Pipeline, SynthToCacheAndPuzzleSet) {
  const auto d = fresh_dir("synth");
  synth::SynthParams p;
  p.n_songs = 3;
  synth_to_cache(p, d, false);
  const auto ids = cache::list_ids(d);
  ASSERT_EQ(ids.size(), 3u);
  EXPECT_EQ(ids[0], "synth-00000");
  const auto set = puzzle_set(d, ids, cache_stats(d, ids), 4, 39);
  ASSERT_EQ(set.songs.size(), 3u);
  EXPECT_EQ(set.songs[0].fragments.size(), 4u);
  EXPECT_EQ(puzzle_set(d, ids, cache_stats(d, ids), 3, 39, Segmentation::boundary).skipped.size(), 3u);
}

TEST(Cli, ExitCodes) {
  const auto d = fresh_dir("cli");
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("bogus"), 1);
  EXPECT_EQ(run_cli("eval-puzzle --ckpt x --cache y --n 5"), 1);
  EXPECT_EQ(run_cli("synth --songs 2 --seed 1 --alpha 1.5 --out " + (d / "c").string()), 1);
  EXPECT_EQ(run_cli("preprocess --in " + (d / "nothing").string() + " --out " + (d / "o").string()), 2);
  EXPECT_EQ(run_cli("synth --songs 2 --seed 1 --out " + (d / "c").string()), 0);
  EXPECT_EQ(cache::list_ids(d / "c").size(), 2u);
  EXPECT_EQ(run_cli("eval-puzzle --ckpt " + (d / "missing.pzt").string() + " --cache " + (d / "c").string()), 2);
  EXPECT_EQ(run_cli("gradcheck --probes 5"), 0);
}
