// Command-line front end. Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "puzzle/cache.hpp"
#include "puzzle/gradcheck_suite.hpp"
#include "puzzle/medley.hpp"
#include "puzzle/pipeline.hpp"
#include "puzzle/synth.hpp"
#include "puzzle/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace puzzle;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(p.string() + ": " + e.what());
  }
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

json report_json(const PuzzleReport& r, std::size_t n, const std::vector<std::string>& skipped, bool per_song) {
  json j{{"n", n}, {"songs", r.songs.size()}, {"pa", r.mean_pa}, {"ga", r.mean_ga}};
  if (!skipped.empty()) j["skipped"] = skipped;
  if (per_song) {
    json rows = json::array();
    for (const auto& s : r.songs) rows.push_back({{"song_id", s.song_id}, {"perm", s.ordering.perm}, {"pa", s.pa}, {"ga", s.ga}});
    j["per_song"] = rows;
  }
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Music fragment ordering: jigsaw puzzles, sequencing and medleys"};
  app.require_subcommand(1);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "WAV directory to spectrogram cache");
  std::string pre_in, pre_out, pre_bounds;
  pre->add_option("--in", pre_in, "directory of .wav files")->required();
  pre->add_option("--out", pre_out, "cache directory")->required();
  pre->add_option("--boundaries", pre_bounds, "directory of <id>.json boundary lists or <id>.csv sections");

  // synth
  auto* syn = app.add_subcommand("synth", "generate a synthetic corpus into a cache");
  synth::SynthParams sp;
  std::string syn_out, syn_audio;
  bool syn_wav = false;
  syn->add_option("--songs", sp.n_songs, "number of songs")->required();
  syn->add_option("--seed", sp.seed, "corpus seed")->required();
  syn->add_option("--out", syn_out, "cache directory")->required();
  syn->add_flag("--wav", syn_wav, "render audio and run it through the front end");
  syn->add_option("--audio-dir", syn_audio, "also write the rendered WAV files here (with --wav)");
  syn->add_option("--duration", sp.duration_sec, "song length in seconds");
  syn->add_option("--alpha", sp.alpha, "frame-to-frame smoothness in (0, 1)");
  syn->add_option("--motifs", sp.motif_count, "motifs per song");
  syn->add_option("--motif-period", sp.motif_period_frames, "frames per motif");
  syn->add_option("--noise", sp.noise_std, "per-frame noise std (mel generator)");

  // train
  auto* tr = app.add_subcommand("train", "train a pair classifier");
  std::string tr_cache, tr_model, tr_config, tr_out, tr_log;
  std::size_t tr_threads = 0;
  tr->add_option("--cache", tr_cache, "cache directory")->required();
  tr->add_option("--model", tr_model, "sen or sn (overrides the config)")->check(CLI::IsMember({"sen", "sn"}));
  tr->add_option("--config", tr_config, "JSON training config");
  tr->add_option("--out", tr_out, "checkpoint path")->required();
  tr->add_option("--log", tr_log, "append per-epoch JSON lines here");
  tr->add_option("--threads", tr_threads, "worker threads (overrides the config)");

  // eval-puzzle
  auto* ep = app.add_subcommand("eval-puzzle", "solve n-piece jigsaw puzzles and report PA/GA");
  std::string ep_ckpt, ep_cache, ep_seg = "fixed", ep_split = "test";
  std::size_t ep_n = 3;
  bool ep_per_song = false;
  ep->add_option("--ckpt", ep_ckpt)->required();
  ep->add_option("--cache", ep_cache)->required();
  ep->add_option("--n", ep_n, "pieces per puzzle")->check(CLI::IsMember({3, 4, 6, 8}));
  ep->add_option("--segmentation", ep_seg)->check(CLI::IsMember({"fixed", "boundary"}));
  ep->add_option("--split", ep_split, "train, validation, test or all")
      ->check(CLI::IsMember({"train", "validation", "test", "all"}));
  ep->add_flag("--per-song", ep_per_song, "include every song's ordering");

  // eval-sequencing
  auto* es = app.add_subcommand("eval-sequencing", "order the annotated sections of whole songs");
  std::string es_ckpt, es_cache, es_sections;
  es->add_option("--ckpt", es_ckpt)->required();
  es->add_option("--cache", es_cache, "cache holding the songs")->required();
  es->add_option("--sections", es_sections, "directory of <id>.csv section files")->required();

  // medley
  auto* md = app.add_subcommand("medley", "order one clip per song and optionally render it");
  std::string md_ckpt, md_job, md_render;
  md->add_option("--ckpt", md_ckpt)->required();
  md->add_option("--job", md_job, "medley job JSON")->required();
  md->add_option("--render", md_render, "write the ordered medley to this WAV file");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer and both pair losses");
  std::size_t gc_probes = 100;
  gc->add_option("--probes", gc_probes, "probes per check");

  // export-embeddings
  auto* ee = app.add_subcommand("export-embeddings", "time-averaged trunk features per fragment as CSV");
  std::string ee_ckpt, ee_cache, ee_out, ee_split = "all";
  std::size_t ee_n = 0;
  ee->add_option("--ckpt", ee_ckpt)->required();
  ee->add_option("--cache", ee_cache)->required();
  ee->add_option("--out", ee_out)->required();
  ee->add_option("--n", ee_n, "fragments per song (default: the checkpoint's pieces)");
  ee->add_option("--split", ee_split)->check(CLI::IsMember({"train", "validation", "test", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    if (*pre) {
      std::optional<fs::path> b;
      if (!pre_bounds.empty()) b = pre_bounds;
      const auto s = cache::preprocess(pre_in, pre_out, b);
      print({{"songs", s.songs}, {"with_boundaries", s.with_boundaries}});
    } else if (*syn) {
      std::optional<fs::path> audio;
      if (!syn_audio.empty()) {
        if (!syn_wav) throw UsageError("--audio-dir requires --wav");
        audio = syn_audio;
      }
      synth_to_cache(sp, syn_out, syn_wav, audio);
      print({{"songs", sp.n_songs}, {"seed", sp.seed}, {"wav", syn_wav}});
    } else if (*tr) {
      TrainConfig cfg = tr_config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(tr_config));
      if (!tr_model.empty()) cfg.model = parse_model_kind(tr_model);
      if (tr_threads > 0) cfg.threads = tr_threads;
      std::ofstream log;
      if (!tr_log.empty()) log.open(tr_log, std::ios::app);
      const auto run = train_from_cache(tr_cache, cfg, [&](const EpochLog& e) {
        const auto line = to_json(e).dump();
        std::cerr << line << std::endl;
        if (log) log << line << std::endl;
      });
      save_checkpoint(tr_out, run.checkpoint);
      print({{"checkpoint", tr_out}, {"best_epoch", run.result.best_epoch}, {"best_val_pa", run.result.best_val_pa}});
    } else if (*ep) {
      const auto ck = load_checkpoint(ep_ckpt);
      const auto model = ck.model();
      const auto ids = split_ids(ep_cache, ck.config, ep_split);
      const auto set = puzzle_set(ep_cache, ids, ck.stats, ep_n, model.min_frames(), parse_segmentation(ep_seg));
      if (set.songs.empty()) throw DataError("no songs to evaluate");
      print(report_json(evaluate_puzzles(model, set.songs), ep_n, set.skipped, ep_per_song));
    } else if (*es) {
      const auto ck = load_checkpoint(es_ckpt);
      const auto model = ck.model();
      PuzzleReport report;
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(es_sections)) {
        if (f.path().extension() == ".csv") files.push_back(f.path());
      }
      std::sort(files.begin(), files.end());
      std::vector<std::string> skipped;
      for (std::size_t i = 0; i < files.size(); ++i) {
        const auto id = files[i].stem().string();
        if (!fs::exists(cache::mel_path(es_cache, id))) {
          skipped.push_back(id);
          continue;
        }
        const auto mel = audio::zscore(cache::read_entry(es_cache, id).mel, ck.stats);
        JigsawSong song{id, mel.data, {}};
        try {
          song.fragments = section_fragments(id, read_sections_csv(files[i]), mel.frames(), model.min_frames());
        } catch (const DataError& e) {
          std::cerr << "skipping " << e.what() << '\n';
          skipped.push_back(id);
          continue;
        }
        if (song.fragments.size() < 2) {
          std::cerr << "skipping " << id << ": fewer than two sections\n";
          skipped.push_back(id);
          continue;
        }
        std::vector<Tensor<float>> frags;
        for (std::size_t k = 0; k < song.fragments.size(); ++k) frags.push_back(song.fragment(k));
        report.songs.push_back(solve_presented(id, presentation_order(frags.size(), 0, i),
                                               [&](std::size_t a, std::size_t b) {
                                                 return static_cast<double>(model.probability(frags[a], frags[b]));
                                               }));
      }
      if (report.songs.empty()) throw DataError("no section files matched cached songs");
      finish_report(report);
      json j{{"songs", report.songs.size()}, {"pa", report.mean_pa}, {"ga", report.mean_ga}};
      if (!skipped.empty()) j["skipped"] = skipped;
      print(j);
    } else if (*md) {
      const auto ck = load_checkpoint(md_ckpt);
      const auto job = read_medley_job(md_job);
      const auto clips = load_medley_clips(job);
      const auto res = order_medley(ck.model(), ck.stats, clips, job.reference);
      auto j = to_json(res);
      if (!md_render.empty()) {
        audio::write_wav(md_render, render_medley(clips, res.ordering.perm));
        j["rendered"] = md_render;
      }
      print(j);
    } else if (*gc) {
      json rows = json::array();
      double worst = 0.0;
      for (const auto& r : run_gradcheck_suite(gc_probes)) {
        worst = std::max(worst, r.result.max_rel_error);
        rows.push_back({{"check", r.name},
                        {"max_rel_error", r.result.max_rel_error},
                        {"probes", r.result.probes},
                        {"skipped_kinks", r.result.skipped_kinks}});
      }
      print({{"checks", rows}, {"max_rel_error", worst}, {"pass", worst < 1e-4}});
      return worst < 1e-4 ? 0 : kData;
    } else if (*ee) {
      const auto ck = load_checkpoint(ee_ckpt);
      const auto model = ck.model();
      const std::size_t n = ee_n ? ee_n : ck.config.pieces;
      const auto set = puzzle_set(ee_cache, split_ids(ee_cache, ck.config, ee_split), ck.stats, n, model.min_frames());
      std::ofstream out(ee_out);
      if (!out) throw DataError("cannot write " + ee_out);
      const std::size_t k = ck.arch.trunk_channels.back();
      out << "song_id,fragment,begin_frame,end_frame";
      for (std::size_t c = 0; c < k; ++c) out << ",e" << c;
      out << '\n';
      out.precision(9);
      for (const auto& s : set.songs) {
        for (std::size_t f = 0; f < s.fragments.size(); ++f) {
          const auto feat = model.encode(s.fragment(f));
          out << s.id << ',' << f << ',' << s.fragments[f].begin_frame << ',' << s.fragments[f].end_frame;
          for (std::size_t c = 0; c < k; ++c) {
            double m = 0.0;
            for (std::size_t t = 0; t < feat.dim(0); ++t) m += feat(t, c);
            out << ',' << m / static_cast<double>(feat.dim(0));
          }
          out << '\n';
        }
      }
      print({{"songs", set.songs.size()}, {"rows", set.songs.size() * n}, {"out", ee_out}});
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << std::endl;
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kData;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << std::endl;
    return kData;
  }
  return 0;
}
