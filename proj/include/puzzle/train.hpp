#pragma once

// Training configuration, jigsaw datasets, the SGD training loop and
// model checkpoints.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "puzzle/audio.hpp"
#include "puzzle/checkpoint.hpp"
#include "puzzle/corpus.hpp"
#include "puzzle/error.hpp"
#include "puzzle/model.hpp"
#include "puzzle/solver.hpp"

namespace puzzle {

// ---------------------------------------------------------------------------
// Configuration

inline const char* to_string(ModelKind k) { return k == ModelKind::sen ? "sen" : "sn"; }
inline const char* to_string(nn::SimilarityKernel k) {
  return k == nn::SimilarityKernel::cosine ? "cosine" : "inner_product";
}
inline const char* to_string(nn::PoolingMode m) {
  switch (m) {
    case nn::PoolingMode::concat: return "concat";
    case nn::PoolingMode::mean: return "mean";
    case nn::PoolingMode::max: return "max";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "sen") return ModelKind::sen;
  if (s == "sn") return ModelKind::sn;
  throw UsageError("model must be 'sen' or 'sn', got '" + s + "'");
}
inline nn::SimilarityKernel parse_similarity(const std::string& s) {
  if (s == "cosine") return nn::SimilarityKernel::cosine;
  if (s == "inner_product") return nn::SimilarityKernel::inner_product;
  throw UsageError("similarity must be 'cosine' or 'inner_product', got '" + s + "'");
}
inline nn::PoolingMode parse_pooling(const std::string& s) {
  if (s == "concat") return nn::PoolingMode::concat;
  if (s == "mean") return nn::PoolingMode::mean;
  if (s == "max") return nn::PoolingMode::max;
  throw UsageError("pooling must be 'concat', 'mean' or 'max', got '" + s + "'");
}

/// Defaults give the full model at its published widths; each ablation is a
/// single field change.
/// he: He-normal weights with zero biases. data: He-normal, then calibrated
/// on training pairs (see PuzzleModel::calibrate).
enum class InitMode { he, data };

inline const char* to_string(InitMode m) { return m == InitMode::he ? "he" : "data"; }
inline InitMode parse_init_mode(const std::string& s) {
  if (s == "he") return InitMode::he;
  if (s == "data") return InitMode::data;
  throw UsageError("unknown init '" + s + "' (expected he or data)");
}

struct TrainConfig {
  ModelKind model = ModelKind::sen;
  // optimization
  double learning_rate = 0.01;
  double lr_decay = 0.5;
  std::size_t lr_patience = 3;
  std::size_t epochs = 30;
  std::size_t early_stop_patience = 0;  // 0 = run every epoch
  std::size_t batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  InitMode init = InitMode::data;
  std::size_t calibration_pairs = 32;
  // data
  std::size_t pieces = 3;
  NegativeClasses negatives;
  SplitRatios split{2000, 200, 200};
  std::uint64_t split_seed = 1;
  // architecture
  nn::SimilarityKernel similarity = nn::SimilarityKernel::cosine;
  std::size_t trunk_stride = 1;
  nn::PoolingMode pooling = nn::PoolingMode::concat;
  std::vector<std::size_t> trunk_channels{128, 256, 512};
  std::vector<std::size_t> head_channels{64, 128, 256};
  std::vector<std::size_t> dense_units{1024, 1024};

  ArchConfig arch() const {
    ArchConfig a;
    a.kind = model;
    a.trunk_channels = trunk_channels;
    a.trunk_stride = trunk_stride;
    a.head_channels = head_channels;
    a.dense_units = dense_units;
    a.similarity = similarity;
    a.pooling = pooling;
    return a;
  }

  void validate() const {
    if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(weight_decay >= 0.0)) {
      throw UsageError("train config: learning_rate, momentum and weight_decay out of range");
    }
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw UsageError("train config: lr_decay must be in (0, 1]");
    if (init == InitMode::data && calibration_pairs == 0) {
      throw UsageError("train config: calibration_pairs must be positive");
    }
    if (batch_size == 0 || threads == 0) throw UsageError("train config: batch_size and threads must be positive");
    if (pieces < 3) throw UsageError("train config: pieces must be at least 3");
    if (!negatives.any()) throw UsageError("train config: at least one negative class is required");
    if (trunk_stride != 1 && trunk_stride != 2) throw UsageError("train config: trunk_stride must be 1 or 2");
  }
};

/// Width preset sized for a single desktop core.
inline void apply_desk_widths(TrainConfig& c) {
  c.trunk_channels = {32, 64, 128};
  c.head_channels = {8, 16, 32};
  c.dense_units = {256, 256};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"model", to_string(c.model)},
          {"learning_rate", c.learning_rate},
          {"lr_decay", c.lr_decay},
          {"lr_patience", c.lr_patience},
          {"epochs", c.epochs},
          {"early_stop_patience", c.early_stop_patience},
          {"batch_size", c.batch_size},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"threads", c.threads},
          {"init", to_string(c.init)},
          {"calibration_pairs", c.calibration_pairs},
          {"pieces", c.pieces},
          {"negatives", {{"R2R1", c.negatives.r2r1}, {"R1R3", c.negatives.r1r3}, {"R3R1", c.negatives.r3r1}}},
          {"split", {{"train", c.split.train}, {"validation", c.split.validation}, {"test", c.split.test}}},
          {"split_seed", c.split_seed},
          {"similarity", to_string(c.similarity)},
          {"trunk_stride", c.trunk_stride},
          {"pooling", to_string(c.pooling)},
          {"trunk_channels", c.trunk_channels},
          {"head_channels", c.head_channels},
          {"dense_units", c.dense_units}};
}

/// Missing keys keep their defaults; unknown keys are rejected so typos in
/// ablation configs do not pass silently.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw UsageError("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "model") c.model = parse_model_kind(v.get<std::string>());
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "lr_decay") c.lr_decay = v.get<double>();
      else if (key == "lr_patience") c.lr_patience = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "early_stop_patience") c.early_stop_patience = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "threads") c.threads = v.get<std::size_t>();
      else if (key == "init") c.init = parse_init_mode(v.get<std::string>());
      else if (key == "calibration_pairs") c.calibration_pairs = v.get<std::size_t>();
      else if (key == "pieces") c.pieces = v.get<std::size_t>();
      else if (key == "negatives") {
        if (v.is_array()) {
          c.negatives = {false, false, false};
          for (const auto& name : v) {
            switch (parse_pair_class(name.get<std::string>())) {
              case PairClass::r2r1: c.negatives.r2r1 = true; break;
              case PairClass::r1r3: c.negatives.r1r3 = true; break;
              case PairClass::r3r1: c.negatives.r3r1 = true; break;
              case PairClass::r1r2: throw UsageError("R1R2 is the positive class, not a negative");
            }
          }
        } else {
          c.negatives.r2r1 = v.value("R2R1", true);
          c.negatives.r1r3 = v.value("R1R3", true);
          c.negatives.r3r1 = v.value("R3R1", true);
        }
      } else if (key == "split") {
        c.split = {v.at("train").get<double>(), v.at("validation").get<double>(),
                   v.at("test").get<double>()};
      } else if (key == "split_seed") c.split_seed = v.get<std::uint64_t>();
      else if (key == "similarity") c.similarity = parse_similarity(v.get<std::string>());
      else if (key == "trunk_stride") c.trunk_stride = v.get<std::size_t>();
      else if (key == "pooling") c.pooling = parse_pooling(v.get<std::string>());
      else if (key == "trunk_channels") c.trunk_channels = v.get<std::vector<std::size_t>>();
      else if (key == "head_channels") c.head_channels = v.get<std::vector<std::size_t>>();
      else if (key == "dense_units") c.dense_units = v.get<std::vector<std::size_t>>();
      else if (key == "preset") {
        if (v.get<std::string>() == "desk") apply_desk_widths(c);
        else if (v.get<std::string>() != "full") throw UsageError("preset must be 'full' or 'desk'");
      } else throw UsageError("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Datasets

/// A normalized song spectrogram with its fragment list.
struct JigsawSong {
  std::string id;
  Tensor<float> mel;  // [frames, 128], z-scored
  std::vector<Fragment> fragments;

  Tensor<float> fragment(std::size_t i) const { return mel.rows(fragments[i].begin_frame, fragments[i].end_frame); }
};

struct PairRef {
  std::size_t song = 0;
  std::size_t a = 0, b = 0;  // fragment indices
  int label = 0;
  PairClass cls = PairClass::r1r2;
};

inline std::vector<PairRef> jigsaw_pairs(const std::vector<JigsawSong>& songs,
                                         const NegativeClasses& negatives) {
  std::vector<PairRef> out;
  for (std::size_t s = 0; s < songs.size(); ++s) {
    for (const auto& p : make_pairs(songs[s].fragments, negatives)) {
      out.push_back({s, p.a.index, p.b.index, p.label, p.cls});
    }
  }
  return out;
}

inline JigsawSong fixed_jigsaw(std::string id, const audio::MelSpectrogram& normalized,
                               std::size_t n, std::size_t min_frames = kMinFragmentFrames) {
  JigsawSong s{std::move(id), normalized.data, {}};
  s.fragments = segment_fixed(s.id, normalized.frames(), n, min_frames);
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

struct PuzzleResult {
  std::string song_id;
  Ordering ordering;
  double pa = 0.0;
  double ga = 0.0;
};

struct PuzzleReport {
  std::vector<PuzzleResult> songs;
  double mean_pa = 0.0;
  double mean_ga = 0.0;
};

template <typename T>
ScoreMatrix score_fragments(const PuzzleModel<T>& model, const std::vector<Tensor<T>>& fragments) {
  return score_all_pairs(fragments.size(), [&](std::size_t a, std::size_t b) {
    return static_cast<double>(model.probability(fragments[a], fragments[b]));
  });
}

inline Ordering solve(const ScoreMatrix& m) {
  return m.n() <= 3 ? solve_bruteforce(m) : solve_heldkarp(m);
}

/// Fragment presentation order for one puzzle: a seeded shuffle, so that
/// ties or a constant scorer cannot land on the answer by position alone.
inline std::vector<std::size_t> presentation_order(std::size_t n, std::uint64_t seed,
                                                   std::size_t song_index) {
  auto order = identity_order(n);
  std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ULL * (song_index + 1));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Solves a puzzle whose fragments are shown in `shown` order (shown[k] is
/// the chronological index of the k-th presented fragment). `score(a, b)`
/// takes chronological indices. The returned ordering is mapped back to
/// chronological indices, so the identity is the right answer.
inline PuzzleResult solve_presented(const std::string& id, const std::vector<std::size_t>& shown,
                                    const std::function<double(std::size_t, std::size_t)>& score,
                                    ScoreMatrix* matrix = nullptr) {
  const std::size_t n = shown.size();
  const auto m = score_all_pairs(n, [&](std::size_t a, std::size_t b) { return score(shown[a], shown[b]); });
  if (matrix) *matrix = m;
  PuzzleResult res{id, solve(m), 0.0, 0.0};
  for (auto& p : res.ordering.perm) p = shown[p];
  const auto truth = identity_order(n);
  res.pa = pairwise_accuracy(res.ordering.perm, truth);
  res.ga = global_accuracy(res.ordering.perm, truth);
  return res;
}

inline void finish_report(PuzzleReport& r) {
  r.mean_pa = r.mean_ga = 0.0;
  for (const auto& s : r.songs) {
    r.mean_pa += s.pa;
    r.mean_ga += s.ga;
  }
  if (!r.songs.empty()) {
    r.mean_pa /= static_cast<double>(r.songs.size());
    r.mean_ga /= static_cast<double>(r.songs.size());
  }
}

/// Scores and solves each song's puzzle, fragments presented in shuffled
/// order; ground truth is the chronological order.
inline PuzzleReport evaluate_puzzles(const PuzzleModel<float>& model,
                                     const std::vector<JigsawSong>& songs,
                                     std::uint64_t shuffle_seed = 0) {
  PuzzleReport r;
  for (std::size_t i = 0; i < songs.size(); ++i) {
    const auto& s = songs[i];
    std::vector<Tensor<float>> frags;
    for (std::size_t k = 0; k < s.fragments.size(); ++k) frags.push_back(s.fragment(k));
    r.songs.push_back(solve_presented(
        s.id, presentation_order(frags.size(), shuffle_seed, i),
        [&](std::size_t a, std::size_t b) { return static_cast<double>(model.probability(frags[a], frags[b])); }));
  }
  finish_report(r);
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_pa = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_pa", e.val_pa},
          {"val_loss", e.val_loss}, {"lr", e.lr}, {"seconds", e.seconds}};
}

struct TrainResult {
  ParameterSet<float> best;
  std::size_t best_epoch = 0;
  double best_val_pa = 0.0;
  std::vector<EpochLog> history;
};

namespace detail {

/// Mean validation loss over the given pairs, plus puzzle PA over songs.
inline std::pair<double, double> validate(const PuzzleModel<float>& model,
                                          const std::vector<JigsawSong>& songs,
                                          const std::vector<PairRef>& pairs) {
  std::vector<std::map<std::pair<std::size_t, std::size_t>, double>> prob(songs.size());
  double loss = 0.0;
  std::vector<std::vector<Tensor<float>>> frags(songs.size());
  auto fragment = [&](std::size_t s, std::size_t i) -> const Tensor<float>& {
    if (frags[s].empty()) {
      for (std::size_t k = 0; k < songs[s].fragments.size(); ++k) frags[s].push_back(songs[s].fragment(k));
    }
    return frags[s][i];
  };
  auto p_of = [&](std::size_t s, std::size_t a, std::size_t b) {
    auto it = prob[s].find({a, b});
    if (it != prob[s].end()) return it->second;
    const double p = model.probability(fragment(s, a), fragment(s, b));
    prob[s][{a, b}] = p;
    return p;
  };
  for (const auto& pr : pairs) {
    const double p = p_of(pr.song, pr.a, pr.b);
    const double q = pr.label == 1 ? p : 1.0 - p;
    loss -= std::log(std::max(q, 1e-12));
  }
  double pa = 0.0;
  for (std::size_t s = 0; s < songs.size(); ++s) {
    const std::size_t n = songs[s].fragments.size();
    pa += solve_presented(songs[s].id, presentation_order(n, 0, s),
                          [&](std::size_t a, std::size_t b) { return p_of(s, a, b); })
              .pa;
  }
  const double vl = pairs.empty() ? 0.0 : loss / static_cast<double>(pairs.size());
  return {songs.empty() ? 0.0 : pa / static_cast<double>(songs.size()), vl};
}

}  // namespace detail

/// Fresh model for cfg, calibrated on a seeded sample of training pairs
/// when cfg.init is data.
inline PuzzleModel<float> initial_model(const TrainConfig& cfg, const std::vector<JigsawSong>& train_songs) {
  cfg.validate();
  PuzzleModel<float> model(cfg.arch(), cfg.seed);
  if (cfg.init == InitMode::he) return model;
  const auto pairs = jigsaw_pairs(train_songs, cfg.negatives);
  if (pairs.empty()) throw UsageError("initial_model: no training pairs to calibrate on");
  std::mt19937_64 rng(cfg.seed + 0x9E3779B97F4A7C15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  std::vector<Tensor<float>> frags;
  frags.reserve(2 * cfg.calibration_pairs);
  for (std::size_t k = 0; k < cfg.calibration_pairs; ++k) {
    const auto& pr = pairs[pick(rng)];
    frags.push_back(train_songs[pr.song].fragment(pr.a));
    frags.push_back(train_songs[pr.song].fragment(pr.b));
  }
  std::vector<std::pair<const Tensor<float>*, const Tensor<float>*>> samples;
  for (std::size_t k = 0; k < frags.size(); k += 2) samples.emplace_back(&frags[k], &frags[k + 1]);
  model.calibrate(samples);
  return model;
}

/// SGD with momentum over shuffled pairs. Each step averages the gradients of
/// `batch_size` samples, computed one at a time since fragment lengths may
/// differ. The learning rate is multiplied by lr_decay whenever validation PA
/// has not improved for lr_patience epochs. Returns the parameters of the
/// epoch with the best validation PA (ties: lower validation loss).
inline TrainResult train(PuzzleModel<float>& model, const TrainConfig& cfg,
                         const std::vector<JigsawSong>& train_songs,
                         const std::vector<JigsawSong>& val_songs,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  const auto train_pairs = jigsaw_pairs(train_songs, cfg.negatives);
  const auto val_pairs = jigsaw_pairs(val_songs, cfg.negatives);
  if (train_pairs.empty() || val_songs.empty()) throw UsageError("train: empty training or validation set");

  const std::size_t threads = std::min(cfg.threads, cfg.batch_size);
  std::vector<Gradients<float>> grads;
  for (std::size_t t = 0; t < threads; ++t) grads.push_back(model.params().zero_gradients());
  std::vector<double> thread_loss(threads);

  TrainResult result;
  result.best = model.params();
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool have_best = false;
  double lr = cfg.learning_rate;
  std::size_t since_improvement = 0, since_best = 0;
  std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(train_pairs.size());
  const float scale = 1.0f / static_cast<float>(cfg.batch_size);

  auto run_sample = [&](std::size_t t, const PairRef& pr) {
    const auto& song = train_songs[pr.song];
    const double l = model.loss_and_gradient(song.fragment(pr.a), song.fragment(pr.b),
                                             static_cast<std::size_t>(pr.label), grads[t], scale);
    if (!std::isfinite(l)) {
      throw DivergenceError("loss became non-finite on pair (" + song.id + ", " +
                            std::to_string(pr.a) + " -> " + std::to_string(pr.b) +
                            ") at learning rate " + std::to_string(lr));
    }
    thread_loss[t] += l;
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (auto& g : grads) {
        for (auto& t : g) t.fill(0.0f);
      }
      std::fill(thread_loss.begin(), thread_loss.end(), 0.0);
      if (threads == 1) {
        for (std::size_t i = start; i < end; ++i) run_sample(0, train_pairs[order[i]]);
      } else {
        // Sample i of the batch always goes to worker i % threads, and the
        // per-worker sums are reduced in worker order.
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        for (std::size_t t = 0; t < threads; ++t) {
          pool.emplace_back([&, t] {
            try {
              for (std::size_t i = start + t; i < end; i += threads) run_sample(t, train_pairs[order[i]]);
            } catch (...) {
              errors[t] = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
          if (e) std::rethrow_exception(e);
        }
        for (std::size_t t = 1; t < threads; ++t) accumulate(grads[0], grads[t]);
      }
      for (double l : thread_loss) epoch_loss += l;
      // A short final batch keeps the 1/batch_size scaling.
      sgd_momentum_step(model.params(), grads[0], lr, cfg.momentum, cfg.weight_decay);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(order.size());
    log.lr = lr;
    std::tie(log.val_pa, log.val_loss) = detail::validate(model, val_songs, val_pairs);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);

    const bool improved_pa = !have_best || log.val_pa > result.best_val_pa;
    if (improved_pa || (log.val_pa == result.best_val_pa && log.val_loss < best_val_loss)) {
      result.best = model.params();
      result.best_epoch = epoch;
      result.best_val_pa = log.val_pa;
      best_val_loss = log.val_loss;
      have_best = true;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (improved_pa) {
      since_improvement = 0;
    } else if (++since_improvement >= cfg.lr_patience) {
      lr *= cfg.lr_decay;
      since_improvement = 0;
    }
    if (cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ArchConfig arch;
  TrainConfig config;
  audio::CorpusStats stats;
  ParameterSet<float> params;
  nlohmann::json extra = nlohmann::json::object();

  PuzzleModel<float> model() const { return PuzzleModel<float>(arch, params); }
};

inline std::vector<float> to_floats(const std::vector<double>& v) { return {v.begin(), v.end()}; }

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck,
                            bool with_velocity = true) {
  TensorArchive ar;
  for (const auto& p : ck.params) {
    ar.tensors.emplace(p.name, p.value);
    if (with_velocity) ar.tensors.emplace("velocity." + p.name, p.velocity);
  }
  if (!ck.stats.mean.empty()) {
    ar.tensors.emplace("norm.mean", Tensor<float>({ck.stats.mean.size()}, to_floats(ck.stats.mean)));
    ar.tensors.emplace("norm.std", Tensor<float>({ck.stats.std.size()}, to_floats(ck.stats.std)));
  }
  ar.config = {{"train", to_json(ck.config)}, {"extra", ck.extra}};
  save_archive(path, ar);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto ar = load_archive(path);
  Checkpoint ck;
  if (!ar.config.contains("train")) throw DataError(path.string() + ": checkpoint has no train config");
  try {
    ck.config = train_config_from_json(ar.config.at("train"));
  } catch (const UsageError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  ck.arch = ck.config.arch();
  ck.extra = ar.config.value("extra", nlohmann::json::object());
  if (ar.contains("norm.mean")) {
    const auto& m = ar.at("norm.mean");
    const auto& s = ar.at("norm.std");
    ck.stats.mean.assign(m.storage().begin(), m.storage().end());
    ck.stats.std.assign(s.storage().begin(), s.storage().end());
  }
  for (const auto& [name, t] : ar.tensors) {
    if (name.rfind("velocity.", 0) == 0 || name.rfind("norm.", 0) == 0) continue;
    const std::size_t i = ck.params.add(name, t.shape());
    ck.params[i].value = t;
    if (ar.contains("velocity." + name)) ck.params[i].velocity = ar.at("velocity." + name);
  }
  // Validates names and shapes against the architecture.
  (void)ck.model();
  return ck;
}

/// Float32 round trip of the stored statistics, so every consumer of a
/// checkpoint normalizes identically.
inline audio::CorpusStats stored_stats(const audio::CorpusStats& s) {
  audio::CorpusStats out;
  for (double v : s.mean) out.mean.push_back(static_cast<float>(v));
  for (double v : s.std) out.std.push_back(static_cast<float>(v));
  return out;
}

}  // namespace puzzle
