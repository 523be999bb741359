#include <gtest/gtest.h>

#include "puzzle/synth.hpp"
#include "puzzle/train.hpp"

using namespace puzzle;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.trunk_channels = {6, 8, 10};
  c.head_channels = {3, 4, 5};
  c.dense_units = {16, 16};
  c.epochs = 3;
  c.batch_size = 4;
  c.calibration_pairs = 8;
  c.seed = 3;
  return c;
}

std::vector<JigsawSong> tiny_songs(std::size_t count, std::size_t first) {
  synth::SynthParams p;
  p.duration_sec = 9.0;
  std::vector<audio::MelSpectrogram> mels;
  for (std::size_t i = 0; i < count; ++i) mels.push_back(synth::gen_mel_song(p, first + i));
  const auto stats = audio::compute_stats(mels);
  std::vector<JigsawSong> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(fixed_jigsaw("s" + std::to_string(i), audio::zscore(mels[i], stats), 3));
  }
  return out;
}

}  // namespace

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c = tiny_config();
  c.model = ModelKind::sn;
  c.negatives = {true, false, true};
  c.pooling = nn::PoolingMode::max;
  c.similarity = nn::SimilarityKernel::inner_product;
  c.trunk_stride = 2;
  c.init = InitMode::he;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.arch(), c.arch());
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(train_config_from_json({{"learning_rte", 0.1}}), UsageError);
  EXPECT_THROW(train_config_from_json({{"trunk_stride", 3}}), UsageError);
  EXPECT_THROW(train_config_from_json({{"negatives", nlohmann::json::array()}}), UsageError);
  EXPECT_THROW(train_config_from_json({{"negatives", {"R1R2"}}}), UsageError);
  EXPECT_THROW(train_config_from_json({{"epochs", "many"}}), UsageError);
  EXPECT_THROW(train_config_from_json({{"preset", "huge"}}), UsageError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::array()), UsageError);
}

TEST(TrainConfig, PresetsAndNegativeLists) {
  const auto d = train_config_from_json({{"preset", "desk"}});
  EXPECT_EQ(d.trunk_channels, (std::vector<std::size_t>{32, 64, 128}));
  EXPECT_EQ(d.dense_units, (std::vector<std::size_t>{256, 256}));
  const auto r = train_config_from_json({{"negatives", {"R3R1"}}});
  EXPECT_FALSE(r.negatives.r2r1);
  EXPECT_FALSE(r.negatives.r1r3);
  EXPECT_TRUE(r.negatives.r3r1);
}

TEST(Jigsaw, PairsFollowTheNegativeSelection) {
  const auto songs = tiny_songs(2, 0);
  EXPECT_EQ(jigsaw_pairs(songs, {}).size(), 2u * (2 + 4));
  EXPECT_EQ(jigsaw_pairs(songs, {false, true, false}).size(), 2u * (2 + 1));
  for (const auto& p : jigsaw_pairs(songs, {})) EXPECT_EQ(p.label, p.cls == PairClass::r1r2 ? 1 : 0);
}

TEST(Evaluate, OracleScorerSolvesShuffledPuzzles) {
  for (std::size_t n : {3u, 6u, 8u}) {
    for (std::size_t song = 0; song < 5; ++song) {
      const auto shown = presentation_order(n, 4, song);
      const auto r = solve_presented("x", shown, [](std::size_t a, std::size_t b) { return b == a + 1 ? 1.0 : 0.0; });
      EXPECT_EQ(r.ordering.perm, identity_order(n));
      EXPECT_EQ(r.pa, 1.0);
      EXPECT_EQ(r.ga, 1.0);
    }
  }
}

TEST(Evaluate, ConstantScorerGetsNoCreditFromPosition) {
  // with every pair scored equally the solver returns the presented order,
  // which is a shuffle, so mean PA stays well below 1
  double pa = 0.0;
  for (std::size_t song = 0; song < 40; ++song) {
    pa += solve_presented("x", presentation_order(6, 9, song), [](std::size_t, std::size_t) { return 0.5; }).pa;
  }
  EXPECT_LT(pa / 40.0, 0.5);
}

TEST(Train, LossFallsAndRunIsDeterministic) {
  const auto train_songs = tiny_songs(12, 0);
  const auto val_songs = tiny_songs(4, 100);
  const auto cfg = tiny_config();
  auto m1 = initial_model(cfg, train_songs);
  std::vector<double> losses;
  const auto r1 = train(m1, cfg, train_songs, val_songs, [&](const EpochLog& e) { losses.push_back(e.train_loss); });
  ASSERT_EQ(losses.size(), 3u);
  EXPECT_LT(losses.back(), losses.front());
  EXPECT_EQ(r1.history.size(), 3u);
  EXPECT_GE(r1.best_epoch, 1u);
  auto m2 = initial_model(cfg, train_songs);
  const auto r2 = train(m2, cfg, train_songs, val_songs);
  for (std::size_t i = 0; i < r1.best.size(); ++i) EXPECT_EQ(r1.best[i].value, r2.best[i].value);
  const auto rep = evaluate_puzzles(PuzzleModel<float>(cfg.arch(), r1.best), val_songs);
  EXPECT_EQ(rep.songs.size(), 4u);
  EXPECT_GE(rep.mean_pa, 0.0);
  EXPECT_LE(rep.mean_pa, 1.0);
}

TEST(Train, DataInitStartsAtEvenOdds) {
  const auto songs = tiny_songs(4, 0);
  auto cfg = tiny_config();
  const auto m = initial_model(cfg, songs);
  EXPECT_FLOAT_EQ(m.probability(songs[0].fragment(0), songs[0].fragment(1)), 0.5f);
  cfg.init = InitMode::he;
  const auto h = initial_model(cfg, songs);
  EXPECT_EQ(h.params()[0].value, PuzzleModel<float>(cfg.arch(), cfg.seed).params()[0].value);
}
