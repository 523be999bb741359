#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "puzzle/gradcheck_suite.hpp"
#include "puzzle/nn.hpp"
#include "puzzle/optim.hpp"

using namespace puzzle;

namespace {

Tensor<double> randn(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor<double> t(s);
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

}  // namespace

TEST(Conv1d, MatchesDirectLoops) {
  const auto x = randn({17, 3}, 1), w = randn({4, 3, 4}, 2), b = randn({4}, 3);
  for (std::size_t stride : {1, 2}) {
    const auto y = nn::conv1d_forward(x, w, b, stride);
    const std::size_t out = (17 - 4) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{out, 4}));
    for (std::size_t t = 0; t < out; ++t) {
      for (std::size_t o = 0; o < 4; ++o) {
        double acc = b[o];
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t p = 0; p < 4; ++p) acc += w(o, c, p) * x(t * stride + p, c);
        }
        EXPECT_NEAR(y(t, o), acc, 1e-12);
      }
    }
  }
  EXPECT_THROW(nn::conv1d_forward(randn({3, 3}, 4), w, b, 1), UsageError);
}

TEST(Conv2d, MatchesDirectLoops) {
  const auto x = randn({6, 7, 2}, 5), w = randn({3, 2, 3, 3}, 6), b = randn({3}, 7);
  const auto y = nn::conv2d_forward(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{4, 5, 3}));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      for (std::size_t o = 0; o < 3; ++o) {
        double acc = b[o];
        for (std::size_t c = 0; c < 2; ++c) {
          for (std::size_t u = 0; u < 3; ++u) {
            for (std::size_t v = 0; v < 3; ++v) {
              acc += w[((o * 2 + c) * 3 + u) * 3 + v] * x(i + u, j + v, c);
            }
          }
        }
        EXPECT_NEAR(y(i, j, o), acc, 1e-12);
      }
    }
  }
}

TEST(MaxPool, CeilModeKeepsRaggedEdges) {
  EXPECT_EQ(nn::pool_output_length(7, 3), 3u);
  EXPECT_EQ(nn::pool_output_length(6, 3), 2u);
  EXPECT_EQ(nn::pool_output_length(1, 3), 1u);
  Tensor<double> x({4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  const auto r = nn::maxpool2d_forward(x, 3);
  ASSERT_EQ(r.out.shape(), (Shape{2, 2, 1}));
  EXPECT_EQ(r.out[0], 10.0);
  EXPECT_EQ(r.out[1], 11.0);
  EXPECT_EQ(r.out[2], 14.0);
  EXPECT_EQ(r.out[3], 15.0);
}

TEST(MaxPool, TiesGoToTheFirstPosition) {
  Tensor<double> x({3, 3, 1}, 2.0);
  const auto r = nn::maxpool2d_forward(x, 3);
  EXPECT_EQ(r.argmax[0], 0u);
}

TEST(GlobalPool, ConcatIsMeanMaxStd) {
  Tensor<double> x({4, 2}, std::vector<double>{1, -1, 2, -2, 3, -3, 6, -4});
  const auto r = nn::global_pool_forward(x, nn::PoolingMode::concat);
  ASSERT_EQ(r.out.size(), 6u);
  EXPECT_DOUBLE_EQ(r.out[0], 3.0);
  EXPECT_DOUBLE_EQ(r.out[1], -2.5);
  EXPECT_DOUBLE_EQ(r.out[2], 6.0);
  EXPECT_DOUBLE_EQ(r.out[3], -1.0);
  EXPECT_NEAR(r.out[4], std::sqrt((4.0 + 1.0 + 0.0 + 9.0) / 4.0), 1e-12);
  EXPECT_NEAR(r.out[5], std::sqrt((2.25 + 0.25 + 0.25 + 2.25) / 4.0), 1e-12);
  EXPECT_EQ(nn::global_pool_forward(x, nn::PoolingMode::mean).out.size(), 2u);
  EXPECT_DOUBLE_EQ(nn::global_pool_forward(x, nn::PoolingMode::max).out[0], 6.0);
}

TEST(Dense, MatchesMatrixVectorProduct) {
  const auto x = randn({5}, 8), w = randn({3, 5}, 9), b = randn({3}, 10);
  const auto y = nn::dense_forward(x, w, b);
  for (std::size_t o = 0; o < 3; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < 5; ++i) acc += w(o, i) * x[i];
    EXPECT_NEAR(y[o], acc, 1e-12);
  }
  EXPECT_THROW(nn::dense_forward(randn({4}, 1), w, b), UsageError);
}

TEST(SoftmaxXent, StableForLargeLogits) {
  Tensor<double> z({2}, std::vector<double>{1000.0, 0.0});
  const auto r0 = nn::softmax_xent(z, 0);
  EXPECT_NEAR(r0.loss, 0.0, 1e-300);
  EXPECT_TRUE(std::isfinite(nn::softmax_xent(z, 1).loss));
  EXPECT_NEAR(nn::softmax_xent(z, 1).loss, 1000.0, 1e-9);
  Tensor<double> y({2}, std::vector<double>{0.3, -0.2});
  const double p1 = std::exp(-0.2) / (std::exp(0.3) + std::exp(-0.2));
  EXPECT_NEAR(nn::softmax_xent(y, 1).loss, -std::log(p1), 1e-14);
  EXPECT_NEAR(nn::softmax_xent(y, 1).grad[1], p1 - 1.0, 1e-14);
}

TEST(Similarity, CosineOfSelfIsOneAndSymmetric) {
  const auto a = randn({6, 5}, 11);
  const auto r = nn::similarity_forward(a, a, nn::SimilarityKernel::cosine);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(r.s(i, i), 1.0, 1e-12);
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_NEAR(r.s(i, j), r.s(j, i), 1e-12);
      EXPECT_LE(std::abs(r.s(i, j)), 1.0 + 1e-12);
    }
  }
}

TEST(Similarity, ZeroRowsGiveZeroScores) {
  auto a = randn({3, 4}, 12);
  for (std::size_t k = 0; k < 4; ++k) a(1, k) = 0.0;
  const auto r = nn::similarity_forward(a, randn({2, 4}, 13), nn::SimilarityKernel::cosine);
  EXPECT_EQ(r.s(1, 0), 0.0);
  EXPECT_EQ(r.s(1, 1), 0.0);
}

TEST(Similarity, InnerProductIsPlainDot) {
  const auto a = randn({2, 3}, 14), b = randn({4, 3}, 15);
  const auto r = nn::similarity_forward(a, b, nn::SimilarityKernel::inner_product);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) acc += a(i, k) * b(j, k);
      EXPECT_NEAR(r.s(i, j), acc, 1e-12);
    }
  }
}

TEST(Optim, MomentumUpdateRule) {
  ParameterSet<double> ps;
  ps.add("w", {2});
  ps[0].value = Tensor<double>({2}, std::vector<double>{1.0, -2.0});
  Gradients<double> g{Tensor<double>({2}, std::vector<double>{0.5, 0.25})};
  sgd_momentum_step(ps, g, 0.1, 0.9, 0.01);
  // v = -0.1 * (g + 0.01 w)
  EXPECT_NEAR(ps[0].velocity[0], -0.1 * (0.5 + 0.01), 1e-15);
  EXPECT_NEAR(ps[0].value[0], 1.0 - 0.1 * 0.51, 1e-15);
  const double v1 = ps[0].velocity[1];
  const double w1 = ps[0].value[1];
  sgd_momentum_step(ps, g, 0.1, 0.9, 0.01);
  EXPECT_NEAR(ps[0].velocity[1], 0.9 * v1 - 0.1 * (0.25 + 0.01 * w1), 1e-15);
}

TEST(Optim, HeNormalVariance) {
  Tensor<double> w({200, 50});
  std::mt19937_64 rng(2);
  he_normal(w, 50, rng);
  double sq = 0.0;
  for (auto v : w.storage()) sq += v * v;
  EXPECT_NEAR(sq / double(w.size()), 2.0 / 50.0, 0.002);
}

TEST(GradCheck, EveryLayerAndPairLoss) {
  for (const auto& r : run_gradcheck_suite(100)) {
    EXPECT_LT(r.result.max_rel_error, 1e-4) << r.name;
    EXPECT_EQ(r.result.probes, 100u) << r.name;
  }
}

TEST(GradCheck, DetectsAWrongGradient) {
  auto x = randn({5}, 16);
  auto wrong = x;  // claims d(sum x^2)/dx = x instead of 2x
  const auto r = grad_check({&x}, {wrong}, [&] {
    double s = 0.0;
    for (auto v : x.storage()) s += v * v;
    return ProbeValue{s, 0};
  });
  EXPECT_GT(r.max_rel_error, 0.4);
}
