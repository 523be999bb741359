#pragma once

// Finite-difference checks for every layer and for both full pair losses,
// in double precision. Layer checks use a random linear read-out so every
// output element contributes to the scalar loss.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "puzzle/gradcheck.hpp"
#include "puzzle/model.hpp"
#include "puzzle/nn.hpp"

namespace puzzle {

struct NamedGradCheck {
  std::string name;
  GradCheckResult result;
};

namespace detail {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double sd = 1.0) {
  Tensor<double> t(shape);
  std::normal_distribution<double> d(0.0, sd);
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

inline double readout(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace detail

/// Runs every check with `probes` probes each.
inline std::vector<NamedGradCheck> run_gradcheck_suite(std::size_t probes = 100, std::uint64_t seed = 7) {
  using detail::random_tensor;
  using detail::readout;
  std::mt19937_64 rng(seed);
  std::vector<NamedGradCheck> out;
  auto record = [&](std::string name, GradCheckResult r) { out.push_back({std::move(name), r}); };

  for (std::size_t stride : {1, 2}) {
    auto x = random_tensor({23, 5}, rng);
    auto w = random_tensor({4, 5, 4}, rng);
    auto b = random_tensor({4}, rng);
    const auto y0 = nn::conv1d_forward(x, w, b, stride);
    const auto r = random_tensor(y0.shape(), rng);
    Tensor<double> dx, dw(w.shape()), db(b.shape());
    nn::conv1d_backward(x, w, stride, r, &dx, dw, db);
    record("conv1d stride " + std::to_string(stride),
           grad_check({&x, &w, &b}, {dx, dw, db},
                      [&] { return ProbeValue{readout(nn::conv1d_forward(x, w, b, stride), r), 0}; },
                      probes, 1e-5, seed + stride));
  }
  {
    auto x = random_tensor({9, 8, 3}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng);
    auto b = random_tensor({4}, rng);
    const auto r = random_tensor(nn::conv2d_forward(x, w, b).shape(), rng);
    Tensor<double> dx, dw(w.shape()), db(b.shape());
    nn::conv2d_backward(x, w, r, &dx, dw, db);
    record("conv2d", grad_check({&x, &w, &b}, {dx, dw, db},
                                [&] { return ProbeValue{readout(nn::conv2d_forward(x, w, b), r), 0}; },
                                probes, 1e-5, seed + 3));
  }
  {
    auto x = random_tensor({40}, rng);
    const auto r = random_tensor({40}, rng);
    auto dy = r;
    nn::relu_backward_inplace(nn::relu(x), dy);
    record("relu", grad_check({&x}, {dy},
                              [&] {
                                const auto y = nn::relu(x);
                                PatternHash h;
                                h.mix_signs(y);
                                return ProbeValue{readout(y, r), h.value()};
                              },
                              probes, 1e-5, seed + 4));
  }
  {
    auto x = random_tensor({8, 7, 3}, rng);  // ragged edge windows included
    const auto f0 = nn::maxpool2d_forward(x, 3);
    const auto r = random_tensor(f0.out.shape(), rng);
    const auto dx = nn::maxpool2d_backward(x.shape(), f0.argmax, r);
    record("maxpool2d", grad_check({&x}, {dx},
                                   [&] {
                                     const auto f = nn::maxpool2d_forward(x, 3);
                                     PatternHash h;
                                     h.mix_indices(f.argmax);
                                     return ProbeValue{readout(f.out, r), h.value()};
                                   },
                                   probes, 1e-5, seed + 5));
  }
  for (auto mode : {nn::PoolingMode::concat, nn::PoolingMode::mean, nn::PoolingMode::max}) {
    auto x = random_tensor({6, 5, 4}, rng);
    const auto f0 = nn::global_pool_forward(x, mode);
    const auto r = random_tensor(f0.out.shape(), rng);
    const auto dx = nn::global_pool_backward(x, f0, mode, r);
    const char* name = mode == nn::PoolingMode::concat ? "global pool concat"
                       : mode == nn::PoolingMode::mean ? "global pool mean"
                                                       : "global pool max";
    record(name, grad_check({&x}, {dx},
                            [&] {
                              const auto f = nn::global_pool_forward(x, mode);
                              PatternHash h;
                              h.mix_indices(f.argmax);
                              return ProbeValue{readout(f.out, r), h.value()};
                            },
                            probes, 1e-5, seed + 6));
  }
  {
    auto x = random_tensor({12}, rng);
    auto w = random_tensor({5, 12}, rng);
    auto b = random_tensor({5}, rng);
    const auto r = random_tensor({5}, rng);
    Tensor<double> dw(w.shape()), db(b.shape());
    const auto dx = nn::dense_backward(x, w, r, dw, db);
    record("dense", grad_check({&x, &w, &b}, {dx, dw, db},
                               [&] { return ProbeValue{readout(nn::dense_forward(x, w, b), r), 0}; },
                               probes, 1e-5, seed + 7));
  }
  for (std::size_t label : {0, 1}) {
    auto z = random_tensor({2}, rng);
    const auto g = nn::softmax_xent(z, label).grad;
    record("softmax xent label " + std::to_string(label),
           grad_check({&z}, {g}, [&] { return ProbeValue{nn::softmax_xent(z, label).loss, 0}; },
                      probes, 1e-5, seed + 8 + label));
  }
  for (auto kernel : {nn::SimilarityKernel::cosine, nn::SimilarityKernel::inner_product}) {
    auto a = random_tensor({7, 6}, rng);
    auto b = random_tensor({9, 6}, rng);
    const auto f0 = nn::similarity_forward(a, b, kernel);
    const auto r = random_tensor(f0.s.shape(), rng);
    Tensor<double> da, db;
    nn::similarity_backward(a, b, f0, kernel, r, da, db);
    record(kernel == nn::SimilarityKernel::cosine ? "similarity cosine" : "similarity inner product",
           grad_check({&a, &b}, {da, db},
                      [&] { return ProbeValue{readout(nn::similarity_forward(a, b, kernel).s, r), 0}; },
                      probes, 1e-5, seed + 10));
  }

  // Full pair losses on a narrow architecture; small random biases keep
  // units away from exact zeros.
  struct Variant {
    const char* name;
    ModelKind kind;
    nn::SimilarityKernel kernel;
  };
  for (const Variant v : {Variant{"SEN pair loss", ModelKind::sen, nn::SimilarityKernel::cosine},
                          Variant{"SEN pair loss inner product", ModelKind::sen, nn::SimilarityKernel::inner_product},
                          Variant{"SN pair loss", ModelKind::sn, nn::SimilarityKernel::cosine}}) {
    ArchConfig arch;
    arch.kind = v.kind;
    arch.similarity = v.kernel;
    arch.trunk_channels = {6, 8, 10};
    arch.head_channels = {3, 4, 5};
    arch.dense_units = {12, 10};
    PuzzleModel<double> m(arch, seed);
    std::normal_distribution<double> small(0.0, 0.05);
    for (auto& p : m.params()) {
      if (p.name.find("bias") != std::string::npos) {
        for (auto& x : p.value.storage()) x = small(rng);
      }
    }
    const auto a = random_tensor({45, kMelBins}, rng);
    const auto b = random_tensor({52, kMelBins}, rng);
    for (std::size_t label : {0, 1}) {
      auto g = m.params().zero_gradients();
      m.loss_and_gradient(a, b, label, g);
      std::vector<Tensor<double>*> inputs;
      for (auto& p : m.params()) inputs.push_back(&p.value);
      record(std::string(v.name) + " label " + std::to_string(label),
             grad_check(inputs, g,
                        [&] {
                          const auto tr = m.forward(a, b);
                          return ProbeValue{nn::softmax_xent(tr.logits, label).loss, m.activation_pattern(tr)};
                        },
                        probes, 1e-5, seed + 20 + label));
    }
  }
  return out;
}

}  // namespace puzzle
