#pragma once

// SEN and SN pair classifiers over a shared 1D-convolutional Siamese trunk.
//
//   SEN: trunk(a), trunk(b) -> similarity matrix -> 2D conv/relu/pool x3
//        -> global pool -> dense/relu x2 -> 2 logits
//   SN:  trunk(a), trunk(b) -> global pool each -> concat
//        -> dense/relu x2 -> 2 logits
//
// Logit 1 is "consecutive and in order".

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "puzzle/error.hpp"
#include "puzzle/gradcheck.hpp"
#include "puzzle/nn.hpp"
#include "puzzle/optim.hpp"
#include "puzzle/tensor.hpp"

namespace puzzle {

enum class ModelKind { sen, sn };

inline constexpr std::size_t kMelBins = 128;
/// Documented lower bound on fragment length for the default architecture.
inline constexpr std::size_t kMinFragmentFrames = 39;

struct ArchConfig {
  ModelKind kind = ModelKind::sen;
  std::size_t input_bins = kMelBins;
  std::vector<std::size_t> trunk_channels{128, 256, 512};
  std::size_t trunk_filter = 4;
  std::size_t trunk_stride = 1;
  std::vector<std::size_t> head_channels{64, 128, 256};
  std::size_t head_kernel = 3;
  std::size_t head_pool = 3;
  std::vector<std::size_t> dense_units{1024, 1024};
  nn::SimilarityKernel similarity = nn::SimilarityKernel::cosine;
  nn::PoolingMode pooling = nn::PoolingMode::concat;

  bool operator==(const ArchConfig&) const = default;
};

/// Temporal length of the trunk output, or nullopt if a layer underflows.
inline std::optional<std::size_t> trunk_output_frames(const ArchConfig& arch, std::size_t frames) {
  std::size_t len = frames;
  for (std::size_t i = 0; i < arch.trunk_channels.size(); ++i) {
    if (len < arch.trunk_filter) return std::nullopt;
    len = nn::conv_output_length(len, arch.trunk_filter, arch.trunk_stride);
  }
  return len;
}

/// Whether one similarity-matrix extent survives the SEN head.
inline bool head_accepts(const ArchConfig& arch, std::size_t extent) {
  std::size_t len = extent;
  for (std::size_t i = 0; i < arch.head_channels.size(); ++i) {
    if (len < arch.head_kernel) return false;
    len = nn::pool_output_length(len - arch.head_kernel + 1, arch.head_pool);
  }
  return len >= 1;
}

/// Shortest fragment (in frames) the architecture can score, never below
/// kMinFragmentFrames.
inline std::size_t min_fragment_frames(const ArchConfig& arch) {
  for (std::size_t t = 1; t < 100000; ++t) {
    const auto out = trunk_output_frames(arch, t);
    if (!out || *out == 0) continue;
    if (arch.kind == ModelKind::sen && !head_accepts(arch, *out)) continue;
    return std::max(t, kMinFragmentFrames);
  }
  throw UsageError("architecture cannot accept any input length");
}

template <typename T>
class PuzzleModel {
 public:
  struct Trace {
    std::vector<Tensor<T>> trunk_a, trunk_b;  // [0] = input, [i+1] = relu(conv_i)
    // SEN
    nn::SimilarityResult<T> sim;
    std::vector<Tensor<T>> head_in;  // input of head conv i, [H,W,C]
    std::vector<Tensor<T>> head_act;  // relu(conv_i)
    std::vector<nn::MaxPoolResult<T>> head_pool;
    // SN
    nn::GlobalPoolResult<T> pool_b;
    // shared tail
    nn::GlobalPoolResult<T> pool;  // SEN: over head output; SN: branch a
    Tensor<T> pooled;
    std::vector<Tensor<T>> dense_act;  // relu outputs of the hidden dense layers
    Tensor<T> logits;
  };

  PuzzleModel(ArchConfig arch, std::uint64_t seed) : arch_(std::move(arch)) {
    build();
    std::mt19937_64 rng(seed);
    for (const auto& layer : layers_) {
      he_normal(params_[layer.weight].value, layer.fan_in, rng);
    }
  }

  /// Adopts parameters by name; every expected tensor must be present with
  /// the expected shape.
  PuzzleModel(ArchConfig arch, const ParameterSet<T>& source) : arch_(std::move(arch)) {
    build();
    for (auto& p : params_) {
      const auto* src = source.find(p.name);
      if (src == nullptr) throw DataError("checkpoint is missing tensor " + p.name);
      if (src->value.shape() != p.value.shape()) {
        throw DataError("tensor " + p.name + " has shape " + shape_string(src->value.shape()) +
                        ", expected " + shape_string(p.value.shape()));
      }
      p.value = src->value;
      if (src->velocity.shape() == p.value.shape()) p.velocity = src->velocity;
    }
  }

  const ArchConfig& arch() const { return arch_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  std::size_t min_frames() const { return min_frames_; }

  void check_fragment(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != arch_.input_bins) {
      throw UsageError("fragment must be [frames, " + std::to_string(arch_.input_bins) +
                       "], got " + shape_string(x.shape()));
    }
    if (x.dim(0) < min_frames_) {
      throw DataError("fragment of " + std::to_string(x.dim(0)) + " frames is shorter than the " +
                      std::to_string(min_frames_) + "-frame minimum");
    }
  }

  /// Trunk feature map of one fragment: [(T - 9), k] for the default arch.
  Tensor<T> encode(const Tensor<T>& x) const {
    check_fragment(x);
    std::vector<Tensor<T>> acts;
    run_trunk(x, acts);
    return std::move(acts.back());
  }

  Trace forward(const Tensor<T>& a, const Tensor<T>& b) const {
    check_fragment(a);
    check_fragment(b);
    Trace tr;
    run_trunk(a, tr.trunk_a);
    run_trunk(b, tr.trunk_b);
    if (arch_.kind == ModelKind::sen) {
      forward_sen_head(tr);
    } else {
      forward_sn_head(tr);
    }
    Tensor<T> h = tr.pooled;
    for (std::size_t i = 0; i < arch_.dense_units.size(); ++i) {
      const auto& L = layers_[dense_first_ + i];
      h = nn::relu(nn::dense_forward(h, params_[L.weight].value, params_[L.bias].value));
      tr.dense_act.push_back(h);
    }
    const auto& out = layers_.back();
    tr.logits = nn::dense_forward(h, params_[out.weight].value, params_[out.bias].value);
    return tr;
  }

  /// P(consecutive and in order) for the pair (a, b).
  T probability(const Tensor<T>& a, const Tensor<T>& b) const {
    return nn::softmax(forward(a, b).logits)[1];
  }

  /// Activations of the last hidden dense layer.
  Tensor<T> embedding(const Tensor<T>& a, const Tensor<T>& b) const {
    return forward(a, b).dense_act.back();
  }

  /// Cross-entropy loss of one labeled pair; adds d loss / d params into
  /// `grads` scaled by `scale`.
  T loss_and_gradient(const Tensor<T>& a, const Tensor<T>& b, std::size_t label,
                      Gradients<T>& grads, T scale = T{1}) const {
    const Trace tr = forward(a, b);
    const auto xent = nn::softmax_xent(tr.logits, label);
    Tensor<T> g = xent.grad;
    for (auto& v : g.storage()) v *= scale;
    backward(tr, g, grads);
    return xent.loss;
  }

  T loss(const Tensor<T>& a, const Tensor<T>& b, std::size_t label) const {
    return nn::softmax_xent(forward(a, b).logits, label).loss;
  }

  void backward(const Trace& tr, const Tensor<T>& dlogits, Gradients<T>& grads) const {
    const auto& out = layers_.back();
    Tensor<T> dh = nn::dense_backward(tr.dense_act.empty() ? tr.pooled : tr.dense_act.back(),
                                      params_[out.weight].value, dlogits, grads[out.weight],
                                      grads[out.bias]);
    for (std::size_t i = arch_.dense_units.size(); i-- > 0;) {
      const auto& L = layers_[dense_first_ + i];
      nn::relu_backward_inplace(tr.dense_act[i], dh);
      const Tensor<T>& in = i == 0 ? tr.pooled : tr.dense_act[i - 1];
      dh = nn::dense_backward(in, params_[L.weight].value, dh, grads[L.weight], grads[L.bias]);
    }
    Tensor<T> dga, dgb;
    if (arch_.kind == ModelKind::sen) {
      backward_sen_head(tr, dh, grads, dga, dgb);
    } else {
      backward_sn_head(tr, dh, dga, dgb);
    }
    backward_trunk(tr.trunk_a, dga, grads);
    backward_trunk(tr.trunk_b, dgb, grads);
  }

  /// Fingerprint of every ReLU mask and pooling argmax in a trace.
  std::uint64_t activation_pattern(const Trace& tr) const {
    PatternHash h;
    for (std::size_t i = 1; i < tr.trunk_a.size(); ++i) h.mix_signs(tr.trunk_a[i]);
    for (std::size_t i = 1; i < tr.trunk_b.size(); ++i) h.mix_signs(tr.trunk_b[i]);
    for (const auto& a : tr.head_act) h.mix_signs(a);
    for (const auto& p : tr.head_pool) h.mix_indices(p.argmax);
    for (auto n : tr.sim.a_norm) h.mix(n < static_cast<T>(nn::kNormFloor));
    for (auto n : tr.sim.b_norm) h.mix(n < static_cast<T>(nn::kNormFloor));
    h.mix_indices(tr.pool.argmax);
    h.mix_indices(tr.pool_b.argmax);
    for (const auto& d : tr.dense_act) h.mix_signs(d);
    return h.value();
  }

  /// Data-dependent initialisation. Walking the hidden layers in forward
  /// order, each weight tensor is rescaled so its pre-activations over the
  /// sample pairs have unit spread across the whole layer, then each
  /// channel's bias is set to centre that channel. The output layer is zeroed, so training starts from the uniform
  /// prediction.
  void calibrate(const std::vector<std::pair<const Tensor<T>*, const Tensor<T>*>>& samples) {
    if (samples.empty()) throw UsageError("calibrate needs at least one sample pair");
    for (std::size_t li = 0; li + 1 < layers_.size(); ++li) {
      auto& w = params_[layers_[li].weight].value;
      auto& bias = params_[layers_[li].bias].value;
      const std::size_t channels = bias.size();
      // A large bias keeps the ReLU in its linear range, so the traced
      // activations minus the offset are the pre-activations.
      for (double offset = 1e3;; offset *= 10.0) {
        if (offset > 1e7) throw DivergenceError("calibrate: pre-activations out of range");
        bias.fill(static_cast<T>(offset));
        std::vector<double> mean(channels, 0.0);
        double sum = 0.0, sq = 0.0;
        std::size_t count = 0;
        bool clipped = false;
        for (const auto& [a, b] : samples) {
          const auto tr = forward(*a, *b);
          for (const auto* act : layer_outputs(tr, li)) {
            for (std::size_t i = 0; i < act->size(); ++i) {
              if ((*act)[i] <= T{0}) clipped = true;
              const double v = static_cast<double>((*act)[i]) - offset;
              mean[i % channels] += v;
              sum += v;
              sq += v * v;
              ++count;
            }
          }
        }
        if (clipped) continue;
        const double mu = sum / static_cast<double>(count);
        const double sd = std::sqrt(std::max(sq / static_cast<double>(count) - mu * mu, 1e-12));
        const double per_channel = static_cast<double>(count / channels);
        for (auto& x : w.storage()) x = static_cast<T>(x / sd);
        for (std::size_t c = 0; c < channels; ++c) {
          bias[c] = static_cast<T>(-mean[c] / per_channel / sd);
        }
        break;
      }
    }
    params_[layers_.back().weight].value.fill(T{0});
    params_[layers_.back().bias].value.fill(T{0});
  }

 private:
  struct Layer {
    std::size_t weight, bias, fan_in;
  };

  // Post-ReLU outputs of hidden layer li, channel-last.
  std::vector<const Tensor<T>*> layer_outputs(const Trace& tr, std::size_t li) const {
    if (li < head_first_) return {&tr.trunk_a[li + 1], &tr.trunk_b[li + 1]};
    if (li < dense_first_) return {&tr.head_act[li - head_first_]};
    return {&tr.dense_act[li - dense_first_]};
  }

  void add_layer(const std::string& name, Shape wshape, std::size_t fan_in) {
    const std::size_t out = wshape[0];
    const std::size_t w = params_.add(name + ".weight", std::move(wshape));
    const std::size_t b = params_.add(name + ".bias", {out});
    layers_.push_back({w, b, fan_in});
  }

  void build() {
    if (arch_.trunk_channels.empty()) throw UsageError("trunk needs at least one layer");
    if (arch_.trunk_filter == 0 || arch_.trunk_stride == 0) {
      throw UsageError("trunk filter and stride must be positive");
    }
    if (arch_.kind == ModelKind::sen && (arch_.head_channels.empty() || arch_.head_kernel == 0 ||
                                         arch_.head_pool == 0)) {
      throw UsageError("SEN head needs at least one conv layer");
    }
    std::size_t cin = arch_.input_bins;
    for (std::size_t i = 0; i < arch_.trunk_channels.size(); ++i) {
      const std::size_t cout = arch_.trunk_channels[i];
      add_layer("trunk.conv" + std::to_string(i), {cout, cin, arch_.trunk_filter},
                cin * arch_.trunk_filter);
      cin = cout;
    }
    std::size_t pooled = 0;
    head_first_ = layers_.size();  // equals dense_first_ for SN
    if (arch_.kind == ModelKind::sen) {
      std::size_t hc = 1;
      const std::size_t k = arch_.head_kernel;
      for (std::size_t i = 0; i < arch_.head_channels.size(); ++i) {
        const std::size_t cout = arch_.head_channels[i];
        add_layer("head.conv" + std::to_string(i), {cout, hc, k, k}, hc * k * k);
        hc = cout;
      }
      pooled = nn::pooled_size(arch_.pooling, hc);
    } else {
      pooled = 2 * nn::pooled_size(arch_.pooling, cin);
    }
    dense_first_ = layers_.size();
    std::size_t din = pooled;
    for (std::size_t i = 0; i < arch_.dense_units.size(); ++i) {
      add_layer("fc" + std::to_string(i), {arch_.dense_units[i], din}, din);
      din = arch_.dense_units[i];
    }
    add_layer("out", {2, din}, din);
    min_frames_ = min_fragment_frames(arch_);
  }

  void run_trunk(const Tensor<T>& x, std::vector<Tensor<T>>& acts) const {
    acts.clear();
    acts.push_back(x);
    for (std::size_t i = 0; i < arch_.trunk_channels.size(); ++i) {
      const auto& L = layers_[i];
      acts.push_back(nn::relu(nn::conv1d_forward(acts.back(), params_[L.weight].value,
                                                 params_[L.bias].value, arch_.trunk_stride)));
    }
  }

  void backward_trunk(const std::vector<Tensor<T>>& acts, Tensor<T> dy, Gradients<T>& grads) const {
    for (std::size_t i = arch_.trunk_channels.size(); i-- > 0;) {
      const auto& L = layers_[i];
      nn::relu_backward_inplace(acts[i + 1], dy);
      Tensor<T> dx;
      nn::conv1d_backward(acts[i], params_[L.weight].value, arch_.trunk_stride, dy,
                          i == 0 ? nullptr : &dx, grads[L.weight], grads[L.bias]);
      if (i > 0) dy = std::move(dx);
    }
  }

  void forward_sen_head(Trace& tr) const {
    tr.sim = nn::similarity_forward(tr.trunk_a.back(), tr.trunk_b.back(), arch_.similarity);
    Tensor<T> x = tr.sim.s;
    x.reshape({x.dim(0), x.dim(1), 1});
    for (std::size_t i = 0; i < arch_.head_channels.size(); ++i) {
      const auto& L = layers_[head_first_ + i];
      tr.head_in.push_back(x);
      tr.head_act.push_back(
          nn::relu(nn::conv2d_forward(x, params_[L.weight].value, params_[L.bias].value)));
      tr.head_pool.push_back(nn::maxpool2d_forward(tr.head_act.back(), arch_.head_pool));
      x = tr.head_pool.back().out;
    }
    tr.pool = nn::global_pool_forward(x, arch_.pooling);
    tr.pooled = tr.pool.out;
  }

  void backward_sen_head(const Trace& tr, const Tensor<T>& dpooled, Gradients<T>& grads,
                         Tensor<T>& dga, Tensor<T>& dgb) const {
    Tensor<T> dx = nn::global_pool_backward(tr.head_pool.back().out, tr.pool, arch_.pooling,
                                            dpooled);
    for (std::size_t i = arch_.head_channels.size(); i-- > 0;) {
      const auto& L = layers_[head_first_ + i];
      Tensor<T> dact = nn::maxpool2d_backward(tr.head_act[i].shape(), tr.head_pool[i].argmax, dx);
      nn::relu_backward_inplace(tr.head_act[i], dact);
      nn::conv2d_backward(tr.head_in[i], params_[L.weight].value, dact, &dx, grads[L.weight],
                          grads[L.bias]);
    }
    dx.reshape({dx.dim(0), dx.dim(1)});
    nn::similarity_backward(tr.trunk_a.back(), tr.trunk_b.back(), tr.sim, arch_.similarity, dx,
                            dga, dgb);
  }

  void forward_sn_head(Trace& tr) const {
    tr.pool = nn::global_pool_forward(tr.trunk_a.back(), arch_.pooling);
    tr.pool_b = nn::global_pool_forward(tr.trunk_b.back(), arch_.pooling);
    const std::size_t half = tr.pool.out.size();
    tr.pooled = Tensor<T>({2 * half});
    std::copy(tr.pool.out.storage().begin(), tr.pool.out.storage().end(), tr.pooled.ptr());
    std::copy(tr.pool_b.out.storage().begin(), tr.pool_b.out.storage().end(),
              tr.pooled.ptr() + half);
  }

  void backward_sn_head(const Trace& tr, const Tensor<T>& dpooled, Tensor<T>& dga,
                        Tensor<T>& dgb) const {
    const std::size_t half = tr.pool.out.size();
    Tensor<T> da({half}), db({half});
    std::copy(dpooled.ptr(), dpooled.ptr() + half, da.ptr());
    std::copy(dpooled.ptr() + half, dpooled.ptr() + 2 * half, db.ptr());
    dga = nn::global_pool_backward(tr.trunk_a.back(), tr.pool, arch_.pooling, da);
    dgb = nn::global_pool_backward(tr.trunk_b.back(), tr.pool_b, arch_.pooling, db);
  }

  ArchConfig arch_;
  ParameterSet<T> params_;
  std::vector<Layer> layers_;
  std::size_t head_first_ = 0;
  std::size_t dense_first_ = 0;
  std::size_t min_frames_ = kMinFragmentFrames;
};

}  // namespace puzzle
