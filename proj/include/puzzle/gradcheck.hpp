#pragma once

// Central finite-difference verification of backpropagated gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "puzzle/tensor.hpp"

namespace puzzle {

/// Loss value plus a fingerprint of every piecewise-linear decision (ReLU
/// masks, pooling argmaxes) taken while computing it. Probes whose two
/// perturbed evaluations disagree on the fingerprint straddle a kink.
struct ProbeValue {
  double loss = 0.0;
  std::uint64_t pattern = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t skipped_kinks = 0;
};

/// Relative error with a 1e-6 floor on the magnitude scale.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Probes random coordinates of the given tensors. `analytic[i]` holds the
/// backprop gradient for `*inputs[i]`; `evaluate` recomputes the loss at the
/// current (perturbed) values.
inline GradCheckResult grad_check(const std::vector<Tensor<double>*>& inputs,
                                  const std::vector<Tensor<double>>& analytic,
                                  const std::function<ProbeValue()>& evaluate,
                                  std::size_t probes = 100, double epsilon = 1e-5,
                                  std::uint64_t seed = 7) {
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto* t : inputs) {
    offsets.push_back(total);
    total += t->size();
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  GradCheckResult result;
  std::size_t attempts = 0;
  while (result.probes < probes && attempts < probes * 20) {
    ++attempts;
    const std::size_t flat = pick(rng);
    const std::size_t which = static_cast<std::size_t>(
        std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
    const std::size_t idx = flat - offsets[which];
    double& x = (*inputs[which])[idx];
    const double saved = x;
    x = saved + epsilon;
    const ProbeValue plus = evaluate();
    x = saved - epsilon;
    const ProbeValue minus = evaluate();
    x = saved;
    if (plus.pattern != minus.pattern) {
      ++result.skipped_kinks;
      continue;
    }
    const double numeric = (plus.loss - minus.loss) / (2.0 * epsilon);
    result.max_rel_error =
        std::max(result.max_rel_error, relative_error(analytic[which][idx], numeric));
    ++result.probes;
  }
  return result;
}

/// FNV-1a style mixing for activation fingerprints.
class PatternHash {
 public:
  void mix(std::uint64_t v) {
    h_ ^= v + 0x9e3779b97f4a7c15ULL + (h_ << 6) + (h_ >> 2);
  }
  template <typename T>
  void mix_signs(const Tensor<T>& t) {
    std::uint64_t word = 0;
    std::size_t bit = 0;
    for (const auto v : t.storage()) {
      word = (word << 1) | (v > T{0} ? 1u : 0u);
      if (++bit == 64) {
        mix(word);
        word = 0;
        bit = 0;
      }
    }
    mix(word);
  }
  void mix_indices(const std::vector<std::size_t>& idx) {
    for (auto i : idx) mix(i);
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 1469598103934665603ULL;
};

}  // namespace puzzle
