#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "puzzle/error.hpp"
#include "puzzle/tensor.hpp"

namespace puzzle {

/// A trainable tensor with its momentum buffer (same shape, starts at zero).
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> velocity;
};

template <typename T>
using Gradients = std::vector<Tensor<T>>;

template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Shape shape) {
    params_.push_back({std::move(name), Tensor<T>(shape), Tensor<T>(shape)});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }
  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Gradients<T> zero_gradients() const {
    Gradients<T> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.value.shape());
    return g;
  }

  void reset_velocity() {
    for (auto& p : params_) p.velocity.fill(T{0});
  }

 private:
  std::vector<Parameter<T>> params_;
};

/// Zero-mean Gaussian with variance 2 / fan_in.
template <typename T>
void he_normal(Tensor<T>& w, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.storage()) v = static_cast<T>(dist(rng));
}

template <typename T>
void accumulate(Gradients<T>& into, const Gradients<T>& from, T scale = T{1}) {
  if (into.size() != from.size()) throw UsageError("gradient set size mismatch");
  for (std::size_t i = 0; i < into.size(); ++i) {
    if (into[i].shape() != from[i].shape()) throw UsageError("gradient shape mismatch");
    auto* dst = into[i].ptr();
    const auto* src = from[i].ptr();
    for (std::size_t j = 0; j < into[i].size(); ++j) dst[j] += scale * src[j];
  }
}

/// v <- momentum*v - lr*(g + weight_decay*w);  w <- w + v
template <typename T>
void sgd_momentum_step(ParameterSet<T>& params, const Gradients<T>& grads, double lr,
                       double momentum = 0.9, double weight_decay = 0.0) {
  if (grads.size() != params.size()) throw UsageError("sgd: gradient count mismatch");
  const T mu = static_cast<T>(momentum), eta = static_cast<T>(lr),
          decay = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (grads[i].shape() != p.value.shape()) {
      throw UsageError("sgd: gradient shape " + shape_string(grads[i].shape()) +
                       " does not match parameter " + p.name + " " +
                       shape_string(p.value.shape()));
    }
    T* w = p.value.ptr();
    T* v = p.velocity.ptr();
    const T* g = grads[i].ptr();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      v[j] = mu * v[j] - eta * (g[j] + decay * w[j]);
      w[j] += v[j];
    }
  }
}

}  // namespace puzzle
