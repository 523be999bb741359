#pragma once

// Global ordering from pairwise scores: fitness maximization over
// permutations, exhaustive or by subset dynamic programming.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "puzzle/error.hpp"

namespace puzzle {

inline constexpr std::size_t kBruteForceMax = 9;
inline constexpr std::size_t kHeldKarpMax = 24;

/// scores(a, b) is the model's belief that b directly follows a.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  explicit ScoreMatrix(std::size_t n) : n_(n), s_(n * n, 0.0) {
    if (n < 2) throw UsageError("score matrix needs n >= 2");
  }
  ScoreMatrix(std::size_t n, std::vector<double> values) : n_(n), s_(std::move(values)) {
    if (n < 2) throw UsageError("score matrix needs n >= 2");
    if (s_.size() != n * n) throw UsageError("score matrix needs n*n values");
  }

  std::size_t n() const { return n_; }
  double operator()(std::size_t a, std::size_t b) const { return s_[a * n_ + b]; }
  double& operator()(std::size_t a, std::size_t b) { return s_[a * n_ + b]; }
  bool operator==(const ScoreMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> s_;
};

/// Fills every off-diagonal slot with one call to score(a, b).
inline ScoreMatrix score_all_pairs(std::size_t n,
                                   const std::function<double(std::size_t, std::size_t)>& score) {
  ScoreMatrix m(n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a != b) m(a, b) = score(a, b);
    }
  }
  return m;
}

struct Ordering {
  std::vector<std::size_t> perm;
  double fitness = 0.0;
};

inline void check_permutation(const std::vector<std::size_t>& perm, std::size_t n) {
  if (perm.size() != n) {
    throw UsageError("permutation has " + std::to_string(perm.size()) + " entries, expected " +
                     std::to_string(n));
  }
  std::vector<bool> seen(n, false);
  for (auto p : perm) {
    if (p >= n || seen[p]) throw UsageError("not a permutation of 0.." + std::to_string(n - 1));
    seen[p] = true;
  }
}

inline double fitness(const std::vector<std::size_t>& perm, const ScoreMatrix& scores) {
  check_permutation(perm, scores.n());
  double f = 0.0;
  for (std::size_t i = 0; i + 1 < perm.size(); ++i) f += scores(perm[i], perm[i + 1]);
  return f;
}

/// Exhaustive search; among equal fitness the lexicographically smallest
/// permutation wins.
inline Ordering solve_bruteforce(const ScoreMatrix& scores) {
  const std::size_t n = scores.n();
  if (n > kBruteForceMax) {
    throw UsageError("brute force limited to n <= " + std::to_string(kBruteForceMax));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Ordering best{perm, fitness(perm, scores)};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double f = fitness(perm, scores);
    if (f > best.fitness) best = {perm, f};
  }
  return best;
}

/// Best open Hamiltonian path by DP over vertex subsets. dp[S][j] holds the
/// best path through S ending at j, summed front to back so the optimum is
/// bit-identical to fitness() of the recovered permutation.
inline Ordering solve_heldkarp(const ScoreMatrix& scores) {
  const std::size_t n = scores.n();
  if (n > kHeldKarpMax) {
    throw UsageError("Held-Karp limited to n <= " + std::to_string(kHeldKarpMax));
  }
  const std::size_t full = (std::size_t{1} << n) - 1;
  constexpr double kUnset = -std::numeric_limits<double>::infinity();
  std::vector<double> dp((full + 1) * n, kUnset);
  auto at = [&](std::size_t set, std::size_t j) -> double& { return dp[set * n + j]; };
  for (std::size_t j = 0; j < n; ++j) at(std::size_t{1} << j, j) = 0.0;
  for (std::size_t set = 1; set <= full; ++set) {
    for (std::size_t j = 0; j < n; ++j) {
      const double base = at(set, j);
      if (!(set >> j & 1) || base == kUnset) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (set >> k & 1) continue;
        double& next = at(set | std::size_t{1} << k, k);
        next = std::max(next, base + scores(j, k));
      }
    }
  }
  std::size_t last = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (at(full, j) > at(full, last)) last = j;
  }
  std::vector<std::size_t> perm(n);
  std::size_t set = full;
  for (std::size_t pos = n; pos-- > 0;) {
    perm[pos] = last;
    if (pos == 0) break;
    const std::size_t rest = set & ~(std::size_t{1} << last);
    std::size_t prev = n;
    for (std::size_t i = 0; i < n; ++i) {
      if ((rest >> i & 1) && at(rest, i) != kUnset && at(rest, i) + scores(i, last) == at(set, last)) {
        prev = i;
        break;
      }
    }
    set = rest;
    last = prev;
  }
  return {perm, fitness(perm, scores)};
}

/// Fraction of predicted adjacent pairs that are adjacent and in order in
/// the reference.
inline double pairwise_accuracy(const std::vector<std::size_t>& pred,
                                const std::vector<std::size_t>& truth) {
  if (pred.size() != truth.size()) throw UsageError("PA: orderings differ in length");
  check_permutation(truth, truth.size());
  check_permutation(pred, truth.size());
  if (pred.size() < 2) throw UsageError("PA: need at least two items");
  std::vector<std::size_t> pos(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) pos[truth[i]] = i;
  std::size_t correct = 0;
  for (std::size_t i = 0; i + 1 < pred.size(); ++i) {
    if (pos[pred[i + 1]] == pos[pred[i]] + 1) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.size() - 1);
}

inline double global_accuracy(const std::vector<std::size_t>& pred,
                              const std::vector<std::size_t>& truth) {
  if (pred.size() != truth.size()) throw UsageError("GA: orderings differ in length");
  return pred == truth ? 1.0 : 0.0;
}

inline std::vector<std::size_t> identity_order(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

inline void write_score_csv(std::ostream& out, const ScoreMatrix& m) {
  out.precision(17);
  for (std::size_t a = 0; a < m.n(); ++a) {
    for (std::size_t b = 0; b < m.n(); ++b) {
      if (b) out << ',';
      if (a == b) {
        out << "NA";
      } else {
        out << m(a, b);
      }
    }
    out << '\n';
  }
}

inline nlohmann::json ordering_json(const Ordering& o, const std::vector<std::size_t>* truth) {
  nlohmann::json j{{"perm", o.perm}, {"fitness", o.fitness}};
  if (truth) {
    j["pa"] = pairwise_accuracy(o.perm, *truth);
    j["ga"] = global_accuracy(o.perm, *truth);
  }
  return j;
}

}  // namespace puzzle
