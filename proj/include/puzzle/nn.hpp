#pragma once

// Layer kernels with explicit forward and backward passes. Every backward
// accumulates parameter gradients (+=) so branches that share weights can
// call it once per branch.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "puzzle/error.hpp"
#include "puzzle/tensor.hpp"

namespace puzzle::nn {

enum class PoolingMode { concat, mean, max };
enum class SimilarityKernel { cosine, inner_product };

inline constexpr double kNormFloor = 1e-8;

namespace detail {

// Conv weights [Cout, Cin, P...] packed as a (P*Cin) x Cout matrix whose
// row p*Cin + c holds tap p of input channel c.
template <typename T>
RowMatrix<T> pack_weights(const Tensor<T>& w) {
  const std::size_t cout = w.dim(0);
  const std::size_t cin = w.dim(1);
  const std::size_t taps = w.size() / (cout * cin);
  RowMatrix<T> packed(static_cast<Eigen::Index>(taps * cin), static_cast<Eigen::Index>(cout));
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t c = 0; c < cin; ++c) {
      const T* src = w.ptr() + (o * cin + c) * taps;
      for (std::size_t p = 0; p < taps; ++p) {
        packed(static_cast<Eigen::Index>(p * cin + c), static_cast<Eigen::Index>(o)) = src[p];
      }
    }
  }
  return packed;
}

template <typename T>
void unpack_add(const RowMatrix<T>& packed, Tensor<T>& dw) {
  const std::size_t cout = dw.dim(0);
  const std::size_t cin = dw.dim(1);
  const std::size_t taps = dw.size() / (cout * cin);
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t c = 0; c < cin; ++c) {
      T* dst = dw.ptr() + (o * cin + c) * taps;
      for (std::size_t p = 0; p < taps; ++p) {
        dst[p] += packed(static_cast<Eigen::Index>(p * cin + c), static_cast<Eigen::Index>(o));
      }
    }
  }
}

template <typename T>
Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> row_vector(const Tensor<T>& t) {
  return Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(t.ptr(),
                                                                static_cast<Eigen::Index>(t.size()));
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

}  // namespace detail

inline std::size_t conv_output_length(std::size_t length, std::size_t taps, std::size_t stride) {
  if (length < taps) return 0;
  return (length - taps) / stride + 1;
}

inline std::size_t pool_output_length(std::size_t length, std::size_t window) {
  return (length + window - 1) / window;
}

// ---------------------------------------------------------------------------
// conv1d: x [T, Cin], w [Cout, Cin, L], b [Cout] -> y [(T-L)/stride+1, Cout]

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         std::size_t stride) {
  detail::require(x.rank() == 2 && w.rank() == 3 && w.dim(1) == x.dim(1),
                  "conv1d: expected x [T,Cin] and w [Cout,Cin,L]");
  detail::require(stride > 0, "conv1d: stride must be positive");
  const std::size_t len = x.dim(0), cin = x.dim(1), cout = w.dim(0), taps = w.dim(2);
  if (len < taps) {
    throw UsageError("conv1d: input length " + std::to_string(len) + " shorter than filter " +
                     std::to_string(taps));
  }
  const std::size_t out_len = conv_output_length(len, taps, stride);
  const auto packed = detail::pack_weights(w);
  // Window t of the input is one contiguous run of taps*cin values.
  Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> windows(
      x.ptr(), static_cast<Eigen::Index>(out_len), static_cast<Eigen::Index>(taps * cin),
      Eigen::OuterStride<>(static_cast<Eigen::Index>(stride * cin)));
  Tensor<T> y({out_len, cout});
  auto ym = as_matrix(y, out_len, cout);
  ym.noalias() = windows * packed;
  ym.rowwise() += detail::row_vector(b);
  return y;
}

/// dx may be null when the input gradient is not needed.
template <typename T>
void conv1d_backward(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>& dw, Tensor<T>& db) {
  const std::size_t cin = x.dim(1), cout = w.dim(0), taps = w.dim(2);
  const std::size_t out_len = dy.dim(0);
  Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> windows(
      x.ptr(), static_cast<Eigen::Index>(out_len), static_cast<Eigen::Index>(taps * cin),
      Eigen::OuterStride<>(static_cast<Eigen::Index>(stride * cin)));
  const auto dym = as_matrix(dy, out_len, cout);
  RowMatrix<T> dpacked = windows.transpose() * dym;
  detail::unpack_add(dpacked, dw);
  as_matrix(db, 1, cout) += dym.colwise().sum();
  if (dx != nullptr) {
    const auto packed = detail::pack_weights(w);
    RowMatrix<T> dwindows = dym * packed.transpose();
    *dx = Tensor<T>(x.shape());
    const std::size_t span = taps * cin;
    for (std::size_t t = 0; t < out_len; ++t) {
      T* dst = dx->ptr() + t * stride * cin;
      const T* src = dwindows.data() + t * span;
      for (std::size_t j = 0; j < span; ++j) dst[j] += src[j];
    }
  }
}

// ---------------------------------------------------------------------------
// conv2d (stride 1, valid): x [H, W, Cin], w [Cout, Cin, K, K], b [Cout]
// -> y [H-K+1, W-K+1, Cout]
//
// Computed as one small GEMM per (output row, tap): the input row segment
// feeding output row i through tap (kh, kw) is a contiguous [Wo, Cin] block.

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require(x.rank() == 3 && w.rank() == 4 && w.dim(1) == x.dim(2) && w.dim(2) == w.dim(3),
                  "conv2d: expected x [H,W,Cin] and w [Cout,Cin,K,K]");
  const std::size_t k = w.dim(2), cout = w.dim(0);
  if (x.dim(0) < k || x.dim(1) < k) {
    throw UsageError("conv2d: input " + shape_string(x.shape()) + " smaller than kernel");
  }
  const std::size_t width = x.dim(1), cin = x.dim(2);
  const std::size_t ho = x.dim(0) - k + 1, wo = width - k + 1;
  const auto packed = detail::pack_weights(w);
  Tensor<T> y({ho, wo, cout});
  auto ym = as_matrix(y, ho * wo, cout);
  ym.rowwise() = detail::row_vector(b);
  if (cin == 1) {
    // Single input plane: one whole-plane axpy per (output channel, tap),
    // computed channel-planar and transposed back to [H, W, C].
    ConstMatrixMap<T> plane(x.ptr(), static_cast<Eigen::Index>(x.dim(0)),
                            static_cast<Eigen::Index>(width));
    RowMatrix<T> planar(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(ho * wo));
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t o = 0; o < cout; ++o) {
        T* __restrict out = planar.data() + o * ho * wo + i * wo;
        for (std::size_t j = 0; j < wo; ++j) out[j] = b[o];
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const T* __restrict src = x.ptr() + (i + kh) * width + kw;
            const T wv = w[(o * k + kh) * k + kw];
            for (std::size_t j = 0; j < wo; ++j) out[j] += wv * src[j];
          }
        }
      }
    }
    ym = planar.transpose();
    return y;
  }
  for (std::size_t i = 0; i < ho; ++i) {
    auto yrow = as_matrix(y, ho * wo, cout).middleRows(static_cast<Eigen::Index>(i * wo),
                                                       static_cast<Eigen::Index>(wo));
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        ConstMatrixMap<T> seg(x.ptr() + ((i + kh) * width + kw) * cin,
                              static_cast<Eigen::Index>(wo), static_cast<Eigen::Index>(cin));
        yrow.noalias() += seg * packed.middleRows(static_cast<Eigen::Index>((kh * k + kw) * cin),
                                                  static_cast<Eigen::Index>(cin));
      }
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dw, Tensor<T>& db) {
  const std::size_t k = w.dim(2), cout = w.dim(0);
  const std::size_t width = x.dim(1), cin = x.dim(2);
  const std::size_t ho = dy.dim(0), wo = dy.dim(1);
  const auto dym = as_matrix(dy, ho * wo, cout);
  as_matrix(db, 1, cout) += dym.colwise().sum();
  const auto packed = detail::pack_weights(w);
  RowMatrix<T> dpacked = RowMatrix<T>::Zero(packed.rows(), packed.cols());
  if (dx != nullptr) *dx = Tensor<T>(x.shape());
  if (cin == 1) {
    ConstMatrixMap<T> plane(x.ptr(), static_cast<Eigen::Index>(x.dim(0)),
                            static_cast<Eigen::Index>(width));
    const RowMatrix<T> planar = dym.transpose();
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t o = 0; o < cout; ++o) {
        const T* __restrict g = planar.data() + o * ho * wo + i * wo;
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const std::size_t widx = (o * k + kh) * k + kw;
            const T* __restrict src = x.ptr() + (i + kh) * width + kw;
            using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
            dw[widx] += Eigen::Map<const Vec>(src, static_cast<Eigen::Index>(wo))
                            .dot(Eigen::Map<const Vec>(g, static_cast<Eigen::Index>(wo)));
            if (dx != nullptr) {
              T* __restrict dsrc = dx->ptr() + (i + kh) * width + kw;
              const T wv = w[widx];
              for (std::size_t j = 0; j < wo; ++j) dsrc[j] += wv * g[j];
            }
          }
        }
      }
    }
    return;
  }
  for (std::size_t i = 0; i < ho; ++i) {
    const auto dyrow = dym.middleRows(static_cast<Eigen::Index>(i * wo),
                                      static_cast<Eigen::Index>(wo));
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        const std::size_t offset = ((i + kh) * width + kw) * cin;
        const auto tap = static_cast<Eigen::Index>((kh * k + kw) * cin);
        ConstMatrixMap<T> seg(x.ptr() + offset, static_cast<Eigen::Index>(wo),
                              static_cast<Eigen::Index>(cin));
        dpacked.middleRows(tap, static_cast<Eigen::Index>(cin)).noalias() +=
            seg.transpose() * dyrow;
        if (dx != nullptr) {
          MatrixMap<T> dseg(dx->ptr() + offset, static_cast<Eigen::Index>(wo),
                            static_cast<Eigen::Index>(cin));
          dseg.noalias() +=
              dyrow * packed.middleRows(tap, static_cast<Eigen::Index>(cin)).transpose();
        }
      }
    }
  }
  detail::unpack_add(dpacked, dw);
}

// ---------------------------------------------------------------------------
// relu

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.storage()) v = v > T{0} ? v : T{0};
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  relu_inplace(x);
  return x;
}

/// Gradient through relu given its output; the kink at 0 passes nothing.
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > T{0})) dy[i] = T{0};
  }
}

// ---------------------------------------------------------------------------
// maxpool2d, window == stride. A trailing partial window is kept (ceil
// mode), so any extent >= 1 pools to ceil(extent / window).

template <typename T>
struct MaxPoolResult {
  Tensor<T> out;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
MaxPoolResult<T> maxpool2d_forward(const Tensor<T>& x, std::size_t window) {
  detail::require(x.rank() == 3 && window > 0, "maxpool2d: expected x [H,W,C]");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const std::size_t ho = pool_output_length(h, window), wo = pool_output_length(w, window);
  MaxPoolResult<T> r{Tensor<T>({ho, wo, c}), std::vector<std::size_t>(ho * wo * c)};
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      T* best_v = r.out.ptr() + (i * wo + j) * c;
      std::size_t* best = r.argmax.data() + (i * wo + j) * c;
      const std::size_t first = (i * window * w + j * window) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        best_v[ch] = x[first + ch];
        best[ch] = first + ch;
      }
      // Row-major scan with strict '>' keeps the lowest linear index on ties.
      for (std::size_t di = 0; di < window && i * window + di < h; ++di) {
        for (std::size_t dj = 0; dj < window && j * window + dj < w; ++dj) {
          const std::size_t base = ((i * window + di) * w + (j * window + dj)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) {
            if (x[base + ch] > best_v[ch]) {
              best_v[ch] = x[base + ch];
              best[ch] = base + ch;
            }
          }
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                             const Tensor<T>& dy) {
  Tensor<T> dx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Global pooling over positions: x [P, C] (any spatial layout flattened).
// concat -> [mean(C), max(C), std(C)], population std.

inline std::size_t pooled_size(PoolingMode mode, std::size_t channels) {
  return mode == PoolingMode::concat ? 3 * channels : channels;
}

template <typename T>
struct GlobalPoolResult {
  Tensor<T> out;
  std::vector<T> mean;
  std::vector<T> std;
  std::vector<std::size_t> argmax;  // position index per channel
};

template <typename T>
GlobalPoolResult<T> global_pool_forward(const Tensor<T>& x, PoolingMode mode) {
  const std::size_t c = x.dim(x.rank() - 1);
  const std::size_t positions = x.size() / c;
  detail::require(positions > 0, "global_pool: no positions");
  GlobalPoolResult<T> r{Tensor<T>({pooled_size(mode, c)}), std::vector<T>(c, T{0}),
                        std::vector<T>(c, T{0}), std::vector<std::size_t>(c, 0)};
  std::vector<T> mx(c, -std::numeric_limits<T>::infinity());
  for (std::size_t p = 0; p < positions; ++p) {
    const T* row = x.ptr() + p * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      r.mean[ch] += row[ch];
      if (row[ch] > mx[ch]) {
        mx[ch] = row[ch];
        r.argmax[ch] = p;
      }
    }
  }
  for (auto& m : r.mean) m /= static_cast<T>(positions);
  std::vector<T> var(c, T{0});
  for (std::size_t p = 0; p < positions; ++p) {
    const T* row = x.ptr() + p * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T d = row[ch] - r.mean[ch];
      var[ch] += d * d;
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) r.std[ch] = std::sqrt(var[ch] / static_cast<T>(positions));

  switch (mode) {
    case PoolingMode::concat:
      for (std::size_t ch = 0; ch < c; ++ch) {
        r.out[ch] = r.mean[ch];
        r.out[c + ch] = mx[ch];
        r.out[2 * c + ch] = r.std[ch];
      }
      break;
    case PoolingMode::mean:
      for (std::size_t ch = 0; ch < c; ++ch) r.out[ch] = r.mean[ch];
      break;
    case PoolingMode::max:
      for (std::size_t ch = 0; ch < c; ++ch) r.out[ch] = mx[ch];
      break;
  }
  return r;
}

/// Zero-variance channels receive no gradient through the std term.
template <typename T>
Tensor<T> global_pool_backward(const Tensor<T>& x, const GlobalPoolResult<T>& fwd,
                               PoolingMode mode, const Tensor<T>& dy) {
  const std::size_t c = x.dim(x.rank() - 1);
  const std::size_t positions = x.size() / c;
  Tensor<T> dx(x.shape());
  const T inv_p = T{1} / static_cast<T>(positions);
  const bool has_mean = mode != PoolingMode::max;
  const bool has_max = mode != PoolingMode::mean;
  const bool has_std = mode == PoolingMode::concat;
  const std::size_t max_off = mode == PoolingMode::concat ? c : 0;
  for (std::size_t p = 0; p < positions; ++p) {
    const T* row = x.ptr() + p * c;
    T* drow = dx.ptr() + p * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      T g = T{0};
      if (has_mean) g += dy[ch] * inv_p;
      if (has_std && fwd.std[ch] > T{0}) {
        g += dy[2 * c + ch] * (row[ch] - fwd.mean[ch]) * inv_p / fwd.std[ch];
      }
      drow[ch] = g;
    }
  }
  if (has_max) {
    for (std::size_t ch = 0; ch < c; ++ch) dx[fwd.argmax[ch] * c + ch] += dy[max_off + ch];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// dense: x [D], w [Dout, D], b [Dout]

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const std::size_t dout = w.dim(0), din = w.dim(1);
  detail::require(x.size() == din, "dense: input size " + std::to_string(x.size()) +
                                       " does not match weights " + shape_string(w.shape()));
  Tensor<T> y({dout});
  auto ym = as_matrix(y, dout, 1);
  ym.noalias() = as_matrix(w, dout, din) * as_matrix(x, din, 1);
  ym += as_matrix(b, dout, 1);
  return y;
}

template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                         Tensor<T>& dw, Tensor<T>& db) {
  const std::size_t dout = w.dim(0), din = w.dim(1);
  const auto dym = as_matrix(dy, dout, 1);
  as_matrix(dw, dout, din).noalias() += dym * as_matrix(x, 1, din);
  as_matrix(db, dout, 1) += dym;
  Tensor<T> dx({din});
  as_matrix(dx, din, 1).noalias() = as_matrix(w, dout, din).transpose() * dym;
  return dx;
}

// ---------------------------------------------------------------------------
// softmax cross-entropy

template <typename T>
struct SoftmaxXent {
  T loss;
  std::vector<T> probs;
  Tensor<T> grad;  // d loss / d logits = probs - one_hot(label)
};

template <typename T>
std::vector<T> softmax(const Tensor<T>& logits) {
  const T mx = *std::max_element(logits.storage().begin(), logits.storage().end());
  std::vector<T> p(logits.size());
  T sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <typename T>
SoftmaxXent<T> softmax_xent(const Tensor<T>& logits, std::size_t label) {
  detail::require(label < logits.size(), "softmax_xent: label out of range");
  const auto top = static_cast<std::size_t>(
      std::max_element(logits.storage().begin(), logits.storage().end()) - logits.storage().begin());
  const T mx = logits[top];
  // log Z - z_label as (mx - z_label) + log1p(rest): no cancellation when
  // the label dominates.
  T rest = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != top) rest += std::exp(logits[i] - mx);
  }
  SoftmaxXent<T> r{(mx - logits[label]) + std::log1p(rest), softmax(logits), Tensor<T>({logits.size()})};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.grad[i] = r.probs[i] - (i == label ? T{1} : T{0});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Frame-by-frame similarity between two feature maps: a [N, k], b [M, k]
// -> S [N, M]. Cosine rows with norm below kNormFloor contribute zeros.

template <typename T>
struct SimilarityResult {
  Tensor<T> s;
  RowMatrix<T> a_unit, b_unit;
  std::vector<T> a_norm, b_norm;
};

namespace detail {

template <typename T>
void normalize_rows(const Tensor<T>& g, RowMatrix<T>& unit, std::vector<T>& norms) {
  const std::size_t n = g.dim(0), k = g.dim(1);
  unit = as_matrix(g, n, k);
  norms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    const T nrm = unit.row(idx).norm();
    norms[i] = nrm;
    if (nrm < static_cast<T>(kNormFloor)) {
      unit.row(idx).setZero();
    } else {
      unit.row(idx) /= nrm;
    }
  }
}

}  // namespace detail

template <typename T>
SimilarityResult<T> similarity_forward(const Tensor<T>& a, const Tensor<T>& b,
                                       SimilarityKernel kernel) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1) && a.dim(0) > 0 &&
                      b.dim(0) > 0,
                  "similarity: expected a [N,k] and b [M,k]");
  SimilarityResult<T> r;
  const std::size_t n = a.dim(0), m = b.dim(0), k = a.dim(1);
  if (kernel == SimilarityKernel::cosine) {
    detail::normalize_rows(a, r.a_unit, r.a_norm);
    detail::normalize_rows(b, r.b_unit, r.b_norm);
    r.s = Tensor<T>({n, m});
    as_matrix(r.s, n, m).noalias() = r.a_unit * r.b_unit.transpose();
  } else {
    r.s = Tensor<T>({n, m});
    as_matrix(r.s, n, m).noalias() = as_matrix(a, n, k) * as_matrix(b, m, k).transpose();
  }
  return r;
}

template <typename T>
void similarity_backward(const Tensor<T>& a, const Tensor<T>& b, const SimilarityResult<T>& fwd,
                         SimilarityKernel kernel, const Tensor<T>& ds, Tensor<T>& da,
                         Tensor<T>& db) {
  const std::size_t n = a.dim(0), m = b.dim(0), k = a.dim(1);
  const auto dsm = as_matrix(ds, n, m);
  da = Tensor<T>(a.shape());
  db = Tensor<T>(b.shape());
  if (kernel == SimilarityKernel::inner_product) {
    as_matrix(da, n, k).noalias() = dsm * as_matrix(b, m, k);
    as_matrix(db, m, k).noalias() = dsm.transpose() * as_matrix(a, n, k);
    return;
  }
  RowMatrix<T> da_unit = dsm * fwd.b_unit;
  RowMatrix<T> db_unit = dsm.transpose() * fwd.a_unit;
  // d(g/|g|) = (I - u u^T) / |g|
  auto project = [k](const RowMatrix<T>& unit, const RowMatrix<T>& du, const std::vector<T>& norms,
                     Tensor<T>& out) {
    auto om = as_matrix(out, norms.size(), k);
    for (std::size_t i = 0; i < norms.size(); ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      if (norms[i] < static_cast<T>(kNormFloor)) continue;
      const T dot = unit.row(idx).dot(du.row(idx));
      om.row(idx) = (du.row(idx) - dot * unit.row(idx)) / norms[i];
    }
  };
  project(fwd.a_unit, da_unit, fwd.a_norm, da);
  project(fwd.b_unit, db_unit, fwd.b_norm, db);
}

}  // namespace puzzle::nn
