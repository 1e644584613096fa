// Copyright 2026 The HMAN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hman/tape.hpp"

// Differentiable operations recorded on a Tape. Reductions accumulate in
// double regardless of the tensor precision.
namespace hman {

namespace detail {

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(concat(what, ": expected rank ", rank, ", got ",
                                shape_str(s)));
  }
}

}  // namespace detail

// y = x W + b for x[B x n], W[n x m], b[m].
template <typename Real>
Var linear(Tape<Real>& tape, Var x, Var w, Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const auto& bv = tape.value(b);
  detail::require_rank(xv.shape(), 2, "linear input");
  detail::require_rank(wv.shape(), 2, "linear weight");
  detail::require_rank(bv.shape(), 1, "linear bias");
  const std::size_t rows = xv.dim(0), n = xv.dim(1), m = wv.dim(1);
  if (wv.dim(0) != n || bv.dim(0) != m) {
    throw DimensionError(detail::concat("linear: input ", shape_str(xv.shape()),
                                        " weight ", shape_str(wv.shape()),
                                        " bias ", shape_str(bv.shape())));
  }
  Tensor<Real> y(Shape{rows, m});
  std::vector<double> acc(m);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) acc[j] = bv[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = xv[r * n + i];
      if (xi == 0.0) continue;
      const Real* wrow = &wv[i * m];
      for (std::size_t j = 0; j < m; ++j) acc[j] += xi * wrow[j];
    }
    for (std::size_t j = 0; j < m; ++j) y[r * m + j] = static_cast<Real>(acc[j]);
  }
  return tape.record(std::move(y), [x, w, b, rows, n, m](Tape<Real>& t,
                                                         std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    const Tensor<Real>& xv = t.value(x);
    const Tensor<Real>& wv = t.value(w);
    {
      auto& dx = t.grad_buffer(x);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            s += static_cast<double>(dy[r * m + j]) * wv[i * m + j];
          }
          dx[r * n + i] += static_cast<Real>(s);
        }
      }
    }
    {
      auto& dw = t.grad_buffer(w);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          double s = 0.0;
          for (std::size_t r = 0; r < rows; ++r) {
            s += static_cast<double>(xv[r * n + i]) * dy[r * m + j];
          }
          dw[i * m + j] += static_cast<Real>(s);
        }
      }
    }
    {
      auto& db = t.grad_buffer(b);
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += dy[r * m + j];
        db[j] += static_cast<Real>(s);
      }
    }
  });
}

template <typename Real>
Var transpose(Tape<Real>& tape, Var x) {
  const auto& xv = tape.value(x);
  detail::require_rank(xv.shape(), 2, "transpose");
  const std::size_t r = xv.dim(0), c = xv.dim(1);
  Tensor<Real> y(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = xv[i * c + j];
  return tape.record(std::move(y), [x, r, c](Tape<Real>& t, std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    auto& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += dy[j * r + i];
  });
}

inline std::size_t conv_output_length(std::size_t length, std::size_t kernel,
                                      std::size_t stride) {
  if (kernel == 0 || stride == 0) {
    throw GeometryError("kernel and stride must be positive");
  }
  if (length < kernel) {
    throw GeometryError(detail::concat("temporal length ", length,
                                       " is shorter than kernel ", kernel));
  }
  return (length - kernel) / stride + 1;
}

// Valid (unpadded) cross-correlation over time. x[C_in x T],
// kernel[C_out x C_in x k], bias[C_out] -> [C_out x T'].
template <typename Real>
Var conv1d(Tape<Real>& tape, Var x, Var kernel, Var bias, std::size_t stride) {
  const auto& xv = tape.value(x);
  const auto& kv = tape.value(kernel);
  const auto& bv = tape.value(bias);
  detail::require_rank(xv.shape(), 2, "conv1d input");
  detail::require_rank(kv.shape(), 3, "conv1d kernel");
  detail::require_rank(bv.shape(), 1, "conv1d bias");
  const std::size_t cin = xv.dim(0), len = xv.dim(1);
  const std::size_t cout = kv.dim(0), k = kv.dim(2);
  if (kv.dim(1) != cin || bv.dim(0) != cout) {
    throw DimensionError(detail::concat("conv1d: input ", shape_str(xv.shape()),
                                        " kernel ", shape_str(kv.shape()),
                                        " bias ", shape_str(bv.shape())));
  }
  const std::size_t out_len = conv_output_length(len, k, stride);
  Tensor<Real> y(Shape{cout, out_len});
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t p = 0; p < out_len; ++p) {
      double s = bv[o];
      for (std::size_t c = 0; c < cin; ++c) {
        const Real* krow = &kv[(o * cin + c) * k];
        const Real* xrow = &xv[c * len + p * stride];
        for (std::size_t j = 0; j < k; ++j) s += static_cast<double>(krow[j]) * xrow[j];
      }
      y[o * out_len + p] = static_cast<Real>(s);
    }
  }
  return tape.record(std::move(y), [=](Tape<Real>& t, std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    const Tensor<Real>& xv = t.value(x);
    const Tensor<Real>& kv = t.value(kernel);
    std::vector<double> dx(cin * len, 0.0), dk(cout * cin * k, 0.0);
    std::vector<double> db(cout, 0.0);
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t p = 0; p < out_len; ++p) {
        const double g = dy[o * out_len + p];
        if (g == 0.0) continue;
        db[o] += g;
        for (std::size_t c = 0; c < cin; ++c) {
          const std::size_t kbase = (o * cin + c) * k;
          const std::size_t xbase = c * len + p * stride;
          for (std::size_t j = 0; j < k; ++j) {
            dk[kbase + j] += g * xv[xbase + j];
            dx[xbase + j] += g * kv[kbase + j];
          }
        }
      }
    }
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += static_cast<Real>(dx[i]);
    auto& gk = t.grad_buffer(kernel);
    for (std::size_t i = 0; i < dk.size(); ++i) gk[i] += static_cast<Real>(dk[i]);
    auto& gb = t.grad_buffer(bias);
    for (std::size_t i = 0; i < db.size(); ++i) gb[i] += static_cast<Real>(db[i]);
  });
}

// Per-channel sliding maximum over time. Ties route the gradient to the
// lowest index in the window.
template <typename Real>
Var maxpool1d(Tape<Real>& tape, Var x, std::size_t window, std::size_t stride) {
  const auto& xv = tape.value(x);
  detail::require_rank(xv.shape(), 2, "maxpool1d input");
  const std::size_t ch = xv.dim(0), len = xv.dim(1);
  const std::size_t out_len = conv_output_length(len, window, stride);
  Tensor<Real> y(Shape{ch, out_len});
  std::vector<std::size_t> argmax(ch * out_len);
  const bool track = tape.tracking();
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t p = 0; p < out_len; ++p) {
      const std::size_t base = c * len + p * stride;
      std::size_t best = base;
      for (std::size_t j = 1; j < window; ++j) {
        if (xv[base + j] > xv[best]) best = base + j;
      }
      argmax[c * out_len + p] = best;
      y[c * out_len + p] = xv[best];
      if (track && window > 1) {
        double gap = INFINITY;
        for (std::size_t j = 0; j < window; ++j) {
          if (base + j != best) {
            gap = std::min(gap, static_cast<double>(xv[best]) - xv[base + j]);
          }
        }
        tape.note_kink(gap);
        tape.note_branch(best);
      }
    }
  }
  return tape.record(std::move(y), [x, argmax](Tape<Real>& t, std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    auto& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += dy[i];
  });
}

template <typename Real>
Var relu(Tape<Real>& tape, Var x) {
  const auto& xv = tape.value(x);
  Tensor<Real> y(xv.shape());
  const bool track = tape.tracking();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    y[i] = xv[i] > Real{0} ? xv[i] : Real{0};
    if (track) {
      tape.note_kink(std::abs(static_cast<double>(xv[i])));
      tape.note_branch((i << 1) | (xv[i] > Real{0} ? 1u : 0u));
    }
  }
  return tape.record(std::move(y), [x](Tape<Real>& t, std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    const Tensor<Real>& xv = t.value(x);
    auto& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (xv[i] > Real{0}) dx[i] += dy[i];
    }
  });
}

enum class Mode { kTrain, kInfer };

// Running statistics of a batch-norm layer; not learnable.
template <typename Real>
struct BatchNormStats {
  Tensor<Real> mean;
  Tensor<Real> var;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Per-feature normalization of x[B x m]. Train mode uses (biased) batch
// statistics and folds them into `stats` as
// stats = momentum * stats + (1 - momentum) * batch; infer mode reads `stats`.
template <typename Real>
Var batchnorm(Tape<Real>& tape, Var x, Var gamma, Var beta, Mode mode,
              BatchNormStats<Real>& stats) {
  const auto& xv = tape.value(x);
  const auto& gv = tape.value(gamma);
  const auto& bv = tape.value(beta);
  detail::require_rank(xv.shape(), 2, "batchnorm input");
  const std::size_t rows = xv.dim(0), m = xv.dim(1);
  if (gv.shape() != Shape{m} || bv.shape() != Shape{m} ||
      stats.mean.shape() != Shape{m} || stats.var.shape() != Shape{m}) {
    throw DimensionError(detail::concat("batchnorm: input ", shape_str(xv.shape()),
                                        " gamma ", shape_str(gv.shape()),
                                        " beta ", shape_str(bv.shape())));
  }
  if (mode == Mode::kTrain && rows < 2) {
    throw BatchSizeError(detail::concat(
        "batchnorm in train mode needs at least 2 rows, got ", rows));
  }
  std::vector<double> mean(m), inv_std(m);
  if (mode == Mode::kTrain) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < rows; ++r) s += xv[r * m + j];
      mean[j] = s / static_cast<double>(rows);
      double v = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = xv[r * m + j] - mean[j];
        v += d * d;
      }
      v /= static_cast<double>(rows);
      inv_std[j] = 1.0 / std::sqrt(v + kBatchNormEpsilon);
      stats.mean[j] = static_cast<Real>(kBatchNormMomentum * stats.mean[j] +
                                        (1.0 - kBatchNormMomentum) * mean[j]);
      stats.var[j] = static_cast<Real>(kBatchNormMomentum * stats.var[j] +
                                       (1.0 - kBatchNormMomentum) * v);
    }
  } else {
    for (std::size_t j = 0; j < m; ++j) {
      mean[j] = stats.mean[j];
      inv_std[j] = 1.0 / std::sqrt(static_cast<double>(stats.var[j]) +
                                   kBatchNormEpsilon);
    }
  }
  Tensor<Real> y(xv.shape());
  std::vector<double> xhat(rows * m);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const double h = (xv[r * m + j] - mean[j]) * inv_std[j];
      xhat[r * m + j] = h;
      y[r * m + j] = static_cast<Real>(gv[j] * h + bv[j]);
    }
  }
  return tape.record(std::move(y), [=](Tape<Real>& t, std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    const Tensor<Real>& gv = t.value(gamma);
    std::vector<double> dgamma(m, 0.0), dbeta(m, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < m; ++j) {
        dgamma[j] += dy[r * m + j] * xhat[r * m + j];
        dbeta[j] += dy[r * m + j];
      }
    }
    auto& dx = t.grad_buffer(x);
    const double n = static_cast<double>(rows);
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double dxhat = dy[r * m + j] * static_cast<double>(gv[j]);
        double g;
        if (mode == Mode::kTrain) {
          // d/dx of (x - mean) / std with mean and std depending on the batch.
          g = inv_std[j] / n *
              (n * dxhat - dbeta[j] * gv[j] - xhat[r * m + j] * dgamma[j] * gv[j]);
        } else {
          g = dxhat * inv_std[j];
        }
        dx[r * m + j] += static_cast<Real>(g);
      }
    }
    auto& gg = t.grad_buffer(gamma);
    auto& gb = t.grad_buffer(beta);
    for (std::size_t j = 0; j < m; ++j) {
      gg[j] += static_cast<Real>(dgamma[j]);
      gb[j] += static_cast<Real>(dbeta[j]);
    }
  });
}

// Stacks matrices with equal column counts on top of each other.
template <typename Real>
Var concat_rows(Tape<Real>& tape, const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  const std::size_t cols = tape.value(parts.front()).dim(1);
  std::size_t rows = 0;
  for (Var p : parts) {
    const auto& v = tape.value(p);
    detail::require_rank(v.shape(), 2, "concat_rows part");
    if (v.dim(1) != cols) {
      throw DimensionError(detail::concat("concat_rows: column mismatch ",
                                          shape_str(v.shape()), " vs ", cols));
    }
    rows += v.dim(0);
  }
  std::vector<Real> data;
  data.reserve(rows * cols);
  for (Var p : parts) {
    const auto& v = tape.value(p).storage();
    data.insert(data.end(), v.begin(), v.end());
  }
  return tape.record(Tensor<Real>(Shape{rows, cols}, std::move(data)),
                     [parts](Tape<Real>& t, std::size_t self) {
                       const Tensor<Real> dy = t.grad_buffer(self);
                       std::size_t off = 0;
                       for (Var p : parts) {
                         auto& dx = t.grad_buffer(p);
                         for (std::size_t i = 0; i < dx.size(); ++i) {
                           dx[i] += dy[off + i];
                         }
                         off += dx.size();
                       }
                     });
}

// Pairwise cosine similarity of the rows of a[M x d] and b[N x d] -> [M x N].
// A zero row has similarity 0 with everything and receives no gradient.
template <typename Real>
Var cosine_similarity(Tape<Real>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require_rank(av.shape(), 2, "cosine_similarity lhs");
  detail::require_rank(bv.shape(), 2, "cosine_similarity rhs");
  const std::size_t rows = av.dim(0), cols = bv.dim(0), d = av.dim(1);
  if (bv.dim(1) != d) {
    throw DimensionError(detail::concat("cosine_similarity: ", shape_str(av.shape()),
                                        " vs ", shape_str(bv.shape())));
  }
  auto norms = [d](const Tensor<Real>& m, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(m[i * d + k]) * m[i * d + k];
      out[i] = std::sqrt(s);
    }
    return out;
  };
  const std::vector<double> na = norms(av, rows), nb = norms(bv, cols);
  Tensor<Real> y(Shape{rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (na[i] == 0.0 || nb[j] == 0.0) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(av[i * d + k]) * bv[j * d + k];
      y[i * cols + j] = static_cast<Real>(s / (na[i] * nb[j]));
    }
  }
  return tape.record(std::move(y), [=](Tape<Real>& t, std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    const Tensor<Real>& av = t.value(a);
    const Tensor<Real>& bv = t.value(b);
    std::vector<double> da(rows * d, 0.0), db(cols * d, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      if (na[i] == 0.0) continue;
      for (std::size_t j = 0; j < cols; ++j) {
        const double g = dy[i * cols + j];
        if (g == 0.0 || nb[j] == 0.0) continue;
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(av[i * d + k]) * bv[j * d + k];
        const double inv = 1.0 / (na[i] * nb[j]);
        const double s = dot * inv;
        for (std::size_t k = 0; k < d; ++k) {
          da[i * d + k] += g * (bv[j * d + k] * inv - s * av[i * d + k] / (na[i] * na[i]));
          db[j * d + k] += g * (av[i * d + k] * inv - s * bv[j * d + k] / (nb[j] * nb[j]));
        }
      }
    }
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < da.size(); ++i) ga[i] += static_cast<Real>(da[i]);
    auto& gb = t.grad_buffer(b);
    for (std::size_t i = 0; i < db.size(); ++i) gb[i] += static_cast<Real>(db[i]);
  });
}

template <typename Real>
Var sum(Tape<Real>& tape, Var x) {
  double s = 0.0;
  for (Real v : tape.value(x).storage()) s += v;
  return tape.record_scalar(s, [x](Tape<Real>& t, std::size_t self) {
                       const Real g = t.grad_buffer(self)[0];
                       auto& dx = t.grad_buffer(x);
                       for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
                     });
}

// Sum of squared entries over several tensors, as one scalar.
template <typename Real>
Var sum_squares(Tape<Real>& tape, const std::vector<Var>& xs) {
  double s = 0.0;
  for (Var x : xs)
    for (Real v : tape.value(x).storage()) s += static_cast<double>(v) * v;
  return tape.record_scalar(s, [xs](Tape<Real>& t, std::size_t self) {
                       const double g = t.grad_buffer(self)[0];
                       for (Var x : xs) {
                         const Tensor<Real>& xv = t.value(x);
                         auto& dx = t.grad_buffer(x);
                         for (std::size_t i = 0; i < dx.size(); ++i) {
                           dx[i] += static_cast<Real>(2.0 * g * xv[i]);
                         }
                       }
                     });
}

template <typename Real>
Var scale(Tape<Real>& tape, Var x, double factor) {
  auto back = [x, factor](Tape<Real>& t, std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    auto& dx = t.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += static_cast<Real>(factor * dy[i]);
  };
  const auto& xv = tape.value(x);
  if (xv.shape().empty()) return tape.record_scalar(factor * tape.scalar(x), back);
  Tensor<Real> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = static_cast<Real>(factor * xv[i]);
  return tape.record(std::move(y), back);
}

template <typename Real>
Var add(Tape<Real>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw DimensionError(detail::concat("add: ", shape_str(av.shape()), " vs ",
                                        shape_str(bv.shape())));
  }
  auto back = [a, b](Tape<Real>& t, std::size_t self) {
    const Tensor<Real> dy = t.grad_buffer(self);
    auto& da = t.grad_buffer(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
    auto& db = t.grad_buffer(b);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i];
  };
  if (av.shape().empty()) return tape.record_scalar(tape.scalar(a) + tape.scalar(b), back);
  Tensor<Real> y(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] + bv[i];
  return tape.record(std::move(y), back);
}

}  // namespace hman
