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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "support.hpp"

namespace hman {
namespace {

using T = Tensor<double>;

T row(std::initializer_list<double> v) { return T(Shape{1, v.size()}, std::vector<double>(v)); }

TEST(Linear, Examples) {
  struct Case {
    T x, w, b, want;
  };
  const std::vector<Case> cases = {
      {row({1, 2}), T::matrix({{1, 0}, {0, 1}}), T::vector({0, 0}), row({1, 2})},
      {row({1, 2}), T::matrix({{0, 0}, {0, 0}}), T::vector({3, 4}), row({3, 4})},
      {row({1, 1}), T::matrix({{2, 0}, {1, 3}}), T::vector({1, 1}), row({4, 4})},
  };
  for (const auto& c : cases) {
    Tape<double> tape;
    const Var y = linear(tape, tape.input(c.x), tape.input(c.w), tape.input(c.b));
    EXPECT_EQ(tape.value(y), c.want);
  }
}

TEST(Linear, RejectsShapeMismatch) {
  Tape<double> tape;
  EXPECT_THROW(linear(tape, tape.input(row({1, 2})), tape.input(T::matrix({{1, 0, 0}})), tape.input(T::vector({0}))),
               DimensionError);
}

TEST(Conv1d, Examples) {
  auto run = [](std::vector<double> x, std::vector<double> k, std::size_t stride) {
    Tape<double> tape;
    const Var y = conv1d(tape, tape.input(T(Shape{1, x.size()}, x)), tape.input(T(Shape{1, 1, k.size()}, k)),
                         tape.input(T(Shape{1})), stride);
    return tape.value(y).storage();
  };
  EXPECT_EQ(run({1, 2, 3, 4}, {1, 1}, 2), (std::vector<double>{3, 7}));
  EXPECT_EQ(run({5, 6, 7}, {1}, 1), (std::vector<double>{5, 6, 7}));
  EXPECT_EQ(run({1, 2, 3, 4, 5, 6}, {1, 1}, 1), (std::vector<double>{3, 5, 7, 9, 11}));
}

TEST(Conv1d, OutputLengthFormula) {
  for (std::size_t t = 1; t <= 40; ++t) {
    for (std::size_t k = 1; k <= t; ++k) {
      for (std::size_t s = 1; s <= 5; ++s) {
        ASSERT_EQ(conv_output_length(t, k, s), (t - k) / s + 1) << t << " " << k << " " << s;
        Tape<double> tape;
        const Var y = conv1d(tape, tape.input(T(Shape{2, t}, 1.0)), tape.input(T(Shape{3, 2, k}, 1.0)),
                             tape.input(T(Shape{3})), s);
        ASSERT_EQ(tape.value(y).dim(1), (t - k) / s + 1);
      }
    }
  }
}

TEST(Conv1d, RejectsBadGeometry) {
  Tape<double> tape;
  const Var x = tape.input(T(Shape{1, 3}));
  EXPECT_THROW(conv1d(tape, x, tape.input(T(Shape{1, 1, 4})), tape.input(T(Shape{1})), 1), Error);
  EXPECT_THROW(conv1d(tape, x, tape.input(T(Shape{1, 1, 2})), tape.input(T(Shape{1})), 0), Error);
}

TEST(MaxPool1d, Examples) {
  auto run = [](std::vector<double> x, std::size_t w, std::size_t s) {
    Tape<double> tape;
    return tape.value(maxpool1d(tape, tape.input(T(Shape{1, x.size()}, x)), w, s)).storage();
  };
  EXPECT_EQ(run({1, 3, 2, 4}, 2, 2), (std::vector<double>{3, 4}));
  EXPECT_EQ(run({7}, 1, 1), (std::vector<double>{7}));
  EXPECT_EQ(run({2, 2, 2, 2}, 2, 2), (std::vector<double>{2, 2}));
}

TEST(MaxPool1d, TiedGradientGoesToFirst) {
  Tape<double> tape;
  const Var x = tape.input(T(Shape{1, 4}, std::vector<double>{2, 2, 2, 2}));
  tape.backward(sum(tape, maxpool1d(tape, x, 2, 2)));
  EXPECT_EQ(tape.grad(x).storage(), (std::vector<double>{1, 0, 1, 0}));
}

TEST(Relu, Examples) {
  Tape<double> tape;
  const Var y = relu(tape, tape.input(T::vector({-1, 0, 2})));
  EXPECT_EQ(tape.value(y).storage(), (std::vector<double>{0, 0, 2}));
}

TEST(BatchNorm, TrainNormalizes) {
  Tape<double> tape;
  BatchNormStats<double> stats{T(Shape{1}), T(Shape{1}, 1.0)};
  const Var y = batchnorm(tape, tape.input(T::matrix({{1}, {3}})), tape.input(T::vector({1})),
                          tape.input(T::vector({0})), Mode::kTrain, stats);
  // mean 2, biased variance 1: (x - 2) / sqrt(1 + 1e-5)
  EXPECT_NEAR(tape.value(y)[0], -1.0, 1e-3);
  EXPECT_NEAR(tape.value(y)[1], 1.0, 1e-3);
  EXPECT_NEAR(stats.mean[0], 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(stats.var[0], 0.9 * 1.0 + 0.1 * 1.0, 1e-12);
}

TEST(BatchNorm, ZeroScaleGivesShift) {
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    Tape<double> tape;
    BatchNormStats<double> stats{T(Shape{2}), T(Shape{2}, 1.0)};
    const Var y = batchnorm(tape, tape.input(T::matrix({{1, -4}, {3, 9}, {0, 2}})), tape.input(T::vector({0, 0})),
                            tape.input(T::vector({5, 5})), mode, stats);
    for (double v : tape.value(y).storage()) EXPECT_DOUBLE_EQ(v, 5.0);
  }
}

TEST(BatchNorm, TrainModeNeedsTwoRows) {
  Tape<double> tape;
  BatchNormStats<double> stats{T(Shape{1}), T(Shape{1}, 1.0)};
  EXPECT_THROW(batchnorm(tape, tape.input(T::matrix({{1}})), tape.input(T::vector({1})),
                         tape.input(T::vector({0})), Mode::kTrain, stats),
               BatchSizeError);
}

TEST(Backward, LinearGradient) {
  Tape<double> tape;
  Parameter<double> w("W", T(Shape{2, 1}, std::vector<double>{0.3, -0.7}));
  const Var y = linear(tape, tape.input(row({1, 1})), tape.watch(w), tape.input(T(Shape{1})));
  tape.backward(sum(tape, y));
  EXPECT_EQ(w.grad.storage(), (std::vector<double>{1, 1}));
}

TEST(Backward, InactiveRelu) {
  Tape<double> tape;
  const Var x = tape.input(T::vector({1}));
  tape.backward(sum(tape, relu(tape, scale(tape, x, -1.0))));
  EXPECT_EQ(tape.grad(x)[0], 0.0);
}

TEST(Backward, AccumulatesIntoParameters) {
  Parameter<double> w("W", T(Shape{2, 2}, std::vector<double>{0.5, -1.0, 2.0, 0.25}));
  Tape<double> tape;
  const Var y = linear(tape, tape.input(T::matrix({{1, 2}, {-3, 1}})), tape.watch(w), tape.input(T(Shape{2})));
  const Var loss = sum_squares(tape, {y});
  tape.backward(loss);
  const std::vector<double> once = w.grad.storage();
  tape.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(w.grad[i], 2.0 * once[i]);
}

TEST(Backward, RequiresScalarLoss) {
  Tape<double> tape;
  const Var x = tape.input(T::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Tape, ReductionsKeepDoublePrecision) {
  Tape<float> tape;
  std::vector<float> v(1000, 0.1f);
  const Var s = sum(tape, tape.input(Tensor<float>(Shape{1000}, v)));
  double want = 0.0;
  for (float x : v) want += static_cast<double>(x);
  EXPECT_DOUBLE_EQ(tape.scalar(s), want);
}

// ---- finite-difference oracle over every differentiable op -------------

template <typename Real>
struct OpCase {
  const char* name;
  // Draws the parameters; returns false to resample when an input lies
  // within `margin` of a kink.
  std::function<bool(Rng&, std::vector<Parameter<Real>>&, double margin)> draw;
  std::function<Var(Tape<Real>&, std::vector<Parameter<Real>>&)> loss;
  // Leading parameters that are differentiated; the rest carry settings.
  std::size_t differentiable = 0;
};

template <typename Real>
Tensor<Real> random_tensor(Rng& rng, Shape s) {
  Tensor<Real> t(std::move(s));
  for (auto& v : t.storage()) v = static_cast<Real>(rng.normal());
  return t;
}

template <typename Real>
bool away_from_zero(const Tensor<Real>& t, double margin) {
  for (Real v : t.storage())
    if (std::abs(static_cast<double>(v)) < margin) return false;
  return true;
}

// Smallest row norm of a matrix.
template <typename Real>
double min_row_norm(const Tensor<Real>& t) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < t.dim(1); ++c) s += static_cast<double>(t.at(r, c)) * t.at(r, c);
    best = std::min(best, std::sqrt(s));
  }
  return best;
}

// Smallest per-column standard deviation of a matrix.
template <typename Real>
double min_column_std(const Tensor<Real>& t) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < t.dim(1); ++c) {
    double m = 0.0, v = 0.0;
    for (std::size_t r = 0; r < t.dim(0); ++r) m += t.at(r, c);
    m /= static_cast<double>(t.dim(0));
    for (std::size_t r = 0; r < t.dim(0); ++r) v += (t.at(r, c) - m) * (t.at(r, c) - m);
    best = std::min(best, std::sqrt(v / static_cast<double>(t.dim(0))));
  }
  return best;
}

// Normalizing ops are smooth but steep near a zero norm or a zero batch
// variance; draws there are resampled like kinks, with a wider berth.
constexpr double kConditioning = 25.0;

template <typename Real>
std::vector<OpCase<Real>> op_cases() {
  using P = std::vector<Parameter<Real>>;
  using Tp = Tape<Real>;
  auto rt = [](Rng& r, Shape s) { return random_tensor<Real>(r, std::move(s)); };
  std::vector<OpCase<Real>> cases;
  cases.push_back({"linear",
                   [rt](Rng& r, P& p, double) {
                     const std::size_t b = 1 + r.below(4), n = 1 + r.below(5), m = 1 + r.below(5);
                     p = {{"x", rt(r, {b, n})}, {"w", rt(r, {n, m})}, {"b", rt(r, {m})}};
                     return true;
                   },
                   [](Tp& t, P& p) { return sum_squares(t, {linear(t, t.watch(p[0]), t.watch(p[1]), t.watch(p[2]))}); },
                   3});
  cases.push_back({"conv1d",
                   [rt](Rng& r, P& p, double) {
                     const std::size_t cin = 1 + r.below(3), cout = 1 + r.below(3), k = 1 + r.below(3);
                     const std::size_t len = k + r.below(6);
                     p = {{"x", rt(r, {cin, len})},
                          {"k", rt(r, {cout, cin, k})},
                          {"b", rt(r, {cout})},
                          {"stride", Tensor<Real>::scalar(static_cast<Real>(1 + r.below(3)))}};
                     return true;
                   },
                   [](Tp& t, P& p) {
                     const auto stride = static_cast<std::size_t>(p[3].value.item());
                     return sum_squares(t, {conv1d(t, t.watch(p[0]), t.watch(p[1]), t.watch(p[2]), stride)});
                   },
                   3});
  cases.push_back({"maxpool1d",
                   [rt](Rng& r, P& p, double margin) {
                     const std::size_t ch = 1 + r.below(3), len = 2 + r.below(8);
                     p = {{"x", rt(r, {ch, len})}};
                     const auto& x = p[0].value.storage();
                     for (std::size_t i = 0; i < x.size(); ++i)
                       for (std::size_t j = i + 1; j < x.size(); ++j)
                         if (std::abs(static_cast<double>(x[i] - x[j])) < 2 * margin) return false;
                     return true;
                   },
                   [](Tp& t, P& p) { return sum_squares(t, {maxpool1d(t, t.watch(p[0]), 2, 1)}); },
                   1});
  cases.push_back({"relu",
                   [rt](Rng& r, P& p, double margin) {
                     const std::size_t a = 2 + r.below(3), b = 1 + r.below(4);
                     p = {{"x", rt(r, {a, b})}};
                     return away_from_zero(p[0].value, margin);
                   },
                   [](Tp& t, P& p) { return sum_squares(t, {relu(t, t.watch(p[0]))}); },
                   1});
  cases.push_back({"batchnorm",
                   [rt](Rng& r, P& p, double margin) {
                     const std::size_t b = 2 + r.below(4), m = 1 + r.below(4);
                     p = {{"x", rt(r, {b, m})}, {"g", rt(r, {m})}, {"b", rt(r, {m})}, {"w", rt(r, {b, m})}};
                     return min_column_std(p[0].value) >= kConditioning * margin;
                   },
                   [](Tp& t, P& p) {
                     const std::size_t m = p[1].value.size();
                     BatchNormStats<Real> stats{Tensor<Real>(Shape{m}), Tensor<Real>(Shape{m}, Real{1})};
                     const Var y = batchnorm(t, t.watch(p[0]), t.watch(p[1]), t.watch(p[2]), Mode::kTrain, stats);
                     // A plain sum of squares of a normalized output is constant in x.
                     return sum_squares(t, {add(t, y, t.watch(p[3])), scale(t, y, 0.3)});
                   },
                   4});
  cases.push_back({"cosine_similarity",
                   [rt](Rng& r, P& p, double margin) {
                     const std::size_t d = 1 + r.below(5), n = 1 + r.below(4), m = 1 + r.below(4);
                     p = {{"a", rt(r, {n, d})}, {"b", rt(r, {m, d})}};
                     return std::min(min_row_norm(p[0].value), min_row_norm(p[1].value)) >= kConditioning * margin;
                   },
                   [](Tp& t, P& p) {
                     const Var s = cosine_similarity(t, t.watch(p[0]), t.watch(p[1]));
                     return add(t, sum(t, s), sum_squares(t, {s}));
                   },
                   2});
  cases.push_back({"transpose/concat",
                   [rt](Rng& r, P& p, double) {
                     const std::size_t c = 1 + r.below(4), n = 1 + r.below(3), m = 1 + r.below(3);
                     p = {{"a", rt(r, {n, c})}, {"b", rt(r, {m, c})}, {"w", rt(r, {c, 2})}};
                     return true;
                   },
                   [](Tp& t, P& p) {
                     const Var cat = concat_rows(t, {t.watch(p[0]), t.watch(p[1])});
                     const Var y = linear(t, cat, t.watch(p[2]), t.input(Tensor<Real>(Shape{2})));
                     return sum_squares(t, {transpose(t, y), scale(t, cat, 0.5)});
                   },
                   3});
  return cases;
}

// Worst relative error between the tape gradient and central differences
// over 100 random draws per op.
template <typename Real>
void check_ops(std::uint64_t seed, double margin, double eps, double tol) {
  Rng rng(seed);
  for (const auto& c : op_cases<Real>()) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Parameter<Real>> p;
      while (!c.draw(rng, p, margin)) {
      }
      Tape<Real> tape;
      tape.backward(c.loss(tape, p));
      std::vector<Parameter<Real>*> ptrs;
      for (std::size_t k = 0; k < c.differentiable; ++k) ptrs.push_back(&p[k]);
      const auto numeric = testing::finite_differences<Real>(
          [&] {
            Tape<Real> t;
            return t.scalar(c.loss(t, p));
          },
          ptrs, eps);
      for (std::size_t k = 0; k < ptrs.size(); ++k) {
        for (std::size_t i = 0; i < p[k].value.size(); ++i) {
          const double g = static_cast<double>(p[k].grad[i]);
          worst = std::max(worst, std::abs(g - numeric[k][i]) / std::max(1.0, std::abs(numeric[k][i])));
        }
      }
    }
    EXPECT_LE(worst, tol) << c.name;
  }
}

TEST(FiniteDifferences, EveryOp64Bit) { check_ops<double>(11, 1e-4, 1e-6, 1e-5); }

// Float rounding of the forward pass needs a wider step, and draws are kept
// farther from kinks than the step.
TEST(FiniteDifferences, EveryOp32Bit) { check_ops<float>(12, 2e-2, 1e-2, 1e-3); }

TEST(Determinism, RepeatedEvaluationIsBitIdentical) {
  for (const auto& c : op_cases<double>()) {
    Rng a(5), b(5);
    std::vector<Parameter<double>> p, q;
    while (!c.draw(a, p, 1e-4)) {
    }
    while (!c.draw(b, q, 1e-4)) {
    }
    Tape<double> t1, t2;
    const Var l1 = c.loss(t1, p), l2 = c.loss(t2, q);
    EXPECT_EQ(t1.value(l1), t2.value(l2)) << c.name;
    t1.backward(l1);
    t2.backward(l2);
    for (std::size_t k = 0; k < p.size(); ++k) EXPECT_EQ(p[k].grad, q[k].grad) << c.name;
  }
}

// ---- grad_check ---------------------------------------------------------

TEST(GradCheck, QuadraticLoss) {
  Rng rng(3);
  Parameter<double> w("W", random_tensor<double>(rng, {3, 4}));
  const std::function<Var(Tape<double>&)> build = [&](Tape<double>& t) { return sum_squares(t, {t.watch(w)}); };
  const GradCheckResult r = grad_check<double>(build, {&w}, 1e-6);
  EXPECT_LE(r.max_relative_error, 1e-6);
  EXPECT_EQ(r.entries, 12u);
}

TEST(GradCheck, ConstantLoss) {
  Parameter<double> w("W", T::vector({1, 2, 3}));
  const std::function<Var(Tape<double>&)> build = [&](Tape<double>& t) {
    t.watch(w);
    return sum(t, t.input(T::vector({4, 5})));
  };
  const GradCheckResult r = grad_check<double>(build, {&w}, 1e-6);
  EXPECT_EQ(r.max_relative_error, 0.0);
  for (double g : w.grad.storage()) EXPECT_EQ(g, 0.0);
}

TEST(GradCheck, FlagsKinkCrossings) {
  // relu at exactly 0 straddles the kink under any probe.
  Parameter<double> w("W", T::vector({0.0, 1.0}));
  const std::function<Var(Tape<double>&)> build = [&](Tape<double>& t) {
    t.set_tracking(true);
    return sum(t, relu(t, t.watch(w)));
  };
  const GradCheckResult r = grad_check<double>(build, {&w}, 1e-6);
  EXPECT_GE(r.kink_crossings, 1u);
  EXPECT_FALSE(r.clean());
}

TEST(GradCheck, DetectsWrongGradient) {
  Parameter<double> w("W", T::vector({0.5, -1.5}));
  const std::function<Var(Tape<double>&)> build = [&](Tape<double>& t) {
    const Var x = t.watch(w);
    // Forward is x^2 but the backward rule claims 3x.
    Tensor<double> y(Shape{2});
    for (std::size_t i = 0; i < 2; ++i) y[i] = t.value(x)[i] * t.value(x)[i];
    const Var v = t.record(y, [x](Tape<double>& tp, std::size_t self) {
      const auto g = tp.grad_buffer(self);
      auto& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < 2; ++i) gx[i] += g[i] * 3.0 * tp.value(x)[i];
    });
    return sum(t, v);
  };
  const GradCheckResult r = grad_check<double>(build, {&w}, 1e-6);
  EXPECT_GT(r.max_relative_error, 0.1);
}

}  // namespace
}  // namespace hman
