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

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "hman/tape.hpp"

namespace hman {

// kCentral: (f(x+h) - f(x-h)) / 2h. kRichardson combines the central
// differences at h and 2h as (4 D(h) - D(2h)) / 3, cancelling the h^2
// term; 32-bit checks need it because h cannot be made small there.
enum class Stencil { kCentral, kRichardson };

struct GradCheckOptions {
  double epsilon = 1e-6;
  Stencil stencil = Stencil::kCentral;
  // Richardson only: an entry whose D(h) and D(2h) differ by more than this
  // (relative to max(1, |numeric|)) sits where the loss is not smooth at the
  // probe scale and is counted as unstable.
  double max_spread = std::numeric_limits<double>::infinity();
  // Return at the first kink crossing or unstable entry, for callers that
  // resample their inputs.
  bool stop_early = false;
};

struct GradCheckResult {
  // max over entries of |analytic - numeric| / max(1, |numeric|)
  double max_relative_error = 0.0;
  // The same maximum restricted to entries that are neither kink crossings
  // nor unstable.
  double max_smooth_error = 0.0;
  // Entries whose +/- probe took a different branch (ReLU side, argmax,
  // active hinge) than the unperturbed evaluation. The difference quotient
  // is meaningless there, so callers should resample when this is nonzero.
  std::size_t kink_crossings = 0;
  std::size_t unstable_entries = 0;
  std::size_t entries = 0;
  // Smallest distance to a kink seen during the unperturbed evaluation.
  double kink_margin = 0.0;
  bool stopped_early = false;

  bool clean() const noexcept { return kink_crossings == 0 && unstable_entries == 0 && !stopped_early; }
};

// Compares the tape gradient of `build_loss` against finite differences for
// every entry of every parameter. `build_loss` must record a scalar on the
// tape it is given and be deterministic.
template <typename Real>
GradCheckResult grad_check(const std::function<Var(Tape<Real>&)>& build_loss,
                           const std::vector<Parameter<Real>*>& params,
                           const GradCheckOptions& options) {
  auto evaluate = [&](std::uint64_t* hash) {
    Tape<Real> tape;
    tape.set_tracking(true);
    const Var loss = build_loss(tape);
    const double v = tape.scalar(loss);
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
    if (hash) *hash = tape.branch_hash();
    return v;
  };

  GradCheckResult result;
  for (auto* p : params) p->zero_grad();
  std::uint64_t nominal_hash = 0;
  {
    Tape<Real> tape;
    tape.set_tracking(true);
    const Var loss = build_loss(tape);
    if (!std::isfinite(tape.scalar(loss))) throw NumericError("grad_check: loss is not finite");
    nominal_hash = tape.branch_hash();
    result.kink_margin = tape.kink_margin();
    tape.backward(loss);
  }

  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const Real saved = p->value[i];
      bool crossed = false;
      // Divides by the step actually taken after rounding to Real.
      auto central = [&](double h) {
        std::uint64_t hash_plus = 0, hash_minus = 0;
        p->value[i] = static_cast<Real>(saved + h);
        const double step_plus = static_cast<double>(p->value[i]) - saved;
        const double f_plus = evaluate(&hash_plus);
        p->value[i] = static_cast<Real>(saved - h);
        const double step_minus = saved - static_cast<double>(p->value[i]);
        const double f_minus = evaluate(&hash_minus);
        p->value[i] = saved;
        crossed = crossed || hash_plus != nominal_hash || hash_minus != nominal_hash;
        return (f_plus - f_minus) / (step_plus + step_minus);
      };
      const double d1 = central(options.epsilon);
      double numeric = d1;
      bool unstable = false;
      if (options.stencil == Stencil::kRichardson) {
        const double d2 = central(2.0 * options.epsilon);
        numeric = (4.0 * d1 - d2) / 3.0;
        unstable = std::abs(d1 - d2) / std::max(1.0, std::abs(numeric)) > options.max_spread;
      }

      const double analytic = p->grad[i];
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.entries;
      if (crossed) ++result.kink_crossings;
      if (unstable) ++result.unstable_entries;
      if (!crossed && !unstable) {
        result.max_smooth_error = std::max(result.max_smooth_error, err);
      } else if (options.stop_early) {
        result.stopped_early = true;
        return result;
      }
    }
  }
  return result;
}

template <typename Real>
GradCheckResult grad_check(const std::function<Var(Tape<Real>&)>& build_loss,
                           const std::vector<Parameter<Real>*>& params, double epsilon) {
  GradCheckOptions options;
  options.epsilon = epsilon;
  return grad_check(build_loss, params, options);
}

}  // namespace hman
