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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "hman/gradcheck.hpp"
#include "hman/retrieval.hpp"
#include "hman/training.hpp"

// Self-checks behind `hman verify`: gradient checks, candidate geometry,
// relevance bounds and metric cross-checks.
namespace hman::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct Report {
  std::vector<CheckResult> checks;

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }

  std::string text() const {
    std::ostringstream out;
    for (const auto& c : checks) {
      out << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << '\n';
    }
    return out.str();
  }
};

// Runs `body` and times it; an exception fails the check with its message.
inline CheckResult run_check(const std::string& name, const std::function<CheckResult()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---- gradients ----------------------------------------------------------

struct GradientSettings {
  std::size_t dim = 6;  // clip, sentence, embed and hidden width
  std::size_t videos = 2;
  std::size_t sentences_per_video = 2;
  std::size_t max_attempts = 200;
  // Inputs whose nominal evaluation comes this close to a kink are redrawn.
  double kink_floor = 1e-4;
  double tolerance = 1e-5;
  GradCheckOptions options;
};

// 64-bit: plain central differences. 32-bit: float rounding of the loss
// rules out a small step, so a larger one with the Richardson stencil, and
// inputs where the two stencil steps disagree are redrawn like kinks.
template <typename Real>
GradientSettings default_gradient_settings() {
  GradientSettings s;
  if constexpr (sizeof(Real) >= 8) {
    s.tolerance = 1e-5;
    s.options.epsilon = 1e-6;
    s.options.stencil = Stencil::kCentral;
  } else {
    s.tolerance = 1e-3;
    s.options.epsilon = 3e-3;
    s.options.stencil = Stencil::kRichardson;
    s.options.max_spread = 1e-2;
  }
  s.options.stop_early = true;
  return s;
}

struct GradientCase {
  Variant variant = Variant::kSum;
  std::uint64_t seed = 0;
  std::size_t attempts = 0;  // inputs drawn, including the accepted one
  bool found_clean = false;
  GradCheckResult result;
  double loss = 0.0;
};

// Grad-checks the full objective (both hinge families plus the weight
// regularizer) on a small synthetic batch drawn from `seed`. Draws that sit
// on or straddle a kink are replaced by the next substream.
template <typename Real>
GradientCase gradient_case(Variant variant, std::uint64_t seed, const GradientSettings& settings) {
  GradientCase out;
  out.variant = variant;
  out.seed = seed;
  for (std::size_t attempt = 0; attempt < settings.max_attempts; ++attempt) {
    ++out.attempts;
    const std::uint64_t s = Rng::derive(seed, 0x67c4, attempt).next();
    SyntheticSpec spec;
    spec.n_videos = settings.videos;
    spec.sentences_per_video = settings.sentences_per_video;
    spec.clip_dim = settings.dim;
    spec.sentence_dim = settings.dim;
    spec.concept_dim = 3;
    spec.profile = profiles::toy();
    spec.seed = s;
    const Corpus corpus = generate_corpus(spec);
    const TrainingData<Real> data(corpus, spec.profile, 0.5);

    Hyperparams h;
    h.embed_dim = settings.dim;
    h.hidden_dim = settings.dim;
    h.variant = variant;
    ModelParams<Real> model = init_params<Real>(s, model_dims(corpus, h), spec.profile);
    const LossConfig cfg = h.loss_config();
    const std::vector<PairRef> batch = all_pairs(corpus);
    const std::function<Var(Tape<Real>&)> build = [&](Tape<Real>& t) {
      return batch_loss(t, model, data, batch, cfg).total;
    };
    {
      Tape<Real> tape;
      tape.set_tracking(true);
      const Var loss = build(tape);
      out.loss = tape.scalar(loss);
      if (tape.kink_margin() < settings.kink_floor) continue;
    }
    out.result = grad_check<Real>(build, model.pointers(), settings.options);
    if (out.result.clean()) {
      out.found_clean = true;
      return out;
    }
  }
  return out;
}

template <typename Real>
CheckResult gradient_check(std::uint64_t first_seed, std::size_t seeds, const GradientSettings& settings) {
  CheckResult r;
  r.passed = true;
  double worst = 0.0;
  std::size_t attempts = 0;
  std::ostringstream why;
  for (Variant v : {Variant::kSum, Variant::kMax}) {
    for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
      const GradientCase c = gradient_case<Real>(v, seed, settings);
      attempts += c.attempts;
      if (!c.found_clean) {
        r.passed = false;
        why << " no kink-free draw for " << to_string(v) << "/seed " << seed << ";";
        continue;
      }
      worst = std::max(worst, c.result.max_relative_error);
      if (c.result.max_relative_error > settings.tolerance) {
        r.passed = false;
        why << " " << to_string(v) << "/seed " << seed << " error " << c.result.max_relative_error << ";";
      }
    }
  }
  std::ostringstream d;
  d << sizeof(Real) * 8 << "-bit max_rel_error=" << worst << " tol=" << settings.tolerance
    << " cases=" << 2 * seeds << " draws=" << attempts << why.str();
  r.detail = d.str();
  return r;
}

// ---- geometry -----------------------------------------------------------

inline CheckResult geometry_check(const DatasetProfile& profile) {
  CheckResult r;
  const CandidateSet set = enumerate_candidates(profile);
  std::ostringstream d;
  d << "profile=" << profile.name << " candidates=" << set.size();
  if (profile.expected_candidates) d << " expected=" << *profile.expected_candidates;
  r.passed = true;
  if (profile.branch) {
    std::size_t branch = 0;
    for (const auto& c : set.items) branch += c.branch ? 1 : 0;
    d << " branch=" << branch;
  }
  r.detail = d.str();
  return r;
}

// ---- relevance ----------------------------------------------------------

struct RelevanceStats {
  std::size_t lists = 0;
  std::size_t bound_violations = 0;
  std::size_t monotonicity_violations = 0;
};

// Random similarity lists in [-1, 1]; checks
// max S <= R <= max S + ln(n) / beta and that R - max S does not grow with
// beta over the given increasing betas.
inline RelevanceStats relevance_stats(std::size_t lists, const std::vector<double>& betas, std::uint64_t seed) {
  RelevanceStats st;
  Rng rng = Rng::derive(seed, 0x4e1);
  for (std::size_t l = 0; l < lists; ++l) {
    const std::size_t n = 1 + rng.below(64);
    std::vector<double> s(n);
    for (double& v : s) v = rng.uniform(-1.0, 1.0);
    const double top = *std::max_element(s.begin(), s.end());
    double previous_gap = std::numeric_limits<double>::infinity();
    for (double beta : betas) {
      const double r = relevance(s, beta);
      if (!(r >= top && r <= top + std::log(static_cast<double>(n)) / beta)) ++st.bound_violations;
      const double gap = r - top;
      if (gap > previous_gap) ++st.monotonicity_violations;
      previous_gap = gap;
    }
    ++st.lists;
  }
  return st;
}

inline CheckResult relevance_check(std::size_t lists, std::uint64_t seed) {
  const RelevanceStats st = relevance_stats(lists, {1.0, 10.0, 100.0}, seed);
  CheckResult r;
  r.passed = st.bound_violations == 0 && st.monotonicity_violations == 0;
  std::ostringstream d;
  d << "lists=" << st.lists << " bound_violations=" << st.bound_violations
    << " monotonicity_violations=" << st.monotonicity_violations;
  r.detail = d.str();
  return r;
}

// ---- metrics ------------------------------------------------------------

// A random retrieval problem: index entries over a few videos, ground truth
// and one complete ranking per query.
struct MetricCase {
  std::vector<IndexEntry> entries;
  GroundTruth gt;
  std::vector<Ranking> results;
};

inline MetricCase random_metric_case(Rng& rng, std::size_t max_moments = 200) {
  MetricCase mc;
  const int base = 4 + static_cast<int>(rng.below(9));
  const std::size_t videos = 1 + rng.below(6);
  for (std::size_t v = 0; v < videos && mc.entries.size() < max_moments; ++v) {
    const std::string id = "v" + std::to_string(v);
    const std::size_t n = 1 + rng.below(std::min<std::size_t>(40, max_moments - mc.entries.size()));
    for (std::size_t c = 0; c < n; ++c) {
      const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(base)));
      const int b = a + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(base - a)));
      mc.entries.push_back({id, c, MomentSpan(a, b, 1.0)});
    }
  }
  const std::size_t queries = 1 + rng.below(12);
  for (std::size_t q = 0; q < queries; ++q) {
    GroundTruthEntry g;
    g.video_id = "v" + std::to_string(rng.below(videos + 1));  // may name a video with no moments
    const std::size_t spans = 1 + rng.below(3);
    for (std::size_t k = 0; k < spans; ++k) {
      const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(base)));
      const int b = a + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(base - a)));
      g.spans.emplace_back(a, b, 1.0);
    }
    mc.gt.push_back(g);
    Ranking r(mc.entries.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = Hit{i, 0.0};
    rng.shuffle(r);
    mc.results.push_back(std::move(r));
  }
  return mc;
}

namespace reference {

// Straight-line restatements of the correctness rule and both metrics.
inline bool correct(const IndexEntry& e, const GroundTruthEntry& g, double m, std::size_t min_annotations) {
  std::size_t ok = 0;
  for (const auto& s : g.spans) {
    const int inter = std::min(e.span.end_unit, s.end_unit) - std::max(e.span.start_unit, s.start_unit);
    const int uni = std::max(e.span.end_unit, s.end_unit) - std::min(e.span.start_unit, s.start_unit);
    if (inter > 0 && static_cast<double>(inter) / uni >= m) ++ok;
  }
  std::size_t need = min_annotations < g.spans.size() ? min_annotations : g.spans.size();
  if (need == 0) need = 1;
  return e.video_id == g.video_id && ok >= need;
}

inline double recall(const MetricCase& mc, std::size_t k, double m, std::size_t min_annotations) {
  double hits = 0.0;
  for (std::size_t q = 0; q < mc.gt.size(); ++q) {
    bool any = false;
    for (std::size_t i = 0; i < mc.results[q].size() && i < k; ++i)
      any = any || correct(mc.entries[mc.results[q][i].row], mc.gt[q], m, min_annotations);
    hits += any ? 1.0 : 0.0;
  }
  return mc.gt.empty() ? 0.0 : hits / static_cast<double>(mc.gt.size());
}

inline double median(const MetricCase& mc, double m, std::size_t min_annotations) {
  std::vector<double> ranks;
  for (std::size_t q = 0; q < mc.gt.size(); ++q) {
    double rank = static_cast<double>(mc.entries.size() + 1);
    for (std::size_t i = mc.results[q].size(); i-- > 0;)
      if (correct(mc.entries[mc.results[q][i].row], mc.gt[q], m, min_annotations)) rank = static_cast<double>(i + 1);
    ranks.push_back(rank);
  }
  std::sort(ranks.begin(), ranks.end());
  const std::size_t n = ranks.size();
  if (n == 0) return 0.0;
  return n % 2 ? ranks[n / 2] : (ranks[n / 2 - 1] + ranks[n / 2]) / 2.0;
}

}  // namespace reference

inline CheckResult metric_check(std::size_t corpora, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x3e7);
  std::size_t compared = 0, mismatches = 0;
  for (std::size_t c = 0; c < corpora; ++c) {
    const MetricCase mc = random_metric_case(rng);
    for (std::size_t min_ann : {std::size_t{1}, std::size_t{2}}) {
      for (double m : {0.5, 0.7}) {
        for (std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}, std::size_t{100}}) {
          ++compared;
          if (recall_at_k_iou(mc.results, mc.entries, mc.gt, k, m, min_ann) != reference::recall(mc, k, m, min_ann))
            ++mismatches;
        }
        ++compared;
        if (median_rank(mc.results, mc.entries, mc.gt, m, min_ann, mc.entries.size()) !=
            reference::median(mc, m, min_ann))
          ++mismatches;
      }
    }
  }
  CheckResult r;
  r.passed = mismatches == 0;
  r.detail = "corpora=" + std::to_string(corpora) + " comparisons=" + std::to_string(compared) +
             " mismatches=" + std::to_string(mismatches);
  return r;
}

// ---- suite --------------------------------------------------------------

struct Settings {
  std::vector<DatasetProfile> profiles{profiles::didemo(), profiles::charades(), profiles::activitynet()};
  std::size_t gradient_seeds = 10;
  std::size_t relevance_lists = 1000;
  std::size_t metric_corpora = 100;
  std::uint64_t seed = 0;
};

template <typename Real>
Report run_all(const Settings& settings) {
  Report rep;
  for (const auto& p : settings.profiles) {
    rep.checks.push_back(run_check("geometry/" + p.name, [&] { return geometry_check(p); }));
  }
  const GradientSettings gs = default_gradient_settings<Real>();
  rep.checks.push_back(run_check("gradients/" + std::to_string(sizeof(Real) * 8) + "bit",
                                 [&] { return gradient_check<Real>(settings.seed, settings.gradient_seeds, gs); }));
  rep.checks.push_back(
      run_check("relevance-bounds", [&] { return relevance_check(settings.relevance_lists, settings.seed); }));
  rep.checks.push_back(
      run_check("metric-oracle", [&] { return metric_check(settings.metric_corpora, settings.seed); }));
  return rep;
}

}  // namespace hman::verify
