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
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "hman/log.hpp"
#include "hman/model.hpp"
#include "hman/ops.hpp"

// Scoring and ranking losses of the joint embedding.
//
// Scores are cosine similarities S(m, s). A video's relevance to a
// sentence pools the similarities of all its candidate moments. Intra-video
// hinges separate a sentence's positive moments from the other moments of
// the same video; video-level hinges separate (video, sentence) pairs from
// in-batch negative videos and negative sentences. "sum" variants sum over
// all negatives, "max" variants use only the hardest one.
namespace hman {

enum class Variant { kSum, kMax };
enum class Pooling { kLogSumExp, kAverage };
// Which terms enter the optimized total: both, intra-video only, or
// video-level only.
enum class LossTerms { kProposed, kIntra, kVideo };

inline std::string to_string(Variant v) { return v == Variant::kSum ? "sum" : "max"; }
inline std::string to_string(Pooling p) { return p == Pooling::kLogSumExp ? "lse" : "avg"; }
inline std::string to_string(LossTerms t) {
  switch (t) {
    case LossTerms::kProposed: return "proposed";
    case LossTerms::kIntra: return "intra";
    case LossTerms::kVideo: return "video";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "sum") return Variant::kSum;
  if (s == "max") return Variant::kMax;
  throw ConfigError("variant must be 'sum' or 'max', got '" + s + "'");
}
inline Pooling parse_pooling(const std::string& s) {
  if (s == "lse" || s == "log") return Pooling::kLogSumExp;
  if (s == "avg" || s == "ave") return Pooling::kAverage;
  throw ConfigError("pooling must be 'lse' or 'avg', got '" + s + "'");
}
inline LossTerms parse_loss_terms(const std::string& s) {
  if (s == "proposed") return LossTerms::kProposed;
  if (s == "intra") return LossTerms::kIntra;
  if (s == "video") return LossTerms::kVideo;
  throw ConfigError("loss terms must be 'proposed', 'intra' or 'video', got '" + s + "'");
}

// Cosine similarity. A zero-norm vector scores 0 and logs a warning.
template <typename Real>
double similarity(std::span<const Real> m, std::span<const Real> s) {
  if (m.size() != s.size()) {
    throw DimensionError(detail::concat("similarity of vectors of size ", m.size(), " and ", s.size()));
  }
  double dot = 0.0, mm = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    dot += static_cast<double>(m[i]) * s[i];
    mm += static_cast<double>(m[i]) * m[i];
    ss += static_cast<double>(s[i]) * s[i];
  }
  if (mm == 0.0 || ss == 0.0) {
    log::warn("event", "degenerate_embedding", "detail", "zero-norm vector in similarity");
    return 0.0;
  }
  return dot / (std::sqrt(mm) * std::sqrt(ss));
}

inline double similarity(std::initializer_list<double> m, std::initializer_list<double> s) {
  return similarity<double>(std::span<const double>(m.begin(), m.size()),
                            std::span<const double>(s.begin(), s.size()));
}

// (1/beta) * log(sum_i exp(beta * S_i)), shifted by the max for overflow
// safety. If `weights` is given it receives dR/dS_i = softmax(beta * S)_i.
inline double relevance(std::span<const double> sims, double beta,
                        std::vector<double>* weights = nullptr) {
  if (sims.empty()) throw ContractError("relevance of an empty similarity list");
  if (!(beta > 0.0)) throw ContractError("relevance needs beta > 0");
  const double top = *std::max_element(sims.begin(), sims.end());
  double total = 0.0;
  for (double s : sims) total += std::exp(beta * (s - top));
  if (weights) {
    weights->resize(sims.size());
    for (std::size_t i = 0; i < sims.size(); ++i) {
      (*weights)[i] = std::exp(beta * (sims[i] - top)) / total;
    }
  }
  return top + std::log(total) / beta;
}

inline double relevance(std::initializer_list<double> sims, double beta) {
  return relevance(std::span<const double>(sims.begin(), sims.size()), beta);
}

// Average pooling, the ablation alternative to relevance().
inline double average_relevance(std::span<const double> sims, std::vector<double>* weights = nullptr) {
  if (sims.empty()) throw ContractError("relevance of an empty similarity list");
  double total = 0.0;
  for (double s : sims) total += s;
  if (weights) weights->assign(sims.size(), 1.0 / static_cast<double>(sims.size()));
  return total / static_cast<double>(sims.size());
}

// Distance-to-kink and branch bookkeeping for the piecewise-linear losses;
// merged into the tape when a loss is recorded.
struct BranchLog {
  double margin = std::numeric_limits<double>::infinity();
  std::uint64_t hash = 0;

  void kink(double distance) { margin = std::min(margin, std::abs(distance)); }
  void branch(std::uint64_t v) { hash = hash * 1099511628211ULL + v + 1; }
};

namespace detail {

// [alpha - pos + neg]_+ with its gradient pushed into (pos, neg) slots.
inline double hinge(double alpha, double pos, double neg, double* g_pos, double* g_neg,
                    BranchLog* log) {
  const double h = alpha - pos + neg;
  if (log) {
    log->kink(h);
    log->branch(h > 0.0 ? 1 : 0);
  }
  if (h <= 0.0) return 0.0;
  if (g_pos) *g_pos -= 1.0;
  if (g_neg) *g_neg += 1.0;
  return h;
}

// Index of the largest value among `candidates` (ties -> first listed).
template <typename Get>
std::size_t hardest(const std::vector<std::size_t>& candidates, Get value, BranchLog* log) {
  std::size_t best = candidates.front();
  for (std::size_t c : candidates)
    if (value(c) > value(best)) best = c;
  if (log) {
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t c : candidates)
      if (c != best) gap = std::min(gap, value(best) - value(c));
    log->kink(gap);
    log->branch(best);
  }
  return best;
}

}  // namespace detail

// Similarities between every candidate of every in-batch video and every
// in-batch sentence. Rows are candidates, grouped by video in blocks;
// columns are sentences.
struct BatchScores {
  std::vector<double> sim;                          // [rows x sentences]
  std::size_t sentences = 0;
  std::vector<std::size_t> video_offset;            // block starts, plus end
  std::vector<std::size_t> owner;                   // sentence -> video
  std::vector<std::vector<std::size_t>> positives;  // sentence -> rows of its block (local)

  std::size_t videos() const noexcept { return video_offset.empty() ? 0 : video_offset.size() - 1; }
  std::size_t rows() const noexcept { return video_offset.empty() ? 0 : video_offset.back(); }
  std::size_t block_size(std::size_t v) const { return video_offset[v + 1] - video_offset[v]; }
  bool skipped(std::size_t s) const { return positives[s].empty(); }
  std::size_t skipped_count() const {
    std::size_t n = 0;
    for (std::size_t s = 0; s < sentences; ++s) n += skipped(s) ? 1 : 0;
    return n;
  }

  double at(std::size_t v, std::size_t local, std::size_t s) const {
    return sim[(video_offset[v] + local) * sentences + s];
  }
  std::size_t index(std::size_t v, std::size_t local, std::size_t s) const {
    return (video_offset[v] + local) * sentences + s;
  }

  // Column s restricted to video v's block.
  std::vector<double> column(std::size_t v, std::size_t s) const {
    std::vector<double> out(block_size(v));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(v, i, s);
    return out;
  }

  void validate() const {
    if (video_offset.empty() || video_offset.front() != 0) throw ContractError("bad video offsets");
    if (sim.size() != rows() * sentences) throw DimensionError("similarity matrix size mismatch");
    if (owner.size() != sentences || positives.size() != sentences) {
      throw DimensionError("owner/positive maps must cover every sentence");
    }
    for (std::size_t s = 0; s < sentences; ++s) {
      if (owner[s] >= videos()) throw ContractError("sentence owner out of range");
      for (std::size_t p : positives[s])
        if (p >= block_size(owner[s])) throw ContractError("positive index out of range");
    }
  }
};

namespace detail {

inline std::vector<std::size_t> negatives_of(const BatchScores& b, std::size_t s) {
  const std::size_t v = b.owner[s];
  std::vector<bool> is_pos(b.block_size(v), false);
  for (std::size_t p : b.positives[s]) is_pos[p] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < is_pos.size(); ++i)
    if (!is_pos[i]) out.push_back(i);
  return out;
}

inline double* slot(std::vector<double>* g, std::size_t i) { return g ? &(*g)[i] : nullptr; }

inline void prepare(const BatchScores& b, std::vector<double>* grad) {
  b.validate();
  if (grad && grad->size() != b.sim.size()) grad->assign(b.sim.size(), 0.0);
}

}  // namespace detail

// Sum over sentences, positives and same-video negatives of
// [alpha - S(m, s) + S(m-, s)]_+. `grad` accumulates dL/dsim.
inline double intra_loss_sum(const BatchScores& b, double alpha, std::vector<double>* grad = nullptr,
                             BranchLog* log = nullptr) {
  detail::prepare(b, grad);
  double total = 0.0;
  for (std::size_t s = 0; s < b.sentences; ++s) {
    if (b.skipped(s)) continue;
    const std::size_t v = b.owner[s];
    const auto negatives = detail::negatives_of(b, s);
    for (std::size_t p : b.positives[s]) {
      for (std::size_t n : negatives) {
        total += detail::hinge(alpha, b.at(v, p, s), b.at(v, n, s), detail::slot(grad, b.index(v, p, s)),
                               detail::slot(grad, b.index(v, n, s)), log);
      }
    }
  }
  return total;
}

// Per (sentence, positive), one hinge against the hardest same-video
// negative; ties go to the lowest candidate index.
inline double intra_loss_max(const BatchScores& b, double alpha, std::vector<double>* grad = nullptr,
                             BranchLog* log = nullptr) {
  detail::prepare(b, grad);
  double total = 0.0;
  for (std::size_t s = 0; s < b.sentences; ++s) {
    if (b.skipped(s)) continue;
    const std::size_t v = b.owner[s];
    const auto negatives = detail::negatives_of(b, s);
    if (negatives.empty()) continue;
    const std::size_t hard = detail::hardest(negatives, [&](std::size_t i) { return b.at(v, i, s); }, log);
    for (std::size_t p : b.positives[s]) {
      total += detail::hinge(alpha, b.at(v, p, s), b.at(v, hard, s), detail::slot(grad, b.index(v, p, s)),
                             detail::slot(grad, b.index(v, hard, s)), log);
    }
  }
  return total;
}

// Video-sentence relevance for every (in-batch video, in-batch sentence).
struct RelevanceMatrix {
  std::size_t videos = 0;
  std::size_t sentences = 0;
  std::vector<double> r;  // [videos x sentences]
  std::vector<std::size_t> owner;
  std::vector<bool> skipped;

  double at(std::size_t v, std::size_t s) const { return r[v * sentences + s]; }
};

// Hinge terms on a relevance matrix. For every non-skipped sentence s of
// video v: negatives v- are the other batch videos and negatives s- the
// batch sentences not annotated on v. `grad` accumulates dL/dR.
inline double video_hinges(const RelevanceMatrix& rel, double alpha, Variant variant,
                           std::vector<double>* grad = nullptr, BranchLog* log = nullptr) {
  if (grad && grad->size() != rel.r.size()) grad->assign(rel.r.size(), 0.0);
  if (rel.videos < 2) {
    log::warn("event", "no_negative_videos", "detail", "video-level loss needs at least two videos");
    return 0.0;
  }
  double total = 0.0;
  for (std::size_t s = 0; s < rel.sentences; ++s) {
    if (rel.skipped[s]) continue;
    const std::size_t v = rel.owner[s];
    std::vector<std::size_t> neg_videos, neg_sentences;
    for (std::size_t u = 0; u < rel.videos; ++u)
      if (u != v) neg_videos.push_back(u);
    for (std::size_t t = 0; t < rel.sentences; ++t)
      if (rel.owner[t] != v) neg_sentences.push_back(t);
    const std::size_t pos = v * rel.sentences + s;
    if (variant == Variant::kSum) {
      for (std::size_t u : neg_videos) {
        total += detail::hinge(alpha, rel.r[pos], rel.at(u, s), detail::slot(grad, pos),
                               detail::slot(grad, u * rel.sentences + s), log);
      }
      for (std::size_t t : neg_sentences) {
        total += detail::hinge(alpha, rel.r[pos], rel.at(v, t), detail::slot(grad, pos),
                               detail::slot(grad, v * rel.sentences + t), log);
      }
    } else {
      const std::size_t hv =
          detail::hardest(neg_videos, [&](std::size_t u) { return rel.at(u, s); }, log);
      total += detail::hinge(alpha, rel.r[pos], rel.at(hv, s), detail::slot(grad, pos),
                             detail::slot(grad, hv * rel.sentences + s), log);
      if (!neg_sentences.empty()) {
        const std::size_t hs =
            detail::hardest(neg_sentences, [&](std::size_t t) { return rel.at(v, t); }, log);
        total += detail::hinge(alpha, rel.r[pos], rel.at(v, hs), detail::slot(grad, pos),
                               detail::slot(grad, v * rel.sentences + hs), log);
      }
    }
  }
  return total;
}

// Relevance of every batch video to every batch sentence; `weights`
// receives dR(v,s)/dS for each entry of b.sim (row-aligned with sim).
inline RelevanceMatrix relevance_matrix(const BatchScores& b, double beta, Pooling pooling,
                                        std::vector<double>* weights = nullptr) {
  RelevanceMatrix rel;
  rel.videos = b.videos();
  rel.sentences = b.sentences;
  rel.r.resize(rel.videos * rel.sentences);
  rel.owner = b.owner;
  rel.skipped.resize(b.sentences);
  for (std::size_t s = 0; s < b.sentences; ++s) rel.skipped[s] = b.skipped(s);
  if (weights) weights->assign(b.sim.size(), 0.0);
  std::vector<double> w;
  for (std::size_t v = 0; v < rel.videos; ++v) {
    for (std::size_t s = 0; s < b.sentences; ++s) {
      const std::vector<double> col = b.column(v, s);
      const double r = pooling == Pooling::kLogSumExp ? relevance(col, beta, weights ? &w : nullptr)
                                                      : average_relevance(col, weights ? &w : nullptr);
      rel.r[v * rel.sentences + s] = r;
      if (weights)
        for (std::size_t i = 0; i < col.size(); ++i) (*weights)[b.index(v, i, s)] = w[i];
    }
  }
  return rel;
}

namespace detail {

inline double video_loss(const BatchScores& b, double alpha, double beta, Pooling pooling,
                         Variant variant, std::vector<double>* grad, BranchLog* log) {
  prepare(b, grad);
  std::vector<double> weights;
  const RelevanceMatrix rel = relevance_matrix(b, beta, pooling, grad ? &weights : nullptr);
  std::vector<double> grad_r;
  const double value = video_hinges(rel, alpha, variant, grad ? &grad_r : nullptr, log);
  if (grad) {
    for (std::size_t v = 0; v < rel.videos; ++v) {
      for (std::size_t s = 0; s < b.sentences; ++s) {
        const double g = grad_r[v * b.sentences + s];
        if (g == 0.0) continue;
        for (std::size_t i = 0; i < b.block_size(v); ++i) {
          const std::size_t idx = b.index(v, i, s);
          (*grad)[idx] += g * weights[idx];
        }
      }
    }
  }
  return value;
}

}  // namespace detail

inline double video_loss_sum(const BatchScores& b, double alpha, double beta,
                             Pooling pooling = Pooling::kLogSumExp, std::vector<double>* grad = nullptr,
                             BranchLog* log = nullptr) {
  return detail::video_loss(b, alpha, beta, pooling, Variant::kSum, grad, log);
}

// Hardest negative video and hardest negative sentence per positive pair;
// ties go to the lowest batch index.
inline double video_loss_max(const BatchScores& b, double alpha, double beta,
                             Pooling pooling = Pooling::kLogSumExp, std::vector<double>* grad = nullptr,
                             BranchLog* log = nullptr) {
  return detail::video_loss(b, alpha, beta, pooling, Variant::kMax, grad, log);
}

struct LossReport {
  double intra = 0.0;
  double video = 0.0;
  double reg = 0.0;  // squared Frobenius norm of the regularized weights
  double total = 0.0;
  std::size_t skipped_sentences = 0;
};

// total = intra + lambda1 * video + alpha_reg * reg
inline LossReport total_loss(double intra, double video, double reg, double lambda1, double alpha_reg,
                             std::size_t skipped = 0) {
  for (double v : {intra, video, reg, lambda1, alpha_reg}) {
    if (!std::isfinite(v)) throw NumericError("non-finite loss component");
  }
  LossReport r;
  r.intra = intra;
  r.video = video;
  r.reg = reg;
  r.total = intra + lambda1 * video + alpha_reg * reg;
  r.skipped_sentences = skipped;
  return r;
}

struct LossConfig {
  Variant variant = Variant::kSum;
  Pooling pooling = Pooling::kLogSumExp;
  LossTerms terms = LossTerms::kProposed;
  double alpha_intra = 0.05;
  double alpha_video = 0.20;
  double beta = 10.0;
  double lambda1 = 5.0;
  double alpha_reg = 5e-5;

  double intra_weight() const { return terms == LossTerms::kVideo ? 0.0 : 1.0; }
  double video_weight() const { return terms == LossTerms::kIntra ? 0.0 : lambda1; }
};

template <typename Real>
struct RecordedLoss {
  Var total;
  LossReport report;
};

// Records the full objective on the tape: the chosen intra/video hinges on
// the similarity matrix `sim` (laid out as in `layout`, whose own `sim` is
// ignored) plus the weight regularizer.
template <typename Real>
RecordedLoss<Real> record_loss(Tape<Real>& tape, Var sim, const BatchScores& layout,
                               const BoundParams<Real>& bound, const LossConfig& cfg) {
  BatchScores scores = layout;
  const Tensor<Real>& sv = tape.value(sim);
  scores.sim.assign(sv.storage().begin(), sv.storage().end());

  BranchLog blog;
  BranchLog* lp = tape.tracking() ? &blog : nullptr;
  std::vector<double> g_intra, g_video;
  const bool max = cfg.variant == Variant::kMax;
  const double intra = max ? intra_loss_max(scores, cfg.alpha_intra, &g_intra, lp)
                           : intra_loss_sum(scores, cfg.alpha_intra, &g_intra, lp);
  const double video = max ? video_loss_max(scores, cfg.alpha_video, cfg.beta, cfg.pooling, &g_video, lp)
                           : video_loss_sum(scores, cfg.alpha_video, cfg.beta, cfg.pooling, &g_video, lp);
  if (lp) {
    tape.note_kink(blog.margin);
    tape.note_branch(blog.hash);
  }
  const double wi = cfg.intra_weight(), wv = cfg.video_weight();
  std::vector<double> g(scores.sim.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = wi * g_intra[i] + wv * g_video[i];

  const Var hinge = tape.record_scalar(wi * intra + wv * video,
                                       [sim, g](Tape<Real>& t, std::size_t self) {
                                  const double up = t.grad_buffer(self)[0];
                                  auto& ds = t.grad_buffer(sim);
                                  for (std::size_t i = 0; i < g.size(); ++i) {
                                    ds[i] += static_cast<Real>(up * g[i]);
                                  }
                                });
  const Var reg = sum_squares(tape, bound.weights());
  const Var total = add(tape, hinge, scale(tape, reg, cfg.alpha_reg));

  RecordedLoss<Real> out;
  out.total = total;
  out.report = total_loss(intra, video, tape.scalar(reg),
                          cfg.video_weight(), cfg.alpha_reg, scores.skipped_count());
  out.report.total = wi * intra + wv * video + cfg.alpha_reg * out.report.reg;
  return out;
}

}  // namespace hman
