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
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hman/corpus.hpp"
#include "hman/geometry.hpp"
#include "hman/model.hpp"
#include "hman/random.hpp"
#include "json.hpp"

namespace hman {

struct IndexEntry {
  std::string video_id;
  std::size_t candidate = 0;
  MomentSpan span;
};

// Unit-normalized candidate embeddings for a whole corpus. Rows are ordered
// by (video id, candidate index), so a row index doubles as the tie-break key.
template <typename Real>
struct CorpusIndex {
  std::size_t dim = 0;
  std::vector<Real> rows;  // row-major [size() x dim]
  std::vector<IndexEntry> entries;
  DatasetProfile profile;

  std::size_t size() const noexcept { return entries.size(); }
  std::span<const Real> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
};

namespace detail {

// Runs fn(i) for i in [0, n) on up to `threads` workers, each taking a
// contiguous block.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename Real>
void normalize_into(std::span<const Real> in, Real* out) {
  double sq = 0.0;
  for (Real v : in) sq += static_cast<double>(v) * v;
  const double n = std::sqrt(sq);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = n > 0.0 ? static_cast<Real>(in[i] / n) : Real{0};
}

}  // namespace detail

template <typename Real>
CorpusIndex<Real> build_index(const Corpus& corpus, const ModelParams<Real>& model, const DatasetProfile& profile,
                              std::size_t threads = 1) {
  if (corpus.videos.empty()) throw ContractError("cannot index an empty corpus");
  if (corpus.clip_dim != model.dims().clip_dim) {
    throw ConfigError(detail::concat("corpus clip dim ", corpus.clip_dim, " does not match model clip dim ",
                                     model.dims().clip_dim));
  }
  const CandidateSet cands = enumerate_candidates(profile);
  const std::size_t m = cands.size();
  const std::size_t d = model.dims().embed_dim;

  std::vector<std::size_t> order(corpus.videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return corpus.videos[a].id < corpus.videos[b].id; });

  CorpusIndex<Real> index;
  index.dim = d;
  index.profile = profile;
  index.rows.assign(order.size() * m * d, Real{0});
  index.entries.resize(order.size() * m);
  detail::parallel_for(order.size(), threads, [&](std::size_t slot) {
    const Video& v = corpus.videos[order[slot]];
    const Tensor<Real> emb = embed_moments(model, profile, clip_tensor<Real>(corpus, v, profile.input_clips));
    for (std::size_t c = 0; c < m; ++c) {
      const std::size_t r = slot * m + c;
      detail::normalize_into<Real>({emb.data().data() + c * d, d}, index.rows.data() + r * d);
      index.entries[r] = IndexEntry{v.id, c, cands[c].span};
    }
  });
  return index;
}

struct Hit {
  std::size_t row = 0;
  double score = 0.0;
};

// Hits in descending score; equal scores in ascending row order.
using Ranking = std::vector<Hit>;

// Exact top-k by cosine similarity. k larger than the index returns every row.
template <typename Real>
Ranking query_top_k(const CorpusIndex<Real>& index, std::span<const Real> query, std::size_t k,
                    std::size_t threads = 1) {
  if (k == 0) throw ContractError("k must be at least 1");
  if (query.size() != index.dim) {
    throw DimensionError(detail::concat("query has ", query.size(), " dims, index has ", index.dim));
  }
  std::vector<Real> q(index.dim);
  detail::normalize_into<Real>(query, q.data());

  const std::size_t n = index.size();
  Ranking all(n);
  constexpr std::size_t kBlock = 256;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  detail::parallel_for(blocks, threads, [&](std::size_t b) {
    for (std::size_t r = b * kBlock; r < std::min(n, (b + 1) * kBlock); ++r) {
      const Real* row = index.rows.data() + r * index.dim;
      double dot = 0.0;
      for (std::size_t j = 0; j < index.dim; ++j) dot += static_cast<double>(row[j]) * q[j];
      all[r] = Hit{r, dot};
    }
  });
  const auto before = [](const Hit& a, const Hit& b) {
    return a.score != b.score ? a.score > b.score : a.row < b.row;
  };
  k = std::min(k, n);
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), before);
  all.resize(k);
  return all;
}

struct GroundTruthEntry {
  std::string video_id;
  std::vector<MomentSpan> spans;
};

using GroundTruth = std::vector<GroundTruthEntry>;

// A retrieved moment is correct when it lies in the query's video and
// reaches IoU >= m with at least min(min_annotations, #spans) annotated
// spans.
inline bool is_correct(const IndexEntry& item, const GroundTruthEntry& gt, double iou_m,
                       std::size_t min_annotations) {
  if (item.video_id != gt.video_id) return false;
  const std::size_t need = std::max<std::size_t>(1, std::min(min_annotations, gt.spans.size()));
  std::size_t hits = 0;
  for (const auto& s : gt.spans)
    if (iou(item.span, s) >= iou_m) ++hits;
  return hits >= need;
}

// Rankings hold rows of `entries`.
inline double recall_at_k_iou(const std::vector<Ranking>& results, const std::vector<IndexEntry>& entries,
                              const GroundTruth& gt, std::size_t k, double iou_m, std::size_t min_annotations) {
  if (results.size() != gt.size()) throw ContractError("results and ground truth differ in query count");
  if (results.empty()) return 0.0;
  std::size_t good = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const std::size_t n = std::min(k, results[q].size());
    for (std::size_t i = 0; i < n; ++i) {
      if (is_correct(entries[results[q][i].row], gt[q], iou_m, min_annotations)) {
        ++good;
        break;
      }
    }
  }
  return static_cast<double>(good) / static_cast<double>(results.size());
}

// Rank of the first correct item per query, or total_moments + 1 when none
// is correct. Rankings should be complete so the sentinel is meaningful.
inline std::vector<std::size_t> first_correct_ranks(const std::vector<Ranking>& results,
                                                    const std::vector<IndexEntry>& entries, const GroundTruth& gt,
                                                    double iou_m, std::size_t min_annotations,
                                                    std::size_t total_moments) {
  if (results.size() != gt.size()) throw ContractError("results and ground truth differ in query count");
  std::vector<std::size_t> ranks;
  for (std::size_t q = 0; q < results.size(); ++q) {
    std::size_t rank = total_moments + 1;
    for (std::size_t i = 0; i < results[q].size(); ++i) {
      if (is_correct(entries[results[q][i].row], gt[q], iou_m, min_annotations)) {
        rank = i + 1;
        break;
      }
    }
    ranks.push_back(rank);
  }
  return ranks;
}

inline double median_of(std::vector<std::size_t> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  if (v.size() % 2 == 1) return static_cast<double>(v[h]);
  return 0.5 * (static_cast<double>(v[h - 1]) + static_cast<double>(v[h]));
}

inline double median_rank(const std::vector<Ranking>& results, const std::vector<IndexEntry>& entries,
                          const GroundTruth& gt, double iou_m, std::size_t min_annotations,
                          std::size_t total_moments) {
  return median_of(first_correct_ranks(results, entries, gt, iou_m, min_annotations, total_moments));
}

inline GroundTruth ground_truth_of(const Corpus& corpus) {
  GroundTruth gt;
  for (const auto& v : corpus.videos)
    for (const auto& a : v.annotations) gt.push_back({v.id, a.spans});
  return gt;
}

// Candidate indices ordered by how many training annotations name exactly
// that span, then by how many they are a positive for (IoU >= 0.5 with any
// annotated span); remaining ties by index.
inline std::vector<std::size_t> moment_frequency_prior(const GroundTruth& train, const DatasetProfile& profile) {
  const CandidateSet cands = enumerate_candidates(profile);
  std::vector<std::size_t> exact(cands.size(), 0), near(cands.size(), 0);
  for (const auto& g : train) {
    std::vector<bool> hit(cands.size(), false), same(cands.size(), false);
    for (const auto& s : g.spans) {
      for (std::size_t i : positives_for(s, cands, 0.5)) hit[i] = true;
      for (std::size_t i : positives_for(s, cands, 1.0)) same[i] = true;
    }
    for (std::size_t i = 0; i < hit.size(); ++i) {
      near[i] += hit[i] ? 1 : 0;
      exact[i] += same[i] ? 1 : 0;
    }
  }
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return exact[a] != exact[b] ? exact[a] > exact[b] : near[a] > near[b];
  });
  return order;
}

// The single corpus-wide ranking the prior hands to every query: spans in
// prior order, and within each span the videos in a seeded random order.
template <typename Real>
Ranking prior_ranking(const CorpusIndex<Real>& index, const std::vector<std::size_t>& span_order,
                      std::uint64_t seed) {
  const std::size_t m = enumerate_candidates(index.profile).size();
  const std::size_t videos = index.size() / m;
  Ranking out;
  out.reserve(index.size());
  for (std::size_t rank = 0; rank < span_order.size(); ++rank) {
    std::vector<std::size_t> vids(videos);
    std::iota(vids.begin(), vids.end(), std::size_t{0});
    Rng rng = Rng::derive(seed, 0x9a1, rank);
    rng.shuffle(vids);
    for (std::size_t v : vids) out.push_back(Hit{v * m + span_order[rank], 0.0});
  }
  return out;
}

struct EvalSettings {
  std::vector<std::size_t> ks{10, 100};
  std::vector<double> ious{0.5, 0.7};
  std::size_t min_annotations = 1;
  std::size_t threads = 1;
};

struct RecallCell {
  std::size_t k = 0;
  double iou = 0.0;
  double value = 0.0;
};

struct MedianCell {
  double iou = 0.0;
  double value = 0.0;
};

struct EvalReport {
  std::string method;
  std::size_t queries = 0;
  std::size_t moments = 0;
  std::vector<RecallCell> recall;
  std::vector<MedianCell> median_rank;

  double r_at(std::size_t k, double m) const {
    for (const auto& c : recall)
      if (c.k == k && c.iou == m) return c.value;
    throw ContractError(detail::concat("report has no R@", k, " IoU=", m, " cell"));
  }
  double mr_at(double m) const {
    for (const auto& c : median_rank)
      if (c.iou == m) return c.value;
    throw ContractError(detail::concat("report has no MR IoU=", m, " cell"));
  }

  friend bool operator==(const EvalReport& a, const EvalReport& b) {
    auto same_r = [](const RecallCell& x, const RecallCell& y) {
      return x.k == y.k && x.iou == y.iou && x.value == y.value;
    };
    auto same_m = [](const MedianCell& x, const MedianCell& y) { return x.iou == y.iou && x.value == y.value; };
    return a.method == b.method && a.queries == b.queries && a.moments == b.moments &&
           std::equal(a.recall.begin(), a.recall.end(), b.recall.begin(), b.recall.end(), same_r) &&
           std::equal(a.median_rank.begin(), a.median_rank.end(), b.median_rank.begin(), b.median_rank.end(),
                      same_m);
  }
};

inline EvalReport score_rankings(std::string method, const std::vector<Ranking>& results,
                                 const std::vector<IndexEntry>& entries, const GroundTruth& gt,
                                 const EvalSettings& settings) {
  EvalReport r;
  r.method = std::move(method);
  r.queries = gt.size();
  r.moments = entries.size();
  for (double m : settings.ious)
    for (std::size_t k : settings.ks)
      r.recall.push_back({k, m, recall_at_k_iou(results, entries, gt, k, m, settings.min_annotations)});
  for (double m : settings.ious)
    r.median_rank.push_back({m, median_rank(results, entries, gt, m, settings.min_annotations, entries.size())});
  return r;
}

// Indexes every video of `corpus` and ranks it for every annotation.
template <typename Real>
EvalReport evaluate(const ModelParams<Real>& model, const Corpus& corpus, const DatasetProfile& profile,
                    const EvalSettings& settings, std::string method = "hman") {
  const CorpusIndex<Real> index = build_index(corpus, model, profile, settings.threads);
  const GroundTruth gt = ground_truth_of(corpus);
  if (corpus.sentence_dim != model.dims().sentence_dim) {
    throw ConfigError("corpus sentence dim does not match the model");
  }
  Tensor<Real> sentences(Shape{gt.size(), corpus.sentence_dim});
  std::size_t q = 0;
  for (const auto& v : corpus.videos) {
    for (const auto& a : v.annotations) {
      for (std::size_t j = 0; j < a.feature.size(); ++j)
        sentences[q * corpus.sentence_dim + j] = static_cast<Real>(a.feature[j]);
      ++q;
    }
  }
  const Tensor<Real> emb = embed_sentences(model, sentences);
  const std::size_t d = model.dims().embed_dim;
  std::vector<Ranking> results(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    results[i] = query_top_k<Real>(index, {emb.data().data() + i * d, d}, index.size(), settings.threads);
  }
  return score_rankings(std::move(method), results, index.entries, gt, settings);
}

// Moment-frequency-prior baseline: span statistics from `train`, applied to
// every annotation of `test`.
inline EvalReport evaluate_prior(const Corpus& train, const Corpus& test, const DatasetProfile& profile,
                                 const EvalSettings& settings, std::uint64_t seed) {
  if (test.videos.empty()) throw ContractError("cannot evaluate an empty corpus");
  CorpusIndex<float> layout;
  layout.profile = profile;
  const CandidateSet cands = enumerate_candidates(profile);
  std::vector<std::size_t> order(test.videos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return test.videos[a].id < test.videos[b].id; });
  for (std::size_t v : order)
    for (std::size_t c = 0; c < cands.size(); ++c) layout.entries.push_back({test.videos[v].id, c, cands[c].span});

  const Ranking ranking = prior_ranking(layout, moment_frequency_prior(ground_truth_of(train), profile), seed);
  const GroundTruth gt = ground_truth_of(test);
  const std::vector<Ranking> results(gt.size(), ranking);
  return score_rankings("prior", results, layout.entries, gt, settings);
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json recall = nlohmann::json::array();
  for (const auto& c : r.recall) recall.push_back({{"k", c.k}, {"iou", c.iou}, {"value", c.value}});
  nlohmann::json mr = nlohmann::json::array();
  for (const auto& c : r.median_rank) mr.push_back({{"iou", c.iou}, {"value", c.value}});
  return {{"method", r.method}, {"queries", r.queries}, {"moments", r.moments}, {"recall", recall},
          {"median_rank", mr}};
}

inline std::string report_table(const std::vector<EvalReport>& reports) {
  if (reports.empty()) return "";
  std::ostringstream out;
  out << std::left << std::setw(12) << "method";
  for (const auto& c : reports.front().recall) {
    std::ostringstream h;
    h << "R@" << c.k << "/" << c.iou;
    out << std::right << std::setw(12) << h.str();
  }
  for (const auto& c : reports.front().median_rank) {
    std::ostringstream h;
    h << "MR/" << c.iou;
    out << std::right << std::setw(10) << h.str();
  }
  out << '\n';
  for (const auto& r : reports) {
    out << std::left << std::setw(12) << r.method << std::right << std::fixed;
    for (const auto& c : r.recall) out << std::setw(12) << std::setprecision(4) << c.value;
    for (const auto& c : r.median_rank) out << std::setw(10) << std::setprecision(1) << c.value;
    out << '\n';
  }
  out << "queries=" << reports.front().queries << " moments=" << reports.front().moments << '\n';
  return out.str();
}

}  // namespace hman
