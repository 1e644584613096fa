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
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "hman/binary_io.hpp"
#include "hman/geometry.hpp"
#include "hman/random.hpp"
#include "json.hpp"

namespace hman {

enum class Split { kTrain, kTest };

inline std::string to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

struct Annotation {
  std::string sentence_id;
  std::vector<float> feature;     // [sentence_dim]
  std::vector<MomentSpan> spans;  // one per annotator, base units

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Video {
  std::string id;
  std::size_t clips = 0;
  std::vector<float> features;  // [clip_dim x clips], channel-major
  std::vector<Annotation> annotations;
  Split split = Split::kTrain;

  friend bool operator==(const Video&, const Video&) = default;
};

// Videos with clip features and temporally annotated sentence features.
struct Corpus {
  std::size_t clip_dim = 0;
  std::size_t sentence_dim = 0;
  double clip_seconds = 1.0;
  double unit_seconds = 1.0;
  std::vector<Video> videos;

  std::size_t sentence_count() const {
    std::size_t n = 0;
    for (const auto& v : videos) n += v.annotations.size();
    return n;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

using SyntheticCorpus = Corpus;

// Clip matrix of one video as a tensor, fitted to `length` columns.
template <typename Real>
Tensor<Real> clip_tensor(const Corpus& corpus, const Video& video, std::size_t length) {
  Tensor<Real> raw(Shape{corpus.clip_dim, video.clips});
  for (std::size_t i = 0; i < video.features.size(); ++i) raw[i] = static_cast<Real>(video.features[i]);
  return fit_length(raw, length);
}

enum class SpanSource { kOnGrid, kUniform };

inline SpanSource parse_span_source(const std::string& s) {
  if (s == "on-grid" || s == "grid") return SpanSource::kOnGrid;
  if (s == "uniform") return SpanSource::kUniform;
  throw ConfigError("span source must be 'on-grid' or 'uniform', got '" + s + "'");
}

struct SyntheticSpec {
  std::size_t n_videos = 40;
  std::size_t sentences_per_video = 2;
  std::size_t clip_dim = 32;
  std::size_t sentence_dim = 32;
  std::size_t concept_dim = 8;
  double noise_sigma = 0.1;
  SpanSource span_source = SpanSource::kOnGrid;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  DatasetProfile profile = profiles::didemo();
  std::size_t max_span_retries = 1000;
};

namespace detail {

inline std::vector<double> gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  std::vector<double> m(rows * cols);
  for (double& v : m) v = rng.normal() * scale;
  return m;
}

inline std::vector<double> gaussian_vector(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// out = A g + B u (+ noise), A and B [rows x p].
inline std::vector<float> mix(const std::vector<double>& a, const std::vector<double>& g,
                              const std::vector<double>& b, const std::vector<double>& u,
                              std::size_t rows, double sigma, Rng& rng) {
  const std::size_t p = g.size();
  std::vector<float> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < p; ++k) s += a[r * p + k] * g[k] + b[r * p + k] * u[k];
    if (sigma > 0.0) s += sigma * rng.normal();
    out[r] = static_cast<float>(s);
  }
  return out;
}

inline bool overlaps(const MomentSpan& a, const MomentSpan& b) {
  return std::min(a.end_unit, b.end_unit) > std::max(a.start_unit, b.start_unit);
}

}  // namespace detail

// Assigns train/test tags at the video level: a seeded permutation puts
// round(test_fraction * n) videos in the test split.
inline void assign_split(Corpus& corpus, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ContractError(detail::concat("test fraction must be in (0, 1), got ", test_fraction));
  }
  const std::size_t n = corpus.videos.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::derive(seed, 0x5117);
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i) {
    corpus.videos[order[i]].split = i < n_test ? Split::kTest : Split::kTrain;
  }
}

// Videos of one split, in corpus order.
inline Corpus subset(const Corpus& corpus, Split which) {
  Corpus out = corpus;
  out.videos.clear();
  for (const auto& v : corpus.videos)
    if (v.split == which) out.videos.push_back(v);
  return out;
}

inline std::pair<Corpus, Corpus> split(const Corpus& corpus, double test_fraction, std::uint64_t seed) {
  Corpus tagged = corpus;
  assign_split(tagged, test_fraction, seed);
  return {subset(tagged, Split::kTrain), subset(tagged, Split::kTest)};
}

// Planted-structure corpus. Each video has a global concept g and a
// background concept; each annotation a local concept u. Fixed random maps
// A, B (to clip space) and C, D (to sentence space) give
//   clip     = A g + B u_clip + noise   (u_clip: the annotation covering the
//                                        clip, else the background concept)
//   sentence = C g + D u     + noise
inline Corpus generate_corpus(const SyntheticSpec& spec) {
  if (spec.n_videos == 0 || spec.sentences_per_video == 0 || spec.clip_dim == 0 ||
      spec.sentence_dim == 0 || spec.concept_dim == 0) {
    throw ContractError("synthetic spec counts must be positive");
  }
  if (!(spec.noise_sigma >= 0.0)) throw ContractError("noise_sigma must be >= 0");
  const DatasetProfile& profile = spec.profile;
  const CandidateSet candidates = enumerate_candidates(profile);
  const int base = static_cast<int>(profile.base_length());
  const double unit = profile.unit_seconds();
  const std::size_t p = spec.concept_dim;

  Rng rng(spec.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p));
  const auto map_a = detail::gaussian_matrix(rng, spec.clip_dim, p, scale);
  const auto map_b = detail::gaussian_matrix(rng, spec.clip_dim, p, scale);
  const auto map_c = detail::gaussian_matrix(rng, spec.sentence_dim, p, scale);
  const auto map_d = detail::gaussian_matrix(rng, spec.sentence_dim, p, scale);

  Corpus corpus;
  corpus.clip_dim = spec.clip_dim;
  corpus.sentence_dim = spec.sentence_dim;
  corpus.clip_seconds = profile.clip_seconds;
  corpus.unit_seconds = unit;

  auto draw_span = [&]() {
    if (spec.span_source == SpanSource::kOnGrid) return candidates[rng.below(candidates.size())].span;
    const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(base)));
    const int end = start + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(base - start)));
    return MomentSpan(start, end, unit);
  };

  for (std::size_t vi = 0; vi < spec.n_videos; ++vi) {
    Video video;
    char id[32];
    std::snprintf(id, sizeof(id), "v%05zu", vi);
    video.id = id;
    video.clips = profile.input_clips;
    const auto global = detail::gaussian_vector(rng, p);
    const auto background = detail::gaussian_vector(rng, p);

    // A collision redraws the whole set so an early wide span cannot block
    // the rest.
    std::vector<MomentSpan> spans;
    for (std::size_t tries = 0;; ++tries) {
      if (tries > spec.max_span_retries) {
        throw ContractError(detail::concat("could not place ", spec.sentences_per_video,
                                           " disjoint spans in a video of ", base, " units"));
      }
      spans.clear();
      bool clash = false;
      while (!clash && spans.size() < spec.sentences_per_video) {
        const MomentSpan s = draw_span();
        for (const auto& o : spans) clash = clash || detail::overlaps(o, s);
        spans.push_back(s);
      }
      if (!clash) break;
    }

    std::vector<std::vector<double>> local;
    for (std::size_t j = 0; j < spans.size(); ++j) local.push_back(detail::gaussian_vector(rng, p));

    // Clip i lies in base unit i / pool_stride.
    video.features.assign(spec.clip_dim * video.clips, 0.0f);
    for (std::size_t c = 0; c < video.clips; ++c) {
      const int u = static_cast<int>(c / profile.pool_stride);
      const std::vector<double>* concept_u = &background;
      for (std::size_t j = 0; j < spans.size(); ++j) {
        if (u >= spans[j].start_unit && u < spans[j].end_unit) concept_u = &local[j];
      }
      const auto col = detail::mix(map_a, global, map_b, *concept_u, spec.clip_dim, spec.noise_sigma, rng);
      for (std::size_t r = 0; r < spec.clip_dim; ++r) video.features[r * video.clips + c] = col[r];
    }
    for (std::size_t j = 0; j < spans.size(); ++j) {
      Annotation a;
      a.sentence_id = video.id + "_s" + std::to_string(j);
      a.feature = detail::mix(map_c, global, map_d, local[j], spec.sentence_dim, spec.noise_sigma, rng);
      a.spans = {spans[j]};
      video.annotations.push_back(std::move(a));
    }
    corpus.videos.push_back(std::move(video));
  }
  assign_split(corpus, spec.test_fraction, spec.seed);
  return corpus;
}

// HMF1 feature container:
//   "HMF1" | u8 endianness tag (0x01 = little-endian) | u32 manifest length |
//   manifest (UTF-8 JSON) | float32 LE blocks in manifest order: per video
//   its [clip_dim x clips] matrix, then one [sentence_dim] vector per
//   annotation.
inline constexpr char kFeatureMagic[4] = {'H', 'M', 'F', '1'};
inline constexpr std::uint8_t kLittleEndianTag = 0x01;

inline std::string encode_features(const Corpus& corpus) {
  nlohmann::json manifest;
  manifest["clip_dim"] = corpus.clip_dim;
  manifest["sentence_dim"] = corpus.sentence_dim;
  manifest["clip_seconds"] = corpus.clip_seconds;
  manifest["unit_seconds"] = corpus.unit_seconds;
  manifest["videos"] = nlohmann::json::array();
  for (const auto& v : corpus.videos) {
    nlohmann::json jv;
    jv["id"] = v.id;
    jv["clips"] = v.clips;
    jv["split"] = to_string(v.split);
    jv["annotations"] = nlohmann::json::array();
    for (const auto& a : v.annotations) {
      nlohmann::json ja;
      ja["sentence_id"] = a.sentence_id;
      ja["spans"] = nlohmann::json::array();
      for (const auto& s : a.spans) {
        ja["spans"].push_back({{"start_unit", s.start_unit},
                               {"end_unit", s.end_unit},
                               {"start_seconds", s.start_seconds()},
                               {"end_seconds", s.end_seconds()}});
      }
      jv["annotations"].push_back(std::move(ja));
    }
    manifest["videos"].push_back(std::move(jv));
  }

  io::ByteWriter w;
  w.bytes(std::string_view(kFeatureMagic, 4));
  w.u8(kLittleEndianTag);
  w.prefixed(manifest.dump());
  for (const auto& v : corpus.videos) {
    if (v.features.size() != corpus.clip_dim * v.clips) {
      throw DimensionError("video '" + v.id + "' feature size does not match clip_dim x clips");
    }
    for (float f : v.features) w.f32(f);
    for (const auto& a : v.annotations) {
      if (a.feature.size() != corpus.sentence_dim) {
        throw DimensionError("sentence '" + a.sentence_id + "' feature size mismatch");
      }
      for (float f : a.feature) w.f32(f);
    }
  }
  return w.buffer();
}

inline Corpus decode_features(std::string_view data) {
  io::ByteReader r(data);
  const std::string_view magic = r.bytes(4, "magic");
  if (magic != std::string_view(kFeatureMagic, 4)) throw FormatError("bad magic, expected HMF1", 0);
  const std::uint8_t tag = r.u8();
  if (tag != kLittleEndianTag) {
    throw FormatError(detail::concat("unsupported endianness tag 0x", std::hex, int{tag},
                                     " (only 0x01 little-endian is accepted)"),
                      4);
  }
  const std::size_t manifest_at = r.offset();
  const std::string_view text = r.prefixed("manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), manifest_at + 4);
  }

  Corpus corpus;
  try {
    corpus.clip_dim = manifest.at("clip_dim").get<std::size_t>();
    corpus.sentence_dim = manifest.at("sentence_dim").get<std::size_t>();
    corpus.clip_seconds = manifest.at("clip_seconds").get<double>();
    corpus.unit_seconds = manifest.at("unit_seconds").get<double>();
    for (const auto& jv : manifest.at("videos")) {
      Video v;
      v.id = jv.at("id").get<std::string>();
      v.clips = jv.at("clips").get<std::size_t>();
      const std::string split = jv.value("split", std::string("train"));
      if (split != "train" && split != "test") throw ConfigError("unknown split '" + split + "'");
      v.split = split == "test" ? Split::kTest : Split::kTrain;
      for (const auto& ja : jv.at("annotations")) {
        Annotation a;
        a.sentence_id = ja.at("sentence_id").get<std::string>();
        for (const auto& js : ja.at("spans")) {
          a.spans.emplace_back(js.at("start_unit").get<int>(), js.at("end_unit").get<int>(),
                               corpus.unit_seconds);
        }
        if (a.spans.empty()) throw ContractError("annotation '" + a.sentence_id + "' has no spans");
        v.annotations.push_back(std::move(a));
      }
      corpus.videos.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is missing fields: ") + e.what(), manifest_at + 4);
  } catch (const ContractError& e) {
    throw FormatError(std::string("manifest is inconsistent: ") + e.what(), manifest_at + 4);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("manifest is inconsistent: ") + e.what(), manifest_at + 4);
  }

  for (auto& v : corpus.videos) {
    v.features.resize(corpus.clip_dim * v.clips);
    for (float& f : v.features) f = r.f32();
    for (auto& a : v.annotations) {
      a.feature.resize(corpus.sentence_dim);
      for (float& f : a.feature) f = r.f32();
    }
  }
  r.expect_end();
  return corpus;
}

inline void write_features(const std::string& path, const Corpus& corpus) {
  io::write_file(path, encode_features(corpus));
}

inline Corpus read_features(const std::string& path) { return decode_features(io::read_file(path)); }

}  // namespace hman
