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
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hman/errors.hpp"
#include "hman/ops.hpp"
#include "hman/tensor.hpp"
#include "json.hpp"

namespace hman {

// Half-open interval [start_unit, end_unit) of base time units.
struct MomentSpan {
  int start_unit = 0;
  int end_unit = 1;
  double unit_seconds = 1.0;

  MomentSpan() = default;
  MomentSpan(int start, int end, double unit)
      : start_unit(start), end_unit(end), unit_seconds(unit) {
    if (start < 0 || end <= start) {
      throw ContractError(detail::concat("invalid span [", start, ",", end, ")"));
    }
    if (!(unit > 0.0)) throw ContractError("span unit_seconds must be positive");
  }

  int length() const noexcept { return end_unit - start_unit; }
  double start_seconds() const noexcept { return start_unit * unit_seconds; }
  double end_seconds() const noexcept { return end_unit * unit_seconds; }
  double seconds() const noexcept { return length() * unit_seconds; }

  friend bool operator==(const MomentSpan&, const MomentSpan&) = default;
};

inline double iou(const MomentSpan& a, const MomentSpan& b) {
  if (a.unit_seconds != b.unit_seconds) {
    throw UnitError(detail::concat("iou of spans with unit ", a.unit_seconds,
                                   "s and ", b.unit_seconds, "s"));
  }
  const int inter = std::min(a.end_unit, b.end_unit) - std::max(a.start_unit, b.start_unit);
  if (inter <= 0) return 0.0;
  const int uni = std::max(a.end_unit, b.end_unit) - std::min(a.start_unit, b.start_unit);
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// One temporal conv layer of the moment encoder. `dim` is the declared
// output length and must follow from the previous layer's length.
struct LayerSpec {
  std::size_t kernel = 2;
  std::size_t stride = 1;
  std::size_t dim = 1;
};

// Extra conv over one stack layer yielding overlapping candidates
// (`window` units wide, every `stride` units).
struct BranchSpec {
  std::size_t source_layer = 0;
  std::size_t window = 3;
  std::size_t stride = 1;
};

// Geometry recipe: clip count, pooling to the base length, conv stack and
// which layers contribute candidates.
struct DatasetProfile {
  std::string name;
  std::size_t input_clips = 12;
  double clip_seconds = 2.5;
  std::size_t pool_window = 2;
  std::size_t pool_stride = 2;
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> used_layers;
  std::optional<BranchSpec> branch;
  // Declared candidate count; enumeration fails if the arithmetic disagrees.
  std::optional<std::size_t> expected_candidates;

  std::size_t base_length() const {
    return conv_output_length(input_clips, pool_window, pool_stride);
  }
  double unit_seconds() const { return clip_seconds * static_cast<double>(pool_stride); }
};

namespace profiles {

// 12 clips of 2.5 s pooled to 6 units of 5 s; stride-1 stack {6,5,4,3,2,1}.
inline DatasetProfile didemo() {
  DatasetProfile p;
  p.name = "didemo";
  p.input_clips = 12;
  p.clip_seconds = 2.5;
  p.pool_window = 2;
  p.pool_stride = 2;
  p.layers = {{1, 1, 6}, {2, 1, 5}, {2, 1, 4}, {2, 1, 3}, {2, 1, 2}, {2, 1, 1}};
  p.used_layers = {0, 1, 2, 3, 4, 5};
  p.expected_candidates = 21;
  return p;
}

// 64 clips of 1 s pooled to 32 units of 2 s; halving stack
// {32,16,8,4,2,1} with the last five layers used, plus a 3-unit
// (6 s) stride-1 (2 s) branch over the first layer.
inline DatasetProfile charades() {
  DatasetProfile p;
  p.name = "charades";
  p.input_clips = 64;
  p.clip_seconds = 1.0;
  p.pool_window = 2;
  p.pool_stride = 2;
  p.layers = {{1, 1, 32}, {2, 2, 16}, {2, 2, 8}, {2, 2, 4}, {2, 2, 2}, {2, 2, 1}};
  p.used_layers = {1, 2, 3, 4, 5};
  p.branch = BranchSpec{0, 3, 1};
  p.expected_candidates = 61;
  return p;
}

// 512 clips of 1 s, no pooling; halving stack {512,...,1}.
inline DatasetProfile activitynet() {
  DatasetProfile p;
  p.name = "activitynet";
  p.input_clips = 512;
  p.clip_seconds = 1.0;
  p.pool_window = 1;
  p.pool_stride = 1;
  p.layers = {{1, 1, 512}};
  for (std::size_t d = 256; d >= 1; d /= 2) p.layers.push_back({2, 2, d});
  for (std::size_t i = 0; i < p.layers.size(); ++i) p.used_layers.push_back(i);
  p.expected_candidates = 1023;
  return p;
}

// Small stride-1 stack for fast tests: 8 clips pooled to 4 units, 10 candidates.
inline DatasetProfile toy() {
  DatasetProfile p;
  p.name = "toy";
  p.input_clips = 8;
  p.clip_seconds = 1.0;
  p.pool_window = 2;
  p.pool_stride = 2;
  p.layers = {{1, 1, 4}, {2, 1, 3}, {2, 1, 2}, {2, 1, 1}};
  p.used_layers = {0, 1, 2, 3};
  p.expected_candidates = 10;
  return p;
}

inline std::vector<std::string> names() { return {"didemo", "charades", "activitynet", "toy"}; }

inline DatasetProfile by_name(const std::string& name) {
  if (name == "didemo") return didemo();
  if (name == "charades") return charades();
  if (name == "activitynet") return activitynet();
  if (name == "toy") return toy();
  throw ConfigError("unknown profile '" + name + "'");
}

}  // namespace profiles

struct Candidate {
  std::size_t layer = 0;  // stack layer, or layers.size() for the branch
  std::size_t index = 0;
  MomentSpan span;
  bool branch = false;
};

// Candidates in layer-major order (used stack layers ascending, then the
// branch), each with the base-unit receptive field of its activation.
struct CandidateSet {
  std::vector<Candidate> items;

  std::size_t size() const noexcept { return items.size(); }
  const Candidate& operator[](std::size_t i) const { return items[i]; }
};

// Checks the layer arithmetic and returns the length of every stack layer.
inline std::vector<std::size_t> validate_profile(const DatasetProfile& profile) {
  if (profile.layers.empty()) throw GeometryError("profile '" + profile.name + "' has no layers");
  if (!(profile.clip_seconds > 0.0)) throw GeometryError("clip_seconds must be positive");
  std::vector<std::size_t> lengths;
  std::size_t len = profile.base_length();
  for (std::size_t k = 0; k < profile.layers.size(); ++k) {
    const LayerSpec& layer = profile.layers[k];
    len = conv_output_length(len, layer.kernel, layer.stride);
    if (len != layer.dim) {
      throw GeometryError(detail::concat("profile '", profile.name, "' layer ", k,
                                         " declares dim ", layer.dim, " but kernel ",
                                         layer.kernel, " stride ", layer.stride,
                                         " yields ", len));
    }
    lengths.push_back(len);
  }
  std::vector<std::size_t> sorted = profile.used_layers;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.empty() || std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() ||
      sorted.back() >= profile.layers.size()) {
    throw GeometryError("profile '" + profile.name + "' has invalid used_layers");
  }
  if (profile.branch) {
    if (profile.branch->source_layer >= profile.layers.size()) {
      throw GeometryError("profile '" + profile.name + "' branch source out of range");
    }
    conv_output_length(lengths[profile.branch->source_layer], profile.branch->window,
                       profile.branch->stride);
  }
  return lengths;
}

inline CandidateSet enumerate_candidates(const DatasetProfile& profile) {
  const std::vector<std::size_t> lengths = validate_profile(profile);
  const double unit = profile.unit_seconds();

  // Receptive field (width, jump) of each layer in base units.
  std::vector<std::size_t> width(lengths.size()), jump(lengths.size());
  std::size_t w = 1, j = 1;
  for (std::size_t k = 0; k < lengths.size(); ++k) {
    w += (profile.layers[k].kernel - 1) * j;
    j *= profile.layers[k].stride;
    width[k] = w;
    jump[k] = j;
  }

  CandidateSet set;
  std::vector<std::size_t> used = profile.used_layers;
  std::sort(used.begin(), used.end());
  for (std::size_t k : used) {
    for (std::size_t i = 0; i < lengths[k]; ++i) {
      const int start = static_cast<int>(i * jump[k]);
      set.items.push_back({k, i, MomentSpan(start, start + static_cast<int>(width[k]), unit), false});
    }
  }
  if (profile.branch) {
    const BranchSpec& b = *profile.branch;
    const std::size_t src = b.source_layer;
    const std::size_t n = conv_output_length(lengths[src], b.window, b.stride);
    const std::size_t bw = width[src] + (b.window - 1) * jump[src];
    const std::size_t bj = jump[src] * b.stride;
    for (std::size_t i = 0; i < n; ++i) {
      const int start = static_cast<int>(i * bj);
      set.items.push_back({profile.layers.size(), i,
                           MomentSpan(start, start + static_cast<int>(bw), unit), true});
    }
  }
  const int base = static_cast<int>(profile.base_length());
  for (const Candidate& c : set.items) {
    if (c.span.end_unit > base) {
      throw GeometryError(detail::concat("profile '", profile.name, "' candidate exceeds base length ", base));
    }
  }
  if (profile.expected_candidates && *profile.expected_candidates != set.size()) {
    throw GeometryError(detail::concat("profile '", profile.name, "' declares ",
                                       *profile.expected_candidates, " candidates but enumerates ",
                                       set.size()));
  }
  return set;
}

// Candidate indices whose IoU with `gt` is at least `threshold`. An empty
// result means the sentence has no positive at this threshold.
inline std::vector<std::size_t> positives_for(const MomentSpan& gt, const CandidateSet& candidates,
                                              double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ContractError(detail::concat("IoU threshold must be in (0, 1], got ", threshold));
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (iou(gt, candidates[i].span) >= threshold) out.push_back(i);
  }
  return out;
}

// Truncates or right-pads with zero columns a [C x T_raw] clip matrix to
// exactly `length` columns.
template <typename Real>
Tensor<Real> fit_length(const Tensor<Real>& features, std::size_t length) {
  if (features.rank() != 2 || features.dim(1) < 1) {
    throw DimensionError("fit_length expects a [C x T] matrix with T >= 1, got " +
                         shape_str(features.shape()));
  }
  const std::size_t ch = features.dim(0), raw = features.dim(1);
  Tensor<Real> out(Shape{ch, length});
  const std::size_t keep = std::min(raw, length);
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t t = 0; t < keep; ++t) out[c * length + t] = features[c * raw + t];
  return out;
}

// JSON form of a profile, as accepted in config files and stored in
// checkpoint metadata.
inline nlohmann::json profile_to_json(const DatasetProfile& p) {
  nlohmann::json j;
  j["name"] = p.name;
  j["input_clips"] = p.input_clips;
  j["clip_seconds"] = p.clip_seconds;
  j["pool_window"] = p.pool_window;
  j["pool_stride"] = p.pool_stride;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : p.layers) {
    j["layers"].push_back({{"kernel", l.kernel}, {"stride", l.stride}, {"dim", l.dim}});
  }
  j["used_layers"] = p.used_layers;
  if (p.branch) {
    j["branch"] = {{"source_layer", p.branch->source_layer},
                   {"window", p.branch->window},
                   {"stride", p.branch->stride}};
  }
  if (p.expected_candidates) j["expected_candidates"] = *p.expected_candidates;
  return j;
}

inline DatasetProfile profile_from_json(const nlohmann::json& j) {
  if (j.is_string()) return profiles::by_name(j.get<std::string>());
  try {
    DatasetProfile p;
    p.name = j.value("name", std::string("custom"));
    p.input_clips = j.at("input_clips").get<std::size_t>();
    p.clip_seconds = j.at("clip_seconds").get<double>();
    p.pool_window = j.value("pool_window", std::size_t{1});
    p.pool_stride = j.value("pool_stride", p.pool_window);
    for (const auto& l : j.at("layers")) {
      p.layers.push_back({l.at("kernel").get<std::size_t>(), l.at("stride").get<std::size_t>(),
                          l.at("dim").get<std::size_t>()});
    }
    if (j.contains("used_layers")) {
      p.used_layers = j.at("used_layers").get<std::vector<std::size_t>>();
    } else {
      for (std::size_t i = 0; i < p.layers.size(); ++i) p.used_layers.push_back(i);
    }
    if (j.contains("branch")) {
      const auto& b = j.at("branch");
      p.branch = BranchSpec{b.value("source_layer", std::size_t{0}), b.at("window").get<std::size_t>(),
                            b.value("stride", std::size_t{1})};
    }
    if (j.contains("expected_candidates")) {
      p.expected_candidates = j.at("expected_candidates").get<std::size_t>();
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad profile definition: ") + e.what());
  }
}

}  // namespace hman
