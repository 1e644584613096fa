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

#include <optional>
#include <string>
#include <vector>

#include "hman/binary_io.hpp"
#include "hman/corpus.hpp"
#include "hman/retrieval.hpp"
#include "hman/training.hpp"
#include "json.hpp"

// Run configuration: one JSON document whose values command-line flags
// override.
//
//   {
//     "profile": "didemo" | { inline profile },
//     "seed": 0, "threads": 1, "precision": 32,
//     "synth": { "n_videos": 40, "sentences_per_video": 2, "clip_dim": 32,
//                "sentence_dim": 32, "concept_dim": 8, "noise_sigma": 0.1,
//                "span_source": "on-grid", "test_fraction": 0.2 },
//     "hyper": { see hyper_from_json },
//     "eval":  { "ks": [10, 100], "ious": [0.5, 0.7], "min_annotations": 1 },
//     "paths": { "features": "...", "checkpoint": "...", "report": "..." },
//     "verify_profiles": [ profile, ... ]
//   }
namespace hman {

struct RunPaths {
  std::string features;
  std::string checkpoint;
  std::string report;
};

struct RunConfig {
  DatasetProfile profile = profiles::didemo();
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  int precision = 32;
  SyntheticSpec synth;
  Hyperparams hyper;
  EvalSettings eval;
  RunPaths paths;
  std::vector<DatasetProfile> verify_profiles;
};

inline SyntheticSpec synth_from_json(const nlohmann::json& j, SyntheticSpec s) {
  s.n_videos = j.value("n_videos", s.n_videos);
  s.sentences_per_video = j.value("sentences_per_video", s.sentences_per_video);
  s.clip_dim = j.value("clip_dim", s.clip_dim);
  s.sentence_dim = j.value("sentence_dim", s.sentence_dim);
  s.concept_dim = j.value("concept_dim", s.concept_dim);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  if (j.contains("span_source")) s.span_source = parse_span_source(j.at("span_source").get<std::string>());
  s.test_fraction = j.value("test_fraction", s.test_fraction);
  s.max_span_retries = j.value("max_span_retries", s.max_span_retries);
  return s;
}

inline EvalSettings eval_from_json(const nlohmann::json& j, EvalSettings e) {
  if (j.contains("ks")) e.ks = j.at("ks").get<std::vector<std::size_t>>();
  if (j.contains("ious")) e.ious = j.at("ious").get<std::vector<double>>();
  e.min_annotations = j.value("min_annotations", e.min_annotations);
  for (std::size_t k : e.ks)
    if (k == 0) throw ConfigError("eval.ks entries must be positive");
  for (double m : e.ious)
    if (!(m > 0.0 && m <= 1.0)) throw ConfigError("eval.ious entries must be in (0, 1]");
  return e;
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  try {
    if (j.contains("profile")) c.profile = profile_from_json(j.at("profile"));
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.precision = j.value("precision", c.precision);
    if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"), c.synth);
    if (j.contains("hyper")) c.hyper = hyper_from_json(j.at("hyper"), c.hyper);
    if (j.contains("eval")) c.eval = eval_from_json(j.at("eval"), c.eval);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.paths.features = p.value("features", c.paths.features);
      c.paths.checkpoint = p.value("checkpoint", c.paths.checkpoint);
      c.paths.report = p.value("report", c.paths.report);
    }
    if (j.contains("verify_profiles")) {
      for (const auto& p : j.at("verify_profiles")) c.verify_profiles.push_back(profile_from_json(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  if (c.precision != 32 && c.precision != 64) throw ConfigError("precision must be 32 or 64");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  const std::string text = io::read_file(path);
  try {
    return config_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace hman
