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
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "hman/hman.hpp"

namespace hman::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("hman_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline SyntheticSpec toy_spec(std::size_t videos, std::size_t sentences, std::uint64_t seed) {
  SyntheticSpec s;
  s.n_videos = videos;
  s.sentences_per_video = sentences;
  s.clip_dim = 8;
  s.sentence_dim = 8;
  s.concept_dim = 4;
  s.profile = profiles::toy();
  s.seed = seed;
  return s;
}

inline Hyperparams toy_hyper(std::uint64_t seed) {
  Hyperparams h;
  h.seed = seed;
  h.embed_dim = 8;
  h.hidden_dim = 8;
  h.batch_size = 4;
  h.epochs = 2;
  return h;
}

// Central finite differences of `loss` with respect to every entry of
// `params`, evaluated in double regardless of Real.
template <typename Real>
std::vector<std::vector<double>> finite_differences(const std::function<double()>& loss,
                                                    const std::vector<Parameter<Real>*>& params, double eps) {
  std::vector<std::vector<double>> out;
  for (auto* p : params) {
    auto& g = out.emplace_back(p->value.size());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const Real keep = p->value[i];
      p->value[i] = static_cast<Real>(static_cast<double>(keep) + eps);
      const double up = loss();
      const double hi = static_cast<double>(p->value[i]);
      p->value[i] = static_cast<Real>(static_cast<double>(keep) - eps);
      const double down = loss();
      const double lo = static_cast<double>(p->value[i]);
      p->value[i] = keep;
      g[i] = (up - down) / (hi - lo);
    }
  }
  return out;
}

}  // namespace hman::testing
