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
#include <map>
#include <string>
#include <vector>

#include "hman/geometry.hpp"
#include "hman/ops.hpp"
#include "hman/random.hpp"

namespace hman {

struct ModelDims {
  std::size_t clip_dim = 32;
  std::size_t sentence_dim = 32;
  std::size_t embed_dim = 64;
  // Width of the sentence encoder's hidden layer.
  std::size_t hidden_dim = 64;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Learnable weights of both encoders plus the sentence batch-norm running
// statistics. Parameter order is fixed by the profile and is the order used
// in checkpoints.
template <typename Real>
class ModelParams {
 public:
  ModelParams() = default;

  ModelParams(const ModelDims& dims, const DatasetProfile& profile) : dims_(dims) {
    validate_profile(profile);
    const std::size_t d = dims.embed_dim;
    add("input.W", {dims.clip_dim, d}, true);
    add("input.b", {d}, false);
    for (std::size_t k = 0; k < profile.layers.size(); ++k) {
      add("conv" + std::to_string(k) + ".K", {d, d, profile.layers[k].kernel}, true);
      add("conv" + std::to_string(k) + ".b", {d}, false);
    }
    if (profile.branch) {
      add("branch.K", {d, d, profile.branch->window}, true);
      add("branch.b", {d}, false);
    }
    add("sentence.W1", {dims.sentence_dim, dims.hidden_dim}, true);
    add("sentence.b1", {dims.hidden_dim}, false);
    add("sentence.gamma", {dims.hidden_dim}, false);
    add("sentence.beta", {dims.hidden_dim}, false);
    add("sentence.W2", {dims.hidden_dim, d}, true);
    add("sentence.b2", {d}, false);
    get("sentence.gamma").value.fill(Real{1});
    bn_.mean = Tensor<Real>(Shape{dims.hidden_dim});
    bn_.var = Tensor<Real>(Shape{dims.hidden_dim}, Real{1});
  }

  ModelParams(const ModelParams&) = default;
  ModelParams& operator=(const ModelParams&) = default;
  ModelParams(ModelParams&&) = default;
  ModelParams& operator=(ModelParams&&) = default;

  const ModelDims& dims() const noexcept { return dims_; }

  std::vector<Parameter<Real>>& params() noexcept { return params_; }
  const std::vector<Parameter<Real>>& params() const noexcept { return params_; }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("model has no parameter '" + name + "'");
    return it->second;
  }
  Parameter<Real>& get(const std::string& name) { return params_[index_of(name)]; }
  const Parameter<Real>& get(const std::string& name) const { return params_[index_of(name)]; }

  // Weight matrices and conv kernels, the set covered by the regularizer.
  bool is_weight(std::size_t i) const { return is_weight_.at(i); }

  BatchNormStats<Real>& bn_stats() noexcept { return bn_; }
  const BatchNormStats<Real>& bn_stats() const noexcept { return bn_; }

  std::vector<Parameter<Real>*> pointers() {
    std::vector<Parameter<Real>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.value.all_finite()) return false;
    return bn_.mean.all_finite() && bn_.var.all_finite();
  }

 private:
  void add(const std::string& name, Shape shape, bool weight) {
    index_[name] = params_.size();
    params_.emplace_back(name, Tensor<Real>(std::move(shape)));
    is_weight_.push_back(weight);
  }

  ModelDims dims_;
  std::vector<Parameter<Real>> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<bool> is_weight_;
  BatchNormStats<Real> bn_;
};

// Glorot-uniform weights from a seeded stream, zero biases, BN gamma 1 and
// beta 0.
template <typename Real>
ModelParams<Real> init_params(std::uint64_t seed, const ModelDims& dims,
                              const DatasetProfile& profile) {
  ModelParams<Real> model(dims, profile);
  Rng rng(seed);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    if (!model.is_weight(i)) continue;
    auto& value = model.params()[i].value;
    std::size_t fan_in, fan_out;
    if (value.rank() == 3) {
      fan_in = value.dim(1) * value.dim(2);
      fan_out = value.dim(0) * value.dim(2);
    } else {
      fan_in = value.dim(0);
      fan_out = value.dim(1);
    }
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : value.storage()) v = static_cast<Real>(rng.uniform(-a, a));
  }
  return model;
}

// Every parameter of a model recorded on one tape. Binding a mutable model
// watches its parameters so backward() fills their gradients; binding a
// const model records plain inputs and never writes to it.
template <typename Real>
class BoundParams {
 public:
  BoundParams(Tape<Real>& tape, ModelParams<Real>& model) : model_(&model), mutable_(&model) {
    for (auto& p : model.params()) vars_.push_back(tape.watch(p));
  }
  BoundParams(Tape<Real>& tape, const ModelParams<Real>& model) : model_(&model) {
    for (const auto& p : model.params()) vars_.push_back(tape.input(p.value));
  }

  Var operator()(const std::string& name) const { return vars_[model_->index_of(name)]; }
  const ModelParams<Real>& model() const { return *model_; }
  // Null when bound read-only.
  ModelParams<Real>* mutable_model() const { return mutable_; }

  // Vars of the regularized weights.
  std::vector<Var> weights() const {
    std::vector<Var> out;
    for (std::size_t i = 0; i < vars_.size(); ++i)
      if (model_->is_weight(i)) out.push_back(vars_[i]);
    return out;
  }

 private:
  const ModelParams<Real>* model_;
  ModelParams<Real>* mutable_ = nullptr;
  std::vector<Var> vars_;
};

// Moment encoder. `clips` is [clip_dim x input_clips] (see fit_length).
// Projection per clip, max-pool to the base length, then the conv stack
// with ReLU after every layer. Returns [M x embed_dim], row i being
// candidate i of enumerate_candidates(profile).
template <typename Real>
Var encode_moments(Tape<Real>& tape, const BoundParams<Real>& bound,
                   const DatasetProfile& profile, const Tensor<Real>& clips) {
  const ModelDims& dims = bound.model().dims();
  if (clips.rank() != 2 || clips.dim(0) != dims.clip_dim || clips.dim(1) != profile.input_clips) {
    throw ConfigError(detail::concat("clip features ", shape_str(clips.shape()), " do not match [",
                                     dims.clip_dim, "x", profile.input_clips, "] of profile '",
                                     profile.name, "'"));
  }
  if (!bound.model().has("conv" + std::to_string(profile.layers.size() - 1) + ".K") ||
      bound.model().has("conv" + std::to_string(profile.layers.size()) + ".K") ||
      bound.model().has("branch.K") != profile.branch.has_value()) {
    throw ConfigError("model parameters were built for a different profile than '" +
                      profile.name + "'");
  }
  const Var x = tape.input(clips);
  const Var projected = linear(tape, transpose(tape, x), bound("input.W"), bound("input.b"));
  Var current = maxpool1d(tape, transpose(tape, projected), profile.pool_window, profile.pool_stride);

  std::vector<Var> layer_out;
  for (std::size_t k = 0; k < profile.layers.size(); ++k) {
    const std::string n = "conv" + std::to_string(k);
    current = relu(tape, conv1d(tape, current, bound(n + ".K"), bound(n + ".b"),
                                profile.layers[k].stride));
    layer_out.push_back(current);
  }
  std::vector<std::size_t> used = profile.used_layers;
  std::sort(used.begin(), used.end());
  std::vector<Var> rows;
  for (std::size_t k : used) rows.push_back(transpose(tape, layer_out[k]));
  if (profile.branch) {
    const Var b = relu(tape, conv1d(tape, layer_out[profile.branch->source_layer],
                                    bound("branch.K"), bound("branch.b"), profile.branch->stride));
    rows.push_back(transpose(tape, b));
  }
  return concat_rows(tape, rows);
}

// Sentence encoder: W2 * BN(ReLU(W1 * s + b1)) + b2 for a [B x sentence_dim]
// batch.
template <typename Real>
Var encode_sentence(Tape<Real>& tape, const BoundParams<Real>& bound,
                    const Tensor<Real>& sentences, Mode mode) {
  const ModelDims& dims = bound.model().dims();
  if (sentences.rank() != 2 || sentences.dim(1) != dims.sentence_dim) {
    throw ConfigError(detail::concat("sentence features ", shape_str(sentences.shape()),
                                     " do not have ", dims.sentence_dim, " columns"));
  }
  const Var x = tape.input(sentences);
  const Var hidden = relu(tape, linear(tape, x, bound("sentence.W1"), bound("sentence.b1")));
  Var normed;
  if (mode == Mode::kTrain) {
    if (bound.mutable_model() == nullptr) {
      throw ContractError("train-mode sentence encoding needs a mutable model");
    }
    normed = batchnorm(tape, hidden, bound("sentence.gamma"), bound("sentence.beta"), mode,
                       bound.mutable_model()->bn_stats());
  } else {
    BatchNormStats<Real> stats = bound.model().bn_stats();
    normed = batchnorm(tape, hidden, bound("sentence.gamma"), bound("sentence.beta"), mode, stats);
  }
  return linear(tape, normed, bound("sentence.W2"), bound("sentence.b2"));
}

// Tape-free conveniences for inference. Safe to call concurrently on a
// shared model.
template <typename Real>
Tensor<Real> embed_moments(const ModelParams<Real>& model, const DatasetProfile& profile,
                           const Tensor<Real>& clips) {
  Tape<Real> tape;
  BoundParams<Real> bound(tape, model);
  return tape.value(encode_moments(tape, bound, profile, clips));
}

template <typename Real>
Tensor<Real> embed_sentences(const ModelParams<Real>& model, const Tensor<Real>& sentences) {
  Tape<Real> tape;
  BoundParams<Real> bound(tape, model);
  return tape.value(encode_sentence(tape, bound, sentences, Mode::kInfer));
}

}  // namespace hman
