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
#include <utility>
#include <vector>

#include "hman/binary_io.hpp"
#include "hman/corpus.hpp"
#include "hman/log.hpp"
#include "hman/model.hpp"
#include "hman/objective.hpp"
#include "json.hpp"

namespace hman {

struct Hyperparams {
  std::size_t batch_size = 64;
  double lr0 = 1e-3;
  double lr_decay = 0.95;  // per epoch
  std::size_t epochs = 30;
  double alpha_intra = 0.05;
  double alpha_video = 0.20;
  double lambda1 = 5.0;
  double alpha_reg = 5e-5;
  double beta = 10.0;
  double pos_iou_threshold = 0.5;
  Variant variant = Variant::kSum;
  Pooling pooling = Pooling::kLogSumExp;
  LossTerms terms = LossTerms::kProposed;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 64;

  LossConfig loss_config() const {
    LossConfig c;
    c.variant = variant;
    c.pooling = pooling;
    c.terms = terms;
    c.alpha_intra = alpha_intra;
    c.alpha_video = alpha_video;
    c.beta = beta;
    c.lambda1 = lambda1;
    c.alpha_reg = alpha_reg;
    return c;
  }

  void validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    for (double v : {lr0, lr_decay, beta, pos_iou_threshold}) {
      if (!(v > 0.0)) throw ConfigError("lr0, lr_decay, beta and pos_iou_threshold must be positive");
    }
    if (pos_iou_threshold > 1.0) throw ConfigError("pos_iou_threshold must be <= 1");
    for (double v : {alpha_intra, alpha_video, lambda1, alpha_reg, clip_norm}) {
      if (!(v >= 0.0)) throw ConfigError("margins, lambda1, alpha_reg and clip_norm must be >= 0");
    }
    if (embed_dim == 0 || hidden_dim == 0) throw ConfigError("embedding dims must be positive");
  }
};

inline nlohmann::json hyper_to_json(const Hyperparams& h) {
  return {{"batch_size", h.batch_size},   {"lr0", h.lr0},
          {"lr_decay", h.lr_decay},       {"epochs", h.epochs},
          {"alpha_intra", h.alpha_intra}, {"alpha_video", h.alpha_video},
          {"lambda1", h.lambda1},         {"alpha_reg", h.alpha_reg},
          {"beta", h.beta},               {"pos_iou_threshold", h.pos_iou_threshold},
          {"variant", to_string(h.variant)}, {"pooling", to_string(h.pooling)},
          {"terms", to_string(h.terms)},  {"seed", h.seed},
          {"clip_norm", h.clip_norm},     {"embed_dim", h.embed_dim},
          {"hidden_dim", h.hidden_dim}};
}

// Missing keys keep the values already in `h`.
inline Hyperparams hyper_from_json(const nlohmann::json& j, Hyperparams h = {}) {
  try {
    h.batch_size = j.value("batch_size", h.batch_size);
    h.lr0 = j.value("lr0", h.lr0);
    h.lr_decay = j.value("lr_decay", h.lr_decay);
    h.epochs = j.value("epochs", h.epochs);
    h.alpha_intra = j.value("alpha_intra", h.alpha_intra);
    h.alpha_video = j.value("alpha_video", h.alpha_video);
    h.lambda1 = j.value("lambda1", h.lambda1);
    h.alpha_reg = j.value("alpha_reg", h.alpha_reg);
    h.beta = j.value("beta", h.beta);
    h.pos_iou_threshold = j.value("pos_iou_threshold", h.pos_iou_threshold);
    if (j.contains("variant")) h.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("pooling")) h.pooling = parse_pooling(j.at("pooling").get<std::string>());
    if (j.contains("terms")) h.terms = parse_loss_terms(j.at("terms").get<std::string>());
    h.seed = j.value("seed", h.seed);
    h.clip_norm = j.value("clip_norm", h.clip_norm);
    h.embed_dim = j.value("embed_dim", h.embed_dim);
    h.hidden_dim = j.value("hidden_dim", h.hidden_dim);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad hyperparameters: ") + e.what());
  }
  return h;
}

inline double lr_at(std::size_t epoch, double lr0, double decay) {
  return lr0 * std::pow(decay, static_cast<double>(epoch));
}

// One (video, annotation) training pair, as indices into a corpus.
struct PairRef {
  std::size_t video = 0;
  std::size_t annotation = 0;

  friend bool operator==(const PairRef&, const PairRef&) = default;
};

inline std::vector<PairRef> all_pairs(const Corpus& corpus) {
  std::vector<PairRef> out;
  for (std::size_t v = 0; v < corpus.videos.size(); ++v)
    for (std::size_t a = 0; a < corpus.videos[v].annotations.size(); ++a) out.push_back({v, a});
  return out;
}

// Seeded permutation of every pair, cut into chunks of batch_size; the last
// chunk may be short.
inline std::vector<std::vector<PairRef>> make_minibatches(const Corpus& corpus, std::size_t batch_size,
                                                          std::uint64_t seed, std::size_t epoch) {
  std::vector<PairRef> pairs = all_pairs(corpus);
  if (pairs.empty()) throw ContractError("cannot batch an empty corpus");
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  Rng rng = Rng::derive(seed, 0xba7c4, epoch);
  rng.shuffle(pairs);
  std::vector<std::vector<PairRef>> out;
  for (std::size_t i = 0; i < pairs.size(); i += batch_size) {
    out.emplace_back(pairs.begin() + static_cast<std::ptrdiff_t>(i),
                     pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), i + batch_size)));
  }
  return out;
}

// Candidates at IoU >= threshold with any annotated span. When none
// qualify, the single best candidate stands in if its IoU is >= 0.5;
// otherwise the result is empty and the sentence is skipped.
inline std::vector<std::size_t> select_positives(const std::vector<MomentSpan>& spans,
                                                 const CandidateSet& candidates, double threshold) {
  std::vector<bool> hit(candidates.size(), false);
  for (const auto& s : spans)
    for (std::size_t i : positives_for(s, candidates, threshold)) hit[i] = true;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < hit.size(); ++i)
    if (hit[i]) out.push_back(i);
  if (!out.empty()) return out;
  double best_iou = 0.0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (const auto& s : spans) {
      const double v = iou(s, candidates[i].span);
      if (v > best_iou) {
        best_iou = v;
        best = i;
      }
    }
  }
  if (best_iou >= 0.5) return {best};
  return {};
}

template <typename Real>
struct OptimizerState {
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  std::uint64_t t = 0;

  static OptimizerState for_model(const ModelParams<Real>& model) {
    OptimizerState s;
    for (const auto& p : model.params()) {
      s.m.emplace_back(p.value.shape());
      s.v.emplace_back(p.value.shape());
    }
    return s;
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

// Adam with bias correction. A non-finite gradient rejects the whole step
// before anything is modified.
template <typename Real>
void adam_step(std::vector<Parameter<Real>>& params, OptimizerState<Real>& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("optimizer state does not match parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].grad.shape() != params[i].value.shape() || state.m[i].shape() != params[i].value.shape()) {
      throw DimensionError("shape mismatch for parameter '" + params[i].name + "'");
    }
    if (!params[i].grad.all_finite()) {
      throw NumericError("non-finite gradient for parameter '" + params[i].name + "'");
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].value;
    const auto& grad = params[i].grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      const double mk = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g;
      const double vk = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g * g;
      m[k] = static_cast<Real>(mk);
      v[k] = static_cast<Real>(vk);
      const double mhat = mk / c1;
      const double vhat = vk / c2;
      value[k] = static_cast<Real>(value[k] - lr * mhat / (std::sqrt(vhat) + kAdamEpsilon));
    }
  }
}

// Per-corpus data prepared once for training: fitted clip tensors and
// positive candidate sets.
template <typename Real>
struct TrainingData {
  const Corpus* corpus = nullptr;
  DatasetProfile profile;
  CandidateSet candidates;
  std::vector<Tensor<Real>> clips;                          // per video
  std::vector<std::vector<std::vector<std::size_t>>> positives;  // [video][annotation]

  TrainingData(const Corpus& c, const DatasetProfile& p, double threshold)
      : corpus(&c), profile(p), candidates(enumerate_candidates(p)) {
    std::size_t skipped = 0;
    for (const auto& v : c.videos) {
      clips.push_back(clip_tensor<Real>(c, v, p.input_clips));
      auto& per_video = positives.emplace_back();
      for (const auto& a : v.annotations) {
        for (const auto& s : a.spans) {
          if (s.unit_seconds != p.unit_seconds()) {
            throw ConfigError(detail::concat("annotation '", a.sentence_id, "' uses ", s.unit_seconds,
                                             "s units, profile '", p.name, "' uses ", p.unit_seconds(), "s"));
          }
        }
        per_video.push_back(select_positives(a.spans, candidates, threshold));
        if (per_video.back().empty()) {
          ++skipped;
          log::warn("event", "no_positive", "sentence", a.sentence_id, "threshold", threshold);
        }
      }
    }
    (void)skipped;
  }
};

// Records the full objective for one batch of pairs on `tape`.
template <typename Real>
RecordedLoss<Real> batch_loss(Tape<Real>& tape, ModelParams<Real>& model, const TrainingData<Real>& data,
                              const std::vector<PairRef>& batch, const LossConfig& cfg) {
  const Corpus& corpus = *data.corpus;
  if (corpus.clip_dim != model.dims().clip_dim || corpus.sentence_dim != model.dims().sentence_dim) {
    throw ConfigError("corpus feature dims do not match the model");
  }
  BoundParams<Real> bound(tape, model);

  BatchScores layout;
  std::map<std::size_t, std::size_t> slot;  // corpus video -> batch video
  std::vector<std::size_t> order;
  for (const auto& p : batch) {
    if (slot.emplace(p.video, order.size()).second) order.push_back(p.video);
  }
  std::vector<Var> blocks;
  layout.video_offset.push_back(0);
  for (std::size_t v : order) {
    blocks.push_back(encode_moments(tape, bound, data.profile, data.clips[v]));
    layout.video_offset.push_back(layout.video_offset.back() + data.candidates.size());
  }
  Tensor<Real> sentences(Shape{batch.size(), corpus.sentence_dim});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& f = corpus.videos[batch[i].video].annotations[batch[i].annotation].feature;
    for (std::size_t k = 0; k < f.size(); ++k) sentences[i * corpus.sentence_dim + k] = static_cast<Real>(f[k]);
    layout.owner.push_back(slot.at(batch[i].video));
    layout.positives.push_back(data.positives[batch[i].video][batch[i].annotation]);
  }
  layout.sentences = batch.size();

  const Var moments = blocks.size() == 1 ? blocks.front() : concat_rows(tape, blocks);
  const Var sent = encode_sentence(tape, bound, sentences, Mode::kTrain);
  const Var sim = cosine_similarity(tape, moments, sent);
  return record_loss(tape, sim, layout, bound, cfg);
}

template <typename Real>
double clip_gradients(std::vector<Parameter<Real>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (Real g : p.grad.storage()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params)
      for (Real& g : p.grad.storage()) g = static_cast<Real>(g * f);
  }
  return norm;
}

template <typename Real>
struct Checkpoint {
  ModelParams<Real> model;
  OptimizerState<Real> optimizer;
  Hyperparams hyper;
  DatasetProfile profile;
  std::size_t epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();
};

inline nlohmann::json report_to_json(const LossReport& r) {
  return {{"intra", r.intra}, {"video", r.video}, {"reg", r.reg}, {"total", r.total},
          {"skipped", r.skipped_sentences}};
}

template <typename Real>
struct FitResult {
  Checkpoint<Real> checkpoint;
  std::vector<LossReport> epoch_log;
  bool aborted = false;
  std::string abort_reason;
};

inline ModelDims model_dims(const Corpus& corpus, const Hyperparams& h) {
  return ModelDims{corpus.clip_dim, corpus.sentence_dim, h.embed_dim, h.hidden_dim};
}

// Epoch loop over seeded minibatches with Adam and per-epoch exponential
// learning-rate decay. A trailing single-pair batch is folded into the
// previous one (batch norm needs two rows). A numeric failure stops
// training and returns the last good state.
template <typename Real>
FitResult<Real> fit(const Corpus& corpus, const DatasetProfile& profile, const Hyperparams& hyper) {
  hyper.validate();
  const TrainingData<Real> data(corpus, profile, hyper.pos_iou_threshold);
  const LossConfig cfg = hyper.loss_config();

  FitResult<Real> result;
  Checkpoint<Real>& ck = result.checkpoint;
  ck.hyper = hyper;
  ck.profile = profile;
  ck.model = init_params<Real>(Rng::derive(hyper.seed, 0x1417).next(), model_dims(corpus, hyper), profile);
  ck.optimizer = OptimizerState<Real>::for_model(ck.model);

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    auto batches = make_minibatches(corpus, hyper.batch_size, hyper.seed, epoch);
    if (batches.size() > 1 && batches.back().size() == 1) {
      batches[batches.size() - 2].push_back(batches.back().front());
      batches.pop_back();
    }
    const double lr = lr_at(epoch, hyper.lr0, hyper.lr_decay);
    LossReport sum;
    std::size_t steps = 0;
    for (const auto& batch : batches) {
      ModelParams<Real> before = ck.model;
      OptimizerState<Real> opt_before = ck.optimizer;
      try {
        Tape<Real> tape;
        const RecordedLoss<Real> loss = batch_loss(tape, ck.model, data, batch, cfg);
        if (!std::isfinite(loss.report.total)) throw NumericError("loss is not finite");
        ck.model.zero_grad();
        tape.backward(loss.total);
        clip_gradients(ck.model.params(), hyper.clip_norm);
        adam_step(ck.model.params(), ck.optimizer, lr);
        if (!ck.model.all_finite()) throw NumericError("parameters became non-finite");
        sum.intra += loss.report.intra;
        sum.video += loss.report.video;
        sum.reg += loss.report.reg;
        sum.total += loss.report.total;
        sum.skipped_sentences += loss.report.skipped_sentences;
        ++steps;
      } catch (const NumericError& e) {
        ck.model = std::move(before);
        ck.optimizer = std::move(opt_before);
        result.aborted = true;
        result.abort_reason = e.what();
        log::warn("event", "abort", "epoch", epoch, "reason", e.what());
        return result;
      }
    }
    LossReport mean = sum;
    const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
    mean.intra /= n;
    mean.video /= n;
    mean.reg /= n;
    mean.total /= n;
    result.epoch_log.push_back(mean);
    ck.epoch = epoch + 1;
    ck.metrics = {{"last_epoch_loss", report_to_json(mean)}};
    log::info("event", "epoch", "epoch", epoch + 1, "lr", lr, "intra", mean.intra, "video", mean.video,
              "reg", mean.reg, "total", mean.total, "skipped", mean.skipped_sentences);
  }
  return result;
}

// HMC1 checkpoint:
//   "HMC1" | u32 metadata length | metadata (UTF-8 JSON) | u32 blob count |
//   blobs of (u32 name length, name, u32 rank, u32 extents..., float32 LE
//   values). Blobs are the model parameters in model order, the batch-norm
//   running statistics ("bn.mean", "bn.var") and the Adam moments
//   ("adam.m/<param>", "adam.v/<param>").
inline constexpr char kCheckpointMagic[4] = {'H', 'M', 'C', '1'};

namespace detail {

template <typename Real>
void write_blob(io::ByteWriter& w, const std::string& name, const Tensor<Real>& t) {
  w.prefixed(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  for (Real v : t.storage()) w.f32(static_cast<float>(v));
}

}  // namespace detail

template <typename Real>
std::string encode_checkpoint(const Checkpoint<Real>& ck) {
  const ModelDims& d = ck.model.dims();
  nlohmann::json meta;
  meta["format"] = "HMC1";
  meta["epoch"] = ck.epoch;
  meta["adam_step"] = ck.optimizer.t;
  meta["dims"] = {{"clip_dim", d.clip_dim}, {"sentence_dim", d.sentence_dim},
                  {"embed_dim", d.embed_dim}, {"hidden_dim", d.hidden_dim}};
  meta["profile"] = profile_to_json(ck.profile);
  meta["hyper"] = hyper_to_json(ck.hyper);
  meta["metrics"] = ck.metrics;

  io::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.prefixed(meta.dump());
  const auto& params = ck.model.params();
  w.u32(static_cast<std::uint32_t>(params.size() * 3 + 2));
  for (const auto& p : params) detail::write_blob(w, p.name, p.value);
  detail::write_blob(w, "bn.mean", ck.model.bn_stats().mean);
  detail::write_blob(w, "bn.var", ck.model.bn_stats().var);
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::write_blob(w, "adam.m/" + params[i].name, ck.optimizer.m.at(i));
    detail::write_blob(w, "adam.v/" + params[i].name, ck.optimizer.v.at(i));
  }
  return w.buffer();
}

template <typename Real>
Checkpoint<Real> decode_checkpoint(std::string_view data) {
  io::ByteReader r(data);
  if (r.bytes(4, "magic") != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError("bad magic, expected HMC1", 0);
  }
  const std::size_t meta_at = r.offset();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(r.prefixed("metadata"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what(), meta_at + 4);
  }

  Checkpoint<Real> ck;
  try {
    ck.epoch = meta.at("epoch").get<std::size_t>();
    ck.profile = profile_from_json(meta.at("profile"));
    ck.hyper = hyper_from_json(meta.at("hyper"));
    ck.metrics = meta.value("metrics", nlohmann::json::object());
    const auto& jd = meta.at("dims");
    const ModelDims dims{jd.at("clip_dim").get<std::size_t>(), jd.at("sentence_dim").get<std::size_t>(),
                         jd.at("embed_dim").get<std::size_t>(), jd.at("hidden_dim").get<std::size_t>()};
    ck.model = ModelParams<Real>(dims, ck.profile);
    ck.optimizer = OptimizerState<Real>::for_model(ck.model);
    ck.optimizer.t = meta.at("adam_step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is missing fields: ") + e.what(), meta_at + 4);
  } catch (const GeometryError& e) {
    throw FormatError(std::string("metadata has an invalid profile: ") + e.what(), meta_at + 4);
  }

  std::map<std::string, Tensor<Real>*> targets;
  auto& params = ck.model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    targets[params[i].name] = &params[i].value;
    targets["adam.m/" + params[i].name] = &ck.optimizer.m[i];
    targets["adam.v/" + params[i].name] = &ck.optimizer.v[i];
  }
  targets["bn.mean"] = &ck.model.bn_stats().mean;
  targets["bn.var"] = &ck.model.bn_stats().var;

  const std::uint32_t count = r.u32();
  if (count != targets.size()) {
    throw FormatError(detail::concat("expected ", targets.size(), " blobs, file declares ", count), r.offset() - 4);
  }
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::size_t at = r.offset();
    const std::string name(r.prefixed("blob name"));
    auto it = targets.find(name);
    if (it == targets.end()) throw FormatError("unexpected blob '" + name + "'", at);
    Tensor<Real>& dst = *it->second;
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32());
    if (shape != dst.shape()) {
      throw FormatError("blob '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(dst.shape()),
                        at);
    }
    for (auto& v : dst.storage()) v = static_cast<Real>(r.f32());
    targets.erase(it);
  }
  r.expect_end();
  for (auto& p : params) p.zero_grad();
  return ck;
}

template <typename Real>
void save_checkpoint(const std::string& path, const Checkpoint<Real>& ck) {
  io::write_file(path, encode_checkpoint(ck));
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  return decode_checkpoint<Real>(io::read_file(path));
}

}  // namespace hman
