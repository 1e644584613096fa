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

// hman: generate synthetic corpora, train, evaluate, query and self-verify.
//
// Exit codes: 0 success, 1 internal failure (or failed verify check),
// 2 usage or configuration error, 3 I/O or file-format error.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hman/config.hpp"
#include "hman/hman.hpp"

namespace {

using namespace hman;

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

// Flags left unset keep the config (or built-in) value.
struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<int> precision;
  std::optional<std::string> profile;

  // gen
  std::string spec = "default";
  std::string out;
  std::optional<std::size_t> videos, sentences;
  std::optional<double> noise;
  std::optional<std::string> span_source;

  // train / eval / query
  std::string features;
  std::vector<std::string> checkpoints;
  std::string report;
  std::optional<std::string> variant, pooling, terms;
  std::optional<std::size_t> epochs, batch;
  std::optional<double> lr, lambda1, beta, clip_norm;
  std::string split;
  std::string train_split;
  std::vector<std::string> ablate;
  std::string baseline;
  std::optional<std::size_t> min_annotations;
  std::string vector_path;
  std::size_t k = 10;
};

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.threads) c.threads = std::max<std::size_t>(1, *f.threads);
  if (f.precision) c.precision = *f.precision;
  if (f.profile) c.profile = profiles::by_name(*f.profile);

  c.synth.seed = c.seed;
  c.synth.profile = c.profile;
  if (f.videos) c.synth.n_videos = *f.videos;
  if (f.sentences) c.synth.sentences_per_video = *f.sentences;
  if (f.noise) c.synth.noise_sigma = *f.noise;
  if (f.span_source) c.synth.span_source = parse_span_source(*f.span_source);

  Hyperparams& h = c.hyper;
  h.seed = c.seed;
  if (f.variant) h.variant = parse_variant(*f.variant);
  if (f.pooling) h.pooling = parse_pooling(*f.pooling);
  if (f.terms) h.terms = parse_loss_terms(*f.terms);
  if (f.epochs) h.epochs = *f.epochs;
  if (f.batch) h.batch_size = *f.batch;
  if (f.lr) h.lr0 = *f.lr;
  if (f.lambda1) h.lambda1 = *f.lambda1;
  if (f.beta) h.beta = *f.beta;
  if (f.clip_norm) h.clip_norm = *f.clip_norm;
  h.validate();

  c.eval.threads = c.threads;
  if (f.min_annotations) c.eval.min_annotations = *f.min_annotations;
  if (!f.features.empty()) c.paths.features = f.features;
  if (!f.report.empty()) c.paths.report = f.report;
  if (!f.checkpoints.empty()) c.paths.checkpoint = f.checkpoints.front();
  if (c.precision != 32 && c.precision != 64) throw ConfigError("--precision must be 32 or 64");
  return c;
}

Corpus select_split(const Corpus& corpus, const std::string& which) {
  if (which == "all") return corpus;
  if (which == "train") return subset(corpus, Split::kTrain);
  if (which == "test") return subset(corpus, Split::kTest);
  throw ConfigError("unknown split '" + which + "' (expected all, train or test)");
}

Corpus load_corpus(const RunConfig& c) {
  if (c.paths.features.empty()) throw ConfigError("--features is required");
  return read_features(c.paths.features);
}

void require_nonempty(const Corpus& corpus, const std::string& what) {
  if (corpus.videos.empty()) throw ConfigError(what + " split has no videos");
}

// ---- gen -----------------------------------------------------------------

int cmd_gen(const Flags& f) {
  if (f.spec != "default") throw ConfigError("unknown --spec '" + f.spec + "' (only 'default' is built in)");
  const RunConfig c = resolve(f);
  const Corpus corpus = generate_corpus(c.synth);
  write_features(f.out, corpus);
  log::info("event", "gen", "out", f.out, "videos", corpus.videos.size(), "sentences", corpus.sentence_count(),
            "seed", c.seed);
  return kExitOk;
}

// ---- train ---------------------------------------------------------------

template <typename Real>
Checkpoint<Real> train_on(const Corpus& corpus, const DatasetProfile& profile, const Hyperparams& h) {
  FitResult<Real> r = fit<Real>(corpus, profile, h);
  if (r.aborted) {
    log::warn("event", "train_aborted", "reason", r.abort_reason, "epochs_completed", r.checkpoint.epoch);
  }
  return std::move(r.checkpoint);
}

template <typename Real>
int cmd_train(const Flags& f) {
  const RunConfig c = resolve(f);
  const Corpus corpus = select_split(load_corpus(c), f.split.empty() ? "train" : f.split);
  require_nonempty(corpus, "training");
  const Checkpoint<Real> ck = train_on<Real>(corpus, c.profile, c.hyper);
  save_checkpoint(f.out, ck);
  log::info("event", "saved", "out", f.out, "epochs", ck.epoch, "variant", to_string(c.hyper.variant), "terms",
            to_string(c.hyper.terms), "pooling", to_string(c.hyper.pooling));
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------

struct Ablation {
  std::string name;
  LossTerms terms = LossTerms::kProposed;
  Pooling pooling = Pooling::kLogSumExp;
};

Ablation parse_ablation(const std::string& s, const Hyperparams& base) {
  Ablation a{s, base.terms, base.pooling};
  if (s == "proposed" || s == "intra" || s == "video") {
    a.terms = parse_loss_terms(s);
  } else if (s == "lse" || s == "log" || s == "avg" || s == "ave") {
    a.terms = LossTerms::kProposed;
    a.pooling = parse_pooling(s);
  } else {
    throw ConfigError("unknown --ablate value '" + s + "' (expected proposed, intra, video, lse or avg)");
  }
  return a;
}

template <typename Real>
int cmd_eval(const Flags& f) {
  const RunConfig c = resolve(f);
  const Corpus all = load_corpus(c);
  const Corpus test = select_split(all, f.split.empty() ? "test" : f.split);
  require_nonempty(test, "evaluation");
  const Corpus train = select_split(all, f.train_split.empty() ? "train" : f.train_split);

  std::vector<Checkpoint<Real>> given;
  for (const auto& path : f.checkpoints) given.push_back(load_checkpoint<Real>(path));

  std::vector<EvalReport> reports;
  auto run = [&](const Checkpoint<Real>& ck, const std::string& method) {
    reports.push_back(evaluate(ck.model, test, ck.profile, c.eval, method));
  };

  if (f.ablate.empty()) {
    if (given.empty() && f.baseline.empty()) throw ConfigError("eval needs --checkpoint, --ablate or --baseline");
    for (std::size_t i = 0; i < given.size(); ++i) {
      run(given[i], given.size() == 1 ? "hman" : "hman#" + std::to_string(i));
    }
  } else {
    for (const auto& name : f.ablate) {
      const Ablation a = parse_ablation(name, c.hyper);
      const Checkpoint<Real>* match = nullptr;
      for (const auto& ck : given) {
        if (ck.hyper.terms == a.terms && ck.hyper.pooling == a.pooling) match = &ck;
      }
      if (match) {
        run(*match, name);
        continue;
      }
      require_nonempty(train, "training");
      Hyperparams h = c.hyper;
      h.terms = a.terms;
      h.pooling = a.pooling;
      log::info("event", "ablation_train", "name", name, "terms", to_string(h.terms), "pooling",
                to_string(h.pooling));
      run(train_on<Real>(train, c.profile, h), name);
    }
  }

  if (!f.baseline.empty()) {
    if (f.baseline != "prior") throw ConfigError("unknown --baseline '" + f.baseline + "' (expected prior)");
    const DatasetProfile& profile = given.empty() ? c.profile : given.front().profile;
    reports.push_back(evaluate_prior(train, test, profile, c.eval, c.seed));
  }

  std::cout << report_table(reports);
  if (!c.paths.report.empty()) {
    nlohmann::json doc;
    doc["reports"] = nlohmann::json::array();
    for (const auto& r : reports) doc["reports"].push_back(report_to_json(r));
    io::write_file(c.paths.report, doc.dump(2) + "\n");
  }
  return kExitOk;
}

// ---- query ---------------------------------------------------------------

std::vector<float> read_vector(const std::string& path) {
  const std::string text = io::read_file(path);
  std::istringstream in(text);
  std::vector<float> v;
  std::string token;
  std::size_t offset = 0;
  while (in >> token) {
    offset = static_cast<std::size_t>(in.tellg() == -1 ? text.size() : static_cast<std::size_t>(in.tellg()));
    char* end = nullptr;
    const float x = std::strtof(token.c_str(), &end);
    if (end != token.c_str() + token.size() || !std::isfinite(x)) {
      throw FormatError("'" + token + "' in " + path + " is not a finite number", offset - token.size());
    }
    v.push_back(x);
  }
  if (v.empty()) throw FormatError("vector file " + path + " holds no numbers", 0);
  return v;
}

template <typename Real>
int cmd_query(const Flags& f) {
  const RunConfig c = resolve(f);
  if (f.checkpoints.empty()) throw ConfigError("--checkpoint is required");
  if (f.k == 0) throw ConfigError("-k must be at least 1");
  const Checkpoint<Real> ck = load_checkpoint<Real>(f.checkpoints.front());
  const Corpus corpus = select_split(load_corpus(c), f.split.empty() ? "all" : f.split);
  require_nonempty(corpus, "query");
  const std::vector<float> vec = read_vector(f.vector_path);
  if (vec.size() != ck.model.dims().sentence_dim) {
    throw FormatError("vector has " + std::to_string(vec.size()) + " values, the model expects " +
                          std::to_string(ck.model.dims().sentence_dim),
                      0);
  }
  Tensor<Real> s(Shape{1, vec.size()});
  for (std::size_t i = 0; i < vec.size(); ++i) s[i] = static_cast<Real>(vec[i]);
  const Tensor<Real> q = embed_sentences(ck.model, s);
  const CorpusIndex<Real> index = build_index(corpus, ck.model, ck.profile, c.threads);
  const Ranking top = query_top_k<Real>(index, std::span<const Real>(q.data().data(), q.data().size()), f.k, c.threads);
  std::cout << "rank video start_s end_s score\n";
  for (std::size_t i = 0; i < top.size(); ++i) {
    const IndexEntry& e = index.entries[top[i].row];
    std::cout << i + 1 << ' ' << e.video_id << ' ' << e.span.start_seconds() << ' ' << e.span.end_seconds() << ' '
              << std::setprecision(6) << top[i].score << '\n';
  }
  return kExitOk;
}

// ---- verify --------------------------------------------------------------

template <typename Real>
int cmd_verify(const Flags& f) {
  const RunConfig c = resolve(f);
  verify::Settings s;
  s.seed = c.seed;
  for (const auto& p : c.verify_profiles) s.profiles.push_back(p);
  const verify::Report rep = verify::run_all<Real>(s);
  std::cout << rep.text();
  std::cout << (rep.all_passed() ? "verify: all checks passed\n" : "verify: FAILED\n");
  return rep.all_passed() ? kExitOk : kExitInternal;
}

template <typename Fn32, typename Fn64>
int by_precision(const Flags& f, Fn32 f32, Fn64 f64) {
  const RunConfig c = resolve(f);
  return c.precision == 64 ? f64(f) : f32(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hman: moment retrieval over a video corpus"};
  app.require_subcommand(1);
  Flags f;

  app.add_option("--config", f.config, "JSON config file; flags override its values");
  app.add_option("--seed", f.seed, "seed for every random stream");
  app.add_option("--threads", f.threads, "worker cap for index build and query scans");
  app.add_option("--precision", f.precision, "32 or 64")->check(CLI::IsMember({32, 64}));
  app.add_option("--profile", f.profile, "built-in profile: didemo, charades, activitynet, toy");

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus feature file");
  gen->add_option("--spec", f.spec, "synthetic spec (default)");
  gen->add_option("--out", f.out, "output feature file")->required();
  gen->add_option("--videos", f.videos, "number of videos");
  gen->add_option("--sentences", f.sentences, "sentences per video");
  gen->add_option("--noise", f.noise, "noise sigma");
  gen->add_option("--span-source", f.span_source, "on-grid or uniform");

  auto add_hyper = [&](CLI::App* sc) {
    sc->add_option("--variant", f.variant, "sum or max");
    sc->add_option("--pooling", f.pooling, "lse or avg");
    sc->add_option("--terms", f.terms, "proposed, intra or video");
    sc->add_option("--epochs", f.epochs, "training epochs");
    sc->add_option("--batch", f.batch, "pairs per minibatch");
    sc->add_option("--lr", f.lr, "initial learning rate");
    sc->add_option("--lambda1", f.lambda1, "weight of the video-level loss");
    sc->add_option("--beta", f.beta, "relevance sharpness");
    sc->add_option("--clip-norm", f.clip_norm, "global gradient-norm clip, 0 disables");
  };

  auto* train = app.add_subcommand("train", "train and write a checkpoint");
  train->add_option("--features", f.features, "feature file")->required();
  train->add_option("--out", f.out, "output checkpoint")->required();
  train->add_option("--split", f.split, "videos to train on: train (default), test or all");
  add_hyper(train);

  auto* eval = app.add_subcommand("eval", "evaluate checkpoints, ablations and baselines");
  eval->add_option("--features", f.features, "feature file")->required();
  eval->add_option("--checkpoint", f.checkpoints, "checkpoint file (repeatable)");
  eval->add_option("--report", f.report, "write a JSON report here");
  eval->add_option("--ablate", f.ablate, "proposed, intra, video, lse, avg (repeatable)");
  eval->add_option("--baseline", f.baseline, "prior");
  eval->add_option("--split", f.split, "videos to evaluate: test (default), train or all");
  eval->add_option("--train-split", f.train_split,
                   "videos that ablation runs train on and the prior counts: train (default), test or all");
  eval->add_option("--min-annotations", f.min_annotations, "annotations a hit must match");
  add_hyper(eval);

  auto* query = app.add_subcommand("query", "rank corpus moments for one sentence vector");
  query->add_option("--features", f.features, "feature file")->required();
  query->add_option("--checkpoint", f.checkpoints, "checkpoint file")->required();
  query->add_option("--vector", f.vector_path, "whitespace-separated sentence feature")->required();
  query->add_option("-k", f.k, "results to list (default 10)");
  query->add_option("--split", f.split, "videos to search: all (default), train or test");

  auto* ver = app.add_subcommand("verify", "run the self-check suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(f);
    if (train->parsed()) return by_precision(f, cmd_train<float>, cmd_train<double>);
    if (eval->parsed()) return by_precision(f, cmd_eval<float>, cmd_eval<double>);
    if (query->parsed()) return by_precision(f, cmd_query<float>, cmd_query<double>);
    if (ver->parsed()) return by_precision(f, cmd_verify<float>, cmd_verify<double>);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const GeometryError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitInternal;
}
