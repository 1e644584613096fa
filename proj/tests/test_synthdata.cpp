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

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <string>

#include "support.hpp"

namespace hman {
namespace {

using testing::TempDir;
using testing::toy_spec;

SyntheticSpec didemo_spec(std::size_t videos, std::uint64_t seed) {
  SyntheticSpec s = toy_spec(videos, 2, seed);
  s.profile = profiles::didemo();
  return s;
}

TEST(Generate, SameSeedIsByteIdentical) {
  const SyntheticSpec s = didemo_spec(12, 3);
  EXPECT_EQ(encode_features(generate_corpus(s)), encode_features(generate_corpus(s)));
  SyntheticSpec other = s;
  other.seed = 4;
  EXPECT_NE(encode_features(generate_corpus(s)), encode_features(generate_corpus(other)));
}

TEST(Generate, OnGridSpansAreCandidates) {
  for (const auto& p : {profiles::didemo(), profiles::charades(), profiles::toy()}) {
    SyntheticSpec s = toy_spec(30, 2, 5);
    s.profile = p;
    const Corpus c = generate_corpus(s);
    const CandidateSet set = enumerate_candidates(p);
    for (const auto& v : c.videos)
      for (const auto& a : v.annotations)
        for (const auto& span : a.spans) EXPECT_FALSE(positives_for(span, set, 1.0).empty()) << p.name;
  }
}

TEST(Generate, ShapeInvariants) {
  for (SpanSource src : {SpanSource::kOnGrid, SpanSource::kUniform}) {
    SyntheticSpec s = didemo_spec(25, 6);
    s.sentences_per_video = 3;
    s.span_source = src;
    const Corpus c = generate_corpus(s);
    ASSERT_EQ(c.videos.size(), 25u);
    std::set<std::string> ids;
    for (const auto& v : c.videos) {
      EXPECT_TRUE(ids.insert(v.id).second);
      EXPECT_EQ(v.features.size(), c.clip_dim * v.clips);
      for (float f : v.features) ASSERT_TRUE(std::isfinite(f));
      ASSERT_EQ(v.annotations.size(), 3u);
      for (std::size_t i = 0; i < v.annotations.size(); ++i) {
        const auto& a = v.annotations[i];
        EXPECT_EQ(a.feature.size(), c.sentence_dim);
        for (float f : a.feature) ASSERT_TRUE(std::isfinite(f));
        ASSERT_EQ(a.spans.size(), 1u);
        EXPECT_GE(a.spans[0].start_unit, 0);
        EXPECT_LE(a.spans[0].end_unit, static_cast<int>(s.profile.base_length()));
        // Spans within one video do not overlap.
        for (std::size_t j = 0; j < i; ++j) {
          const auto& o = v.annotations[j].spans[0];
          EXPECT_TRUE(o.end_unit <= a.spans[0].start_unit || a.spans[0].end_unit <= o.start_unit);
        }
      }
    }
  }
}

TEST(Generate, ImpossibleSpanCountIsAnError) {
  SyntheticSpec s = didemo_spec(1, 1);
  s.sentences_per_video = 7;  // only 6 disjoint units exist
  s.max_span_retries = 50;
  EXPECT_THROW(generate_corpus(s), ContractError);
  SyntheticSpec zero = didemo_spec(0, 1);
  EXPECT_THROW(generate_corpus(zero), ContractError);
  SyntheticSpec neg = didemo_spec(2, 1);
  neg.noise_sigma = -0.1;
  EXPECT_THROW(generate_corpus(neg), ContractError);
}

TEST(Generate, NoiselessSentencesAreLinearInConcepts) {
  // Without noise, a sentence (C g + D u) and the clips of its span
  // (A g + B u) are linear images of the same concepts, so a single linear
  // map predicts span clips from sentences over the whole corpus.
  SyntheticSpec s = didemo_spec(60, 7);
  s.noise_sigma = 0.0;
  s.sentences_per_video = 2;
  const Corpus c = generate_corpus(s);
  const std::size_t n = c.sentence_count();
  Eigen::MatrixXd x(n, c.sentence_dim + 1), y(n, c.clip_dim);
  std::size_t row = 0;
  for (const auto& v : c.videos) {
    for (const auto& a : v.annotations) {
      for (std::size_t j = 0; j < c.sentence_dim; ++j) x(row, j) = a.feature[j];
      x(row, c.sentence_dim) = 1.0;
      const std::size_t clip = static_cast<std::size_t>(a.spans[0].start_unit) * s.profile.pool_stride;
      for (std::size_t r = 0; r < c.clip_dim; ++r) y(row, r) = v.features[r * v.clips + clip];
      ++row;
    }
  }
  ASSERT_GT(n, 2 * (c.sentence_dim + 1));
  const Eigen::MatrixXd w = x.colPivHouseholderQr().solve(y);
  const double residual = (x * w - y).norm() / y.norm();
  EXPECT_LT(residual, 1e-6);

  // With noise the same probe cannot be exact.
  s.noise_sigma = 0.1;
  const Corpus noisy = generate_corpus(s);
  row = 0;
  for (const auto& v : noisy.videos) {
    for (const auto& a : v.annotations) {
      for (std::size_t j = 0; j < c.sentence_dim; ++j) x(row, j) = a.feature[j];
      const std::size_t clip = static_cast<std::size_t>(a.spans[0].start_unit) * s.profile.pool_stride;
      for (std::size_t r = 0; r < c.clip_dim; ++r) y(row, r) = v.features[r * v.clips + clip];
      ++row;
    }
  }
  const Eigen::MatrixXd wn = x.colPivHouseholderQr().solve(y);
  EXPECT_GT((x * wn - y).norm() / y.norm(), 1e-3);
}

TEST(Generate, NoiselessWholeVideoSmoke) {
  // Drawing on-grid spans from the deepest didemo layer alone makes every
  // annotation cover the whole video. Two videos keep batch norm defined.
  SyntheticSpec s = didemo_spec(2, 8);
  s.sentences_per_video = 1;
  s.noise_sigma = 0.0;
  s.profile.used_layers = {5};
  s.profile.expected_candidates = 1;
  const Corpus c = generate_corpus(s);
  const DatasetProfile p = profiles::didemo();
  for (const auto& v : c.videos) EXPECT_EQ(v.annotations[0].spans[0], MomentSpan(0, 6, p.unit_seconds()));

  Hyperparams h = testing::toy_hyper(8);
  h.batch_size = 2;
  h.epochs = 300;
  h.lr0 = 1e-2;
  h.lr_decay = 1.0;
  h.pos_iou_threshold = 1.0;
  const auto fitted = fit<double>(c, p, h);
  ASSERT_FALSE(fitted.aborted);
  const EvalReport rep = evaluate(fitted.checkpoint.model, c, p, EvalSettings{{1, 10}, {0.5, 1.0}, 1, 1});
  EXPECT_EQ(rep.r_at(1, 1.0), 1.0);
  EXPECT_EQ(rep.mr_at(1.0), 1.0);
}

TEST(Features, RoundTrip) {
  SyntheticSpec s = didemo_spec(6, 9);
  s.span_source = SpanSource::kUniform;
  const Corpus c = generate_corpus(s);
  TempDir dir;
  write_features(dir.file("c.hmf"), c);
  const Corpus back = read_features(dir.file("c.hmf"));
  EXPECT_EQ(back, c);
  EXPECT_EQ(encode_features(back), encode_features(c));
}

TEST(Features, LayoutHeader) {
  const std::string bytes = encode_features(generate_corpus(didemo_spec(2, 1)));
  EXPECT_EQ(bytes.substr(0, 4), "HMF1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 0x01);
  const std::uint32_t len = static_cast<unsigned char>(bytes[5]) | static_cast<unsigned char>(bytes[6]) << 8 |
                            static_cast<unsigned char>(bytes[7]) << 16 |
                            static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8])) << 24;
  const auto manifest = nlohmann::json::parse(bytes.substr(9, len));
  EXPECT_EQ(manifest.at("videos").size(), 2u);
  // Remaining bytes are float32: 2 videos x (8 x 12 clips + 2 x 8 sentence).
  EXPECT_EQ(bytes.size() - 9 - len, 4u * 2u * (8u * 12u + 2u * 8u));
}

TEST(Features, CorruptionIsAFormatError) {
  const std::string bytes = encode_features(generate_corpus(didemo_spec(3, 2)));
  std::string magic = bytes;
  magic[0] = 'X';
  try {
    decode_features(magic);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  std::string big_endian = bytes;
  big_endian[4] = 0x02;
  try {
    decode_features(big_endian);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  EXPECT_THROW(decode_features(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(decode_features(bytes.substr(0, 7)), FormatError);
  EXPECT_THROW(decode_features(bytes + std::string(4, '\0')), FormatError);
  std::string bad_json = bytes;
  bad_json[9] = '!';
  EXPECT_THROW(decode_features(bad_json), FormatError);
  TempDir dir;
  EXPECT_THROW(read_features(dir.file("none.hmf")), IoError);
}

TEST(Split, TenVideosAtTwentyPercent) {
  const Corpus c = generate_corpus(didemo_spec(10, 11));
  const auto [train, test] = split(c, 0.2, 3);
  EXPECT_EQ(train.videos.size(), 8u);
  EXPECT_EQ(test.videos.size(), 2u);
  std::set<std::string> seen;
  for (const auto& v : train.videos) seen.insert(v.id);
  for (const auto& v : test.videos) EXPECT_TRUE(seen.insert(v.id).second);
  EXPECT_EQ(seen.size(), 10u);
  const auto again = split(c, 0.2, 3);
  EXPECT_EQ(again.first, train);
  EXPECT_EQ(again.second, test);
}

TEST(Split, FractionOutsideOpenIntervalIsAnError) {
  const Corpus c = generate_corpus(didemo_spec(4, 1));
  EXPECT_THROW(split(c, 0.0, 1), ContractError);
  EXPECT_THROW(split(c, 1.0, 1), ContractError);
  EXPECT_THROW(split(c, -0.5, 1), ContractError);
}

TEST(Split, GeneratedTagsMatchSpec) {
  SyntheticSpec s = didemo_spec(40, 2);
  const Corpus c = generate_corpus(s);
  EXPECT_EQ(subset(c, Split::kTest).videos.size(), 8u);
  EXPECT_EQ(subset(c, Split::kTrain).videos.size(), 32u);
}

}  // namespace
}  // namespace hman
