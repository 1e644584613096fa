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

#include <algorithm>
#include <set>
#include <utility>
#include <vector>

#include "support.hpp"

namespace hman {
namespace {

MomentSpan span(int a, int b) { return MomentSpan(a, b, 5.0); }

// Independent IoU over explicit unit sets.
double brute_iou(const MomentSpan& a, const MomentSpan& b) {
  std::set<int> ua, ub, inter, uni;
  for (int i = a.start_unit; i < a.end_unit; ++i) ua.insert(i);
  for (int i = b.start_unit; i < b.end_unit; ++i) ub.insert(i);
  std::set_intersection(ua.begin(), ua.end(), ub.begin(), ub.end(), std::inserter(inter, inter.end()));
  std::set_union(ua.begin(), ua.end(), ub.begin(), ub.end(), std::inserter(uni, uni.end()));
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

std::vector<std::pair<int, int>> spans_of(const CandidateSet& set) {
  std::vector<std::pair<int, int>> out;
  for (const auto& c : set.items) out.emplace_back(c.span.start_unit, c.span.end_unit);
  return out;
}

TEST(Iou, Examples) {
  EXPECT_DOUBLE_EQ(iou(span(2, 6), span(2, 6)), 1.0);
  EXPECT_DOUBLE_EQ(iou(span(0, 2), span(4, 6)), 0.0);
  EXPECT_DOUBLE_EQ(iou(span(0, 4), span(2, 8)), 0.25);
}

TEST(Iou, PropertiesMatchSetOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const int a0 = static_cast<int>(rng.below(20)), b0 = static_cast<int>(rng.below(20));
    const MomentSpan a = span(a0, a0 + 1 + static_cast<int>(rng.below(10)));
    const MomentSpan b = span(b0, b0 + 1 + static_cast<int>(rng.below(10)));
    ASSERT_DOUBLE_EQ(iou(a, b), brute_iou(a, b));
    ASSERT_EQ(iou(a, b), iou(b, a));
    ASSERT_EQ(iou(a, a), 1.0);
    const bool disjoint = a.end_unit <= b.start_unit || b.end_unit <= a.start_unit;
    ASSERT_EQ(iou(a, b) == 0.0, disjoint);
  }
}

TEST(Iou, RejectsMixedUnits) { EXPECT_THROW(iou(MomentSpan(0, 1, 1.0), MomentSpan(0, 1, 2.0)), UnitError); }

TEST(MomentSpan, RejectsEmptyOrNegative) {
  EXPECT_THROW(MomentSpan(3, 3, 1.0), ContractError);
  EXPECT_THROW(MomentSpan(-1, 2, 1.0), ContractError);
  EXPECT_THROW(MomentSpan(0, 2, 0.0), ContractError);
}

TEST(Enumerate, ShippedProfileCounts) {
  EXPECT_EQ(enumerate_candidates(profiles::didemo()).size(), 21u);
  EXPECT_EQ(enumerate_candidates(profiles::charades()).size(), 61u);
  EXPECT_EQ(enumerate_candidates(profiles::activitynet()).size(), 1023u);
  EXPECT_EQ(enumerate_candidates(profiles::toy()).size(), 10u);
}

TEST(Enumerate, DidemoIsEveryContiguousInterval) {
  std::set<std::pair<int, int>> want;
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b <= 6; ++b) want.insert({a, b});
  const auto got = spans_of(enumerate_candidates(profiles::didemo()));
  const std::set<std::pair<int, int>> unique(got.begin(), got.end());
  EXPECT_EQ(unique, want);
  EXPECT_EQ(got.size(), want.size());
}

TEST(Enumerate, DidemoOrderIsLayerMajor) {
  const std::vector<std::pair<int, int>> want = {
      {0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {0, 2}, {1, 3}, {2, 4}, {3, 5}, {4, 6},
      {0, 3}, {1, 4}, {2, 5}, {3, 6}, {0, 4}, {1, 5}, {2, 6}, {0, 5}, {1, 6}, {0, 6}};
  EXPECT_EQ(spans_of(enumerate_candidates(profiles::didemo())), want);
}

TEST(Enumerate, CharadesBranch) {
  const CandidateSet set = enumerate_candidates(profiles::charades());
  std::vector<std::pair<int, int>> branch;
  for (const auto& c : set.items)
    if (c.branch) branch.emplace_back(c.span.start_unit, c.span.end_unit);
  ASSERT_EQ(branch.size(), 30u);
  for (std::size_t i = 0; i < branch.size(); ++i) {
    EXPECT_EQ(branch[i].first, static_cast<int>(i));
    EXPECT_EQ(branch[i].second - branch[i].first, 3);
  }
  // 3 units of 2 s: 6 s windows every 2 s.
  EXPECT_DOUBLE_EQ(set.items.back().span.seconds(), 6.0);
  EXPECT_DOUBLE_EQ(set.items.back().span.start_seconds() - set.items[set.size() - 2].span.start_seconds(), 2.0);
}

TEST(Enumerate, CountIsSumOfUsedDimsPlusBranch) {
  for (const auto& p : {profiles::didemo(), profiles::charades(), profiles::activitynet(), profiles::toy()}) {
    std::size_t want = 0;
    for (std::size_t k : p.used_layers) want += p.layers[k].dim;
    if (p.branch) want += (p.layers[p.branch->source_layer].dim - p.branch->window) / p.branch->stride + 1;
    EXPECT_EQ(enumerate_candidates(p).size(), want) << p.name;
  }
}

TEST(Enumerate, CoversEveryUnitAndDeepestSpansAll) {
  for (const auto& p : {profiles::didemo(), profiles::charades(), profiles::activitynet(), profiles::toy()}) {
    const CandidateSet set = enumerate_candidates(p);
    const int base = static_cast<int>(p.base_length());
    std::vector<bool> covered(static_cast<std::size_t>(base), false);
    for (const auto& c : set.items) {
      ASSERT_GE(c.span.start_unit, 0);
      ASSERT_LE(c.span.end_unit, base);
      for (int u = c.span.start_unit; u < c.span.end_unit; ++u) covered[static_cast<std::size_t>(u)] = true;
    }
    EXPECT_TRUE(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; })) << p.name;
    const std::size_t deepest = p.layers.size() - 1;
    std::size_t n = 0;
    for (const auto& c : set.items) {
      if (!c.branch && c.layer == deepest) {
        ++n;
        EXPECT_EQ(c.span.start_unit, 0);
        EXPECT_EQ(c.span.end_unit, base);
      }
    }
    EXPECT_EQ(n, 1u) << p.name;
  }
}

TEST(Enumerate, StableAcrossCalls) {
  for (const auto& p : {profiles::didemo(), profiles::charades(), profiles::activitynet()}) {
    EXPECT_EQ(spans_of(enumerate_candidates(p)), spans_of(enumerate_candidates(p)));
  }
}

TEST(Enumerate, RejectsInconsistentProfiles) {
  DatasetProfile bad_dim = profiles::didemo();
  bad_dim.layers[2].dim = 5;
  EXPECT_THROW(enumerate_candidates(bad_dim), GeometryError);

  DatasetProfile bad_count = profiles::didemo();
  bad_count.expected_candidates = 22;
  EXPECT_THROW(enumerate_candidates(bad_count), GeometryError);

  DatasetProfile bad_used = profiles::didemo();
  bad_used.used_layers = {0, 0};
  EXPECT_THROW(enumerate_candidates(bad_used), GeometryError);

  DatasetProfile no_layers = profiles::didemo();
  no_layers.layers.clear();
  EXPECT_THROW(enumerate_candidates(no_layers), GeometryError);
}

TEST(PositivesFor, ExactUnitSpan) {
  const CandidateSet set = enumerate_candidates(profiles::didemo());
  const auto pos = positives_for(span(0, 1), set, 1.0);
  ASSERT_EQ(pos.size(), 1u);
  EXPECT_EQ(set[pos[0]].layer, 0u);
  EXPECT_EQ(set[pos[0]].span, span(0, 1));
}

TEST(PositivesFor, MatchesBruteForceOracle) {
  const CandidateSet set = enumerate_candidates(profiles::didemo());
  const MomentSpan gt = span(0, 3);
  std::set<std::pair<int, int>> want;
  for (const auto& c : set.items)
    if (brute_iou(gt, c.span) >= 0.5) want.insert({c.span.start_unit, c.span.end_unit});
  std::set<std::pair<int, int>> got;
  for (std::size_t i : positives_for(gt, set, 0.5)) got.insert({set[i].span.start_unit, set[i].span.end_unit});
  EXPECT_EQ(got, want);
  // The four closest candidates are always among them.
  for (auto s : {std::pair{0, 2}, std::pair{1, 3}, std::pair{0, 3}, std::pair{0, 4}}) EXPECT_TRUE(got.count(s));
  // [1,4) and [0,6) sit exactly on the 0.5 boundary and [0,5) is at 0.6.
  EXPECT_EQ(got.size(), 7u);
}

TEST(PositivesFor, OffGridAtThresholdOneIsEmpty) {
  const DatasetProfile p = profiles::charades();
  const CandidateSet set = enumerate_candidates(p);
  EXPECT_TRUE(positives_for(MomentSpan(1, 3, p.unit_seconds()), set, 1.0).empty());
  EXPECT_THROW(positives_for(span(0, 1), enumerate_candidates(profiles::didemo()), 0.0), ContractError);
}

TEST(FitLength, Examples) {
  Tensor<double> x(Shape{2, 12});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i + 1);
  EXPECT_EQ(fit_length(x, 12), x);

  Tensor<double> short_x(Shape{2, 5});
  for (std::size_t i = 0; i < short_x.size(); ++i) short_x[i] = static_cast<double>(i + 1);
  const Tensor<double> padded = fit_length(short_x, 12);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t t = 0; t < 12; ++t) {
      EXPECT_EQ(padded.at(c, t), t < 5 ? short_x.at(c, t) : 0.0);
    }
  }

  Tensor<double> long_x(Shape{2, 20});
  for (std::size_t i = 0; i < long_x.size(); ++i) long_x[i] = static_cast<double>(i + 1);
  const Tensor<double> cut = fit_length(long_x, 12);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 12; ++t) EXPECT_EQ(cut.at(c, t), long_x.at(c, t));
}

TEST(Profiles, JsonRoundTrip) {
  for (const auto& name : profiles::names()) {
    const DatasetProfile p = profiles::by_name(name);
    const DatasetProfile q = profile_from_json(profile_to_json(p));
    EXPECT_EQ(profile_to_json(q), profile_to_json(p)) << name;
    EXPECT_EQ(spans_of(enumerate_candidates(q)), spans_of(enumerate_candidates(p)));
  }
  EXPECT_EQ(profile_from_json(nlohmann::json("didemo")).name, "didemo");
  EXPECT_THROW(profiles::by_name("nope"), ConfigError);
  EXPECT_THROW(profile_from_json(nlohmann::json::object()), ConfigError);
}

}  // namespace
}  // namespace hman
