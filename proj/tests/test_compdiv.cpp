// Copyright 2026 The CRG Authors.
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
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crg/compdiv.hpp"
#include "crg/error.hpp"
#include "crg/rng.hpp"
#include "crg/treebank.hpp"
#include "compdiv_oracle.hpp"
#include "test_util.hpp"

namespace {

using namespace crg;

using namespace crg::testing;

TEST(Chernoff, IdenticalIsZero) {
  const auto p = CompoundDistribution::from_weights({{"a", 0.25}, {"b", 0.75}});
  EXPECT_EQ(chernoff_divergence(p, p, 0.1), 0.0);
  const auto u = CompoundDistribution(CompoundCounts{{"x", 3}, {"y", 3}, {"z", 3}});
  EXPECT_EQ(chernoff_divergence(u, u, 0.5), 0.0);
}

TEST(Chernoff, DisjointIsOne) {
  const auto p = CompoundDistribution(CompoundCounts{{"a", 2}});
  const auto q = CompoundDistribution(CompoundCounts{{"b", 1}, {"c", 5}});
  EXPECT_EQ(chernoff_divergence(p, q, 0.1), 1.0);
}

TEST(Chernoff, HalfVersusPoint) {
  const auto p = CompoundDistribution::from_weights({{"a", 0.5}, {"b", 0.5}});
  const auto q = CompoundDistribution::from_weights({{"a", 1.0}});
  EXPECT_NEAR(chernoff_divergence(p, q, 0.1), 1.0 - std::pow(0.5, 0.1), 1e-12);
}

TEST(Chernoff, Asymmetric) {
  const auto p = CompoundDistribution::from_weights({{"a", 0.5}, {"b", 0.5}});
  const auto q = CompoundDistribution::from_weights({{"a", 1.0}});
  EXPECT_NEAR(chernoff_divergence(q, p, 0.1), 1.0 - std::pow(0.5, 0.9), 1e-12);
}

TEST(Chernoff, RejectsBadInput) {
  const auto p = CompoundDistribution::from_weights({{"a", 1.0}});
  EXPECT_THROW(chernoff_divergence(p, p, 0.0), Error);
  EXPECT_THROW(chernoff_divergence(p, p, 1.0), Error);
  EXPECT_THROW(CompoundDistribution::from_weights({{"a", 0.5}}), Error);
  EXPECT_THROW(CompoundDistribution::from_weights({{"a", 1.0}, {"b", 0.0}}), Error);
  EXPECT_THROW(CompoundDistribution(CompoundCounts{}), Error);
}

TEST(ChernoffProperty, BoundedAndMatchesOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    CompoundCounts a, b;
    for (int i = 0; i < 6; ++i) {
      a["k" + std::to_string(rng.below(8))] += 1 + rng.below(9);
      b["k" + std::to_string(rng.below(8))] += 1 + rng.below(9);
    }
    const double alpha = rng.uniform(0.01, 0.99);
    const double d = chernoff_divergence(CompoundDistribution(a), CompoundDistribution(b), alpha);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_NEAR(d, naive_divergence(normalize(a), normalize(b), alpha), 1e-12);
  }
}

TEST(Compounds, CountsEveryDepth) {
  const auto t = decompose(treebank::parse_bracketed(
      "(S (NP (CD two) (NNS dogs)) (VP (VBP are) (VBG running) (PP (IN on) (NP (DT the) (NN grass)))))"));
  EXPECT_EQ(compound_counts({t, t}),
            (CompoundCounts{{"[NP] are running on [NP]", 2}, {"the [NN]", 2}, {"two [NNS]", 2}}));
  const auto item = make_pool_item("img", {{"c", t}});
  EXPECT_EQ(item.primitives, (std::set<std::string>{"dogs", "grass"}));
}

TEST(LeaveOneOut, MatchesBruteForce) {
  Rng rng(3);
  for (std::size_t n = 2; n <= 50; ++n) {
    const auto pool = random_items(rng, n, 10, "p");
    const auto train = random_items(rng, 20, 8, "t");
    const auto deltas = leave_one_out_deltas(pool, train, 0.1);
    const auto oracle = naive_deltas(pool, train, 0.1);
    ASSERT_EQ(deltas.size(), oracle.size());
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(deltas[i].image_id, pool[i].image_id);
      EXPECT_NEAR(deltas[i].delta, oracle[i], 1e-12);
    }
  }
}

TEST(LeaveOneOut, ParallelMatchesSerial) {
  Rng rng(5);
  const auto pool = random_items(rng, 40, 10, "p");
  const auto train = random_items(rng, 30, 10, "t");
  const auto a = leave_one_out_deltas(pool, train, 0.1, 1);
  const auto b = leave_one_out_deltas(pool, train, 0.1, 4);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].delta, b[i].delta);
}

TEST(McdSplit, MatchesExhaustiveRanking) {
  Rng rng(8);
  for (std::size_t n = 2; n <= 50; n += 3) {
    const auto pool = random_items(rng, n, 6, "p");
    const auto train = random_items(rng, 15, 6, "t");
    const auto oracle = naive_deltas(pool, train, 0.1);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (std::abs(oracle[a] - oracle[b]) > 1e-13) return oracle[a] < oracle[b];
      return pool[a].image_id < pool[b].image_id;
    });
    for (std::size_t k : {std::size_t{1}, n / 2, n}) {
      if (k == 0) continue;
      const auto split = mcd_split(pool, train, k, 0.1);
      ASSERT_EQ(split.entries.size(), k);
      std::vector<PoolItem> chosen;
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_EQ(split.entries[i].image_id, pool[order[i]].image_id) << "n=" << n << " k=" << k;
        chosen.push_back(pool[order[i]]);
      }
      EXPECT_NEAR(split.cd,
                  naive_divergence(normalize(sum_counts(chosen)), normalize(sum_counts(train)), 0.1),
                  1e-12);
    }
  }
}

TEST(McdSplit, UnseenCompoundRanksFirst) {
  std::vector<PoolItem> train(1);
  train[0].image_id = "t";
  train[0].counts = {{"common", 10}};
  std::vector<PoolItem> pool(3);
  pool[0] = {"a", {"a#0"}, {{"common", 1}}, {}};
  pool[1] = {"b", {"b#0"}, {{"novel", 1}}, {}};
  pool[2] = {"c", {"c#0"}, {{"common", 1}}, {}};
  const auto deltas = leave_one_out_deltas(pool, train, 0.1);
  EXPECT_LT(deltas[1].delta, 0.0);
  EXPECT_GT(deltas[0].delta, 0.0);
  EXPECT_EQ(deltas[0].delta, deltas[2].delta);
  const auto split = mcd_split(pool, train, 1, 0.1);
  EXPECT_EQ(split.entries[0].image_id, "b");
  EXPECT_EQ(split.cd, 1.0);
  EXPECT_GT(split.cd, mcd_split(pool, train, 3, 0.1).cd);
}

TEST(McdSplit, Errors) {
  Rng rng(1);
  const auto pool = random_items(rng, 5, 4, "p");
  const auto train = random_items(rng, 5, 4, "t");
  using crg::testing::code_of;
  EXPECT_EQ(code_of([&] { mcd_split(pool, train, 6, 0.1); }), ErrorCode::KTooLarge);
  EXPECT_EQ(code_of([&] { random_split(pool, train, 6, 0.1, 0); }), ErrorCode::KTooLarge);
  EXPECT_EQ(code_of([&] { leave_one_out_deltas({pool[0]}, train, 0.1); }), ErrorCode::EmptyPool);
  EXPECT_EQ(code_of([&] { cd_all({}, train, 0.1); }), ErrorCode::EmptyPool);
}

TEST(McdSplit, PrefixMonotone) {
  Rng rng(21);
  const auto pool = random_items(rng, 30, 8, "p");
  const auto train = random_items(rng, 20, 8, "t");
  for (std::size_t k = 1; k < pool.size(); ++k) {
    auto small = mcd_split(pool, train, k, 0.1).image_ids();
    auto large = mcd_split(pool, train, k + 1, 0.1).image_ids();
    large.pop_back();
    EXPECT_EQ(small, large);
  }
  EXPECT_NEAR(mcd_split(pool, train, pool.size(), 0.1).cd, cd_all(pool, train, 0.1), 1e-15);
}

TEST(Windows, SlideOverRanking) {
  Rng rng(12);
  const auto pool = random_items(rng, 20, 6, "p");
  const auto train = random_items(rng, 10, 6, "t");
  const auto ranked = mcd_ranking(pool, train, 0.1);
  const auto windows = windowed_splits(ranked, 8, 4, train, 0.1);
  ASSERT_EQ(windows.size(), 4u);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    EXPECT_EQ(windows[w].offset, 4 * w);
    EXPECT_EQ(windows[w].entries.front().image_id, ranked[4 * w].image_id);
  }
  EXPECT_EQ(windows[0].image_ids(), mcd_split(pool, train, 8, 0.1).image_ids());
  EXPECT_THROW(windowed_splits(ranked, 21, 1, train, 0.1), Error);
  EXPECT_THROW(windowed_splits(ranked, 5, 0, train, 0.1), Error);
}

TEST(RandomSplit, SeededAndSorted) {
  Rng rng(2);
  const auto pool = random_items(rng, 30, 6, "p");
  const auto train = random_items(rng, 10, 6, "t");
  const auto a = random_split(pool, train, 10, 0.1, 99);
  EXPECT_EQ(a.image_ids(), random_split(pool, train, 10, 0.1, 99).image_ids());
  EXPECT_NE(a.image_ids(), random_split(pool, train, 10, 0.1, 100).image_ids());
  const auto ids = a.image_ids();
  EXPECT_TRUE(std::is_sorted(ids.begin(), ids.end()));
}

TEST(Filter, DropsUnseenPrimitives) {
  std::vector<PoolItem> train(1), pool(2);
  train[0].primitives = {"dog"};
  pool[0] = {"a", {}, {}, {"dog"}};
  pool[1] = {"b", {}, {}, {"dog", "zebra"}};
  const auto kept = filter_unseen_primitives(pool, train);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].image_id, "a");
}

TEST(SplitFile, RoundTrip) {
  Rng rng(6);
  const auto pool = random_items(rng, 12, 5, "p");
  const auto train = random_items(rng, 6, 5, "t");
  for (const auto& s : {mcd_split(pool, train, 4, 0.1), random_split(pool, train, 3, 0.1, 7)}) {
    std::stringstream buf;
    write_split(buf, s);
    const auto back = read_split(buf);
    EXPECT_EQ(back.method, s.method);
    EXPECT_EQ(back.cd, s.cd);
    EXPECT_EQ(back.seed, s.seed);
    EXPECT_EQ(back.entries, s.entries);
  }
  std::stringstream bad("{\"image_id\":\"x\"}\n");
  EXPECT_THROW(read_split(bad), Error);
}

}  // namespace
