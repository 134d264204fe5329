/*
 * Copyright 2026 The RecRank Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "recrank/dataset.h"
#include "recrank/rng.h"
#include "support/fixture.h"

namespace recrank::data {
namespace {

using recrank::testing::scratch_dir;

Interaction row(std::string u, std::string i, double r, int64_t ts) { return {std::move(u), std::move(i), r, ts, false}; }

std::set<std::pair<std::string, std::string>> pairs(const Interactions& xs) {
  std::set<std::pair<std::string, std::string>> s;
  for (const auto& x : xs) s.emplace(x.user_id, x.item_id);
  return s;
}

// Delete one under-degree node at a time, recounting everything from
// scratch after each deletion.
std::set<std::pair<std::string, std::string>> brute_force_core(std::set<std::pair<std::string, std::string>> edges,
                                                               size_t k) {
  while (true) {
    std::map<std::string, size_t> du, di;
    for (const auto& [u, i] : edges) {
      ++du[u];
      ++di[i];
    }
    std::optional<std::string> victim_u, victim_i;
    for (const auto& [u, d] : du) {
      if (d < k) {
        victim_u = u;
        break;
      }
    }
    if (!victim_u) {
      for (const auto& [i, d] : di) {
        if (d < k) {
          victim_i = i;
          break;
        }
      }
    }
    if (!victim_u && !victim_i) return edges;
    std::erase_if(edges, [&](const auto& e) { return (victim_u && e.first == *victim_u) || (victim_i && e.second == *victim_i); });
  }
}

TEST(LoadRaw, EmptyFileGivesEmptyOutputs) {
  const auto dir = scratch_dir("empty");
  std::ofstream(dir / "interactions.tsv").close();
  const auto r = load_raw(dir, Format::kGenericTsv);
  EXPECT_TRUE(r.interactions.empty());
  EXPECT_TRUE(r.catalog.titles.empty());
}

TEST(LoadRaw, DuplicatePairKeepsLaterTimestamp) {
  const auto dir = scratch_dir("dup");
  {
    std::ofstream f(dir / "interactions.tsv");
    f << "a\tx\t2\t10\n"
      << "a\tx\t5\t20\n"
      << "b\tx\t3\t15\n";
  }
  const auto r = load_raw(dir, Format::kGenericTsv);
  ASSERT_EQ(r.interactions.size(), 2u);
  EXPECT_EQ(r.duplicates_collapsed, 1u);
  for (const auto& x : r.interactions) {
    if (x.user_id == "a") {
      EXPECT_EQ(x.timestamp, 20);
      EXPECT_DOUBLE_EQ(x.rating, 5.0);
    }
  }
}

TEST(LoadRaw, MalformedRowsAboveThresholdAbort) {
  const auto dir = scratch_dir("bad");
  {
    std::ofstream f(dir / "interactions.tsv");
    f << "a\tx\t2\t10\n"
      << "garbage line\n";
  }
  EXPECT_THROW(load_raw(dir, Format::kGenericTsv), DataError);
  LoadOptions lenient;
  lenient.max_malformed = 1;
  const auto r = load_raw(dir, Format::kGenericTsv, lenient);
  EXPECT_EQ(r.interactions.size(), 1u);
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_NE(r.diagnostics[0].find("line 2"), std::string::npos);
}

TEST(LoadRaw, MissingFileThrows) { EXPECT_THROW(load_raw("/nonexistent/none", Format::kMl100k), DataError); }

TEST(KCore, OneCoreIsIdentity) {
  const Interactions xs = {row("a", "x", 1, 1), row("b", "y", 2, 2), row("a", "y", 3, 3)};
  EXPECT_EQ(pairs(k_core_filter(xs, 1)), pairs(xs));
}

TEST(KCore, FiveByFiveFixtureMatchesOracle) {
  Interactions xs;
  int64_t t = 1;
  // Dense 3x3 block plus a sparse fringe that should peel away at k=2.
  for (const char* u : {"u1", "u2", "u3"}) {
    for (const char* i : {"i1", "i2", "i3"}) xs.push_back(row(u, i, 4, t++));
  }
  xs.push_back(row("u4", "i4", 4, t++));
  xs.push_back(row("u5", "i4", 4, t++));
  xs.push_back(row("u5", "i5", 4, t++));
  xs.push_back(row("u4", "i1", 4, t++));
  for (size_t k : {2, 3, 4}) EXPECT_EQ(pairs(k_core_filter(xs, k)), brute_force_core(pairs(xs), k)) << "k=" << k;
}

TEST(KCore, RandomBipartiteGraphsMatchBruteForceOver100Seeds) {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    // 50 nodes: 25 users + 25 items, edge probability ~0.15.
    Interactions xs;
    int64_t t = 1;
    for (int u = 0; u < 25; ++u) {
      for (int i = 0; i < 25; ++i) {
        if (rng.uniform() < 0.15) xs.push_back(row("u" + std::to_string(u), "i" + std::to_string(i), 3, t++));
      }
    }
    const size_t k = 2 + seed % 3;
    const auto got = k_core_filter(xs, k);
    ASSERT_EQ(pairs(got), brute_force_core(pairs(xs), k)) << "seed " << seed;
    // Idempotence and monotonicity.
    EXPECT_EQ(pairs(k_core_filter(got, k)), pairs(got));
    const auto tighter = pairs(k_core_filter(xs, k + 1));
    const auto looser = pairs(got);
    EXPECT_TRUE(std::includes(looser.begin(), looser.end(), tighter.begin(), tighter.end()));
  }
}

TEST(SimulateTimestamps, DeterministicDistinctAndPositive) {
  Interactions xs;
  for (int i = 0; i < 100; ++i) xs.push_back(row("u" + std::to_string(i % 7), "i" + std::to_string(i), 3, 0));
  const auto a = simulate_timestamps(xs, 7);
  const auto b = simulate_timestamps(xs, 7);
  EXPECT_EQ(a, b);
  std::set<int64_t> ts;
  for (const auto& x : a) {
    EXPECT_GT(x.timestamp, 0);
    EXPECT_TRUE(x.simulated_ts);
    ts.insert(x.timestamp);
  }
  EXPECT_EQ(ts.size(), 100u);
  EXPECT_NE(simulate_timestamps(xs, 8), a);
}

TEST(SimulateTimestamps, RefusesRealTimestampsWithoutForce) {
  const Interactions xs = {row("a", "x", 1, 100)};
  EXPECT_THROW(simulate_timestamps(xs, 1), InvalidArgument);
  EXPECT_NO_THROW(simulate_timestamps(xs, 1, true));
}

TEST(TemporalSplit, LastInteractionIsHeldOut) {
  const Interactions xs = {row("u", "a", 4, 1), row("u", "b", 4, 2), row("u", "c", 4, 3)};
  const auto s = temporal_split(xs);
  ASSERT_EQ(s.test.size(), 1u);
  EXPECT_EQ(s.test[0].item_id, "c");
  EXPECT_EQ(s.per_user_test_item.at("u"), "c");
  EXPECT_EQ(s.train.size(), 2u);
}

TEST(TemporalSplit, SingleInteractionUsersStayInTrain) {
  const Interactions xs = {row("u", "a", 4, 1), row("v", "b", 4, 2)};
  const auto s = temporal_split(xs);
  EXPECT_TRUE(s.test.empty());
  EXPECT_EQ(s.train_only_users.size(), 2u);
  EXPECT_EQ(pairs(s.train), pairs(xs));
}

TEST(TemporalSplit, UnionIsInputAndTestIsLatest) {
  Rng rng(3);
  Interactions xs;
  for (int u = 0; u < 30; ++u) {
    const int n = 1 + static_cast<int>(rng.below(6));
    for (int k = 0; k < n; ++k) {
      xs.push_back(row("u" + std::to_string(u), "i" + std::to_string(k), 3, 1 + static_cast<int64_t>(rng.below(1000))));
    }
  }
  const auto s = temporal_split(xs);
  auto all = pairs(s.train);
  for (const auto& p : pairs(s.test)) EXPECT_TRUE(all.insert(p).second) << "train and test overlap";
  EXPECT_EQ(all, pairs(xs));
  for (const auto& t : s.test) {
    for (const auto& x : s.train) {
      if (x.user_id == t.user_id) EXPECT_GE(t.timestamp, x.timestamp);
    }
  }
}

TEST(Preferences, ThresholdsOnBothScales) {
  EXPECT_EQ(label_preference(5, RatingScale::five_point()), Preference::kLiked);
  EXPECT_EQ(label_preference(3, RatingScale::five_point()), Preference::kNeutral);
  EXPECT_EQ(label_preference(2, RatingScale::five_point()), Preference::kDisliked);
  EXPECT_EQ(label_preference(8, RatingScale::ten_point()), Preference::kLiked);
  EXPECT_EQ(label_preference(4, RatingScale::ten_point()), Preference::kDisliked);
  EXPECT_EQ(label_preference(5, RatingScale::ten_point()), Preference::kNeutral);
  EXPECT_THROW(label_preference(6, RatingScale::five_point()), InvalidArgument);
}

TEST(Stats, SingleInteractionHasDensityOne) {
  const auto s = compute_stats({row("u", "i", 1, 1)});
  EXPECT_EQ(s, (DatasetStats{1, 1, 1, 1.0}));
}

TEST(Stats, ItemUniverseWidensDenominator) {
  const auto s = compute_stats({row("u", "i", 1, 1)}, 4);
  EXPECT_EQ(s.n_items, 4u);
  EXPECT_DOUBLE_EQ(s.density, 0.25);
}

TEST(Prepared, RoundTripThroughDisk) {
  const auto dir = scratch_dir("prep");
  recrank::testing::BlockFixture spec;
  spec.users = 20;
  const auto raw = recrank::testing::write_block_fixture(dir / "raw", spec);
  PrepareOptions o;
  o.format = Format::kGenericTsv;
  const auto ds = prepare(raw, o);
  write_prepared({dir / "out"}, ds);
  const auto back = read_prepared({dir / "out"});
  EXPECT_EQ(back.interactions, ds.interactions);
  EXPECT_EQ(back.stats, ds.stats);
  EXPECT_EQ(back.split.per_user_test_item, ds.split.per_user_test_item);
  EXPECT_EQ(back.catalog.titles, ds.catalog.titles);
  EXPECT_EQ(compute_stats(back.interactions), back.stats);
}

TEST(Ml100k, TestSetSizeEqualsUsersWithTwoOrMoreRatings) {
  const std::filesystem::path raw = std::filesystem::path(RECRANK_DATA_DIR) / "ml-100k";
  if (!std::filesystem::exists(raw / "u.data")) GTEST_SKIP() << "ML-100K not present under " << raw;
  // Independent count straight from the raw file.
  std::ifstream in(raw / "u.data");
  std::map<std::string, size_t> per_user;
  std::string u, i, r, t;
  while (in >> u >> i >> r >> t) ++per_user[u];
  size_t expected = 0;
  for (const auto& [k, n] : per_user) expected += n >= 2;
  PrepareOptions o;
  o.format = Format::kMl100k;
  const auto ds = prepare(raw, o);
  EXPECT_EQ(ds.split.test.size(), expected);
}

}  // namespace
}  // namespace recrank::data
