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

#include <algorithm>

#include "recrank/hybrid.h"
#include "recrank/rng.h"
#include "support/fixture.h"

namespace recrank::hybrid {
namespace {

TEST(Formulas, PointwiseByHand) {
  EXPECT_NEAR(utility_pointwise(4.5, 3, 0.1), 4.2, 1e-12);
  EXPECT_EQ(utility_pointwise(3.7, 9, 0.0), 3.7);
  EXPECT_NEAR(utility_pointwise(0.0, 1, 1.0), -1.0, 1e-12);
}

TEST(Formulas, ListwiseByHand) {
  EXPECT_NEAR(utility_listwise(1, 0.2), -0.2, 1e-12);
  for (size_t m = 1; m < 6; ++m) EXPECT_EQ(utility_listwise(m, 0.0), 0.0);
  EXPECT_LT(utility_listwise(5, 0.3), utility_listwise(2, 0.3));
}

TEST(Formulas, PairwiseModes) {
  const std::vector<std::string> items = {"a", "b", "c", "d"};
  const std::vector<PairVerdict> v = {{"a", "b", true}, {"c", "a", false}, {"d", "a", false}, {"b", "c", true}};
  for (const auto& [k, u] : utility_pairwise(items, v, 0.25, PairwiseMode::kConstant)) EXPECT_EQ(u, 0.25) << k;
  const auto w = utility_pairwise(items, v, 0.5, PairwiseMode::kWinCount);
  EXPECT_NEAR(w.at("a"), 1.5, 1e-12);  // 3 of 3
  EXPECT_NEAR(w.at("b"), 0.5, 1e-12);
  EXPECT_EQ(w.at("c"), 0.0);
  EXPECT_EQ(w.at("d"), 0.0);
}

std::vector<ItemUtility> three_items(double c2 = 0.1) {
  // A, B, C at initial ranks 1..3; P and m' set by hand.
  std::vector<ItemUtility> r(3);
  const char* ids[] = {"A", "B", "C"};
  const double p[] = {3.0, 4.5, 4.0};
  const size_t mp[] = {3, 2, 1};
  for (size_t i = 0; i < 3; ++i) {
    r[i].item_id = ids[i];
    r[i].m = i + 1;
    r[i].m_prime = mp[i];
    r[i].p = p[i];
    r[i].u_point = utility_pointwise(p[i], i + 1, 0.1);
    r[i].u_pair = c2;
    r[i].u_list = utility_listwise(mp[i], 0.1);
  }
  return r;
}

std::vector<std::string> ids_of(const std::vector<ItemUtility>& r) {
  std::vector<std::string> v;
  for (const auto& x : r) v.push_back(x.item_id);
  return v;
}

TEST(Combine, ThreeItemHandTable) {
  // u_point: 2.9, 4.3, 3.7; u_pair: 0.1; u_list: -0.3, -0.2, -0.1.
  const auto out = hybrid_combine(three_items(), UtilityWeights{});
  EXPECT_EQ(ids_of(out), (std::vector<std::string>{"B", "C", "A"}));
  std::map<std::string, double> u;
  for (const auto& x : out) u[x.item_id] = x.u_hybrid;
  EXPECT_NEAR(u["A"], 2.7 / 3.0, 1e-12);
  EXPECT_NEAR(u["B"], 4.2 / 3.0, 1e-12);
  EXPECT_NEAR(u["C"], 3.7 / 3.0, 1e-12);
}

UtilityWeights one_hot(int k) {
  UtilityWeights w;
  w.alpha1 = k == 0;
  w.alpha2 = k == 1;
  w.alpha3 = k == 2;
  return w;
}

TEST(Combine, OneHotWeightsReproduceSingleStrategies) {
  EXPECT_EQ(ids_of(hybrid_combine(three_items(), one_hot(0))), (std::vector<std::string>{"B", "C", "A"}));
  // Listwise only: the LLM order C, B, A.
  EXPECT_EQ(ids_of(hybrid_combine(three_items(), one_hot(2))), (std::vector<std::string>{"C", "B", "A"}));
  // Constant pairwise only: every item ties, so the initial order survives.
  EXPECT_EQ(ids_of(hybrid_combine(three_items(), one_hot(1))), (std::vector<std::string>{"A", "B", "C"}));
}

TEST(Combine, TiesBreakByInitialRankThenId) {
  std::vector<ItemUtility> r(3);
  r[0] = {"z", 2, 1, 0, 0, 0, 0, 0};
  r[1] = {"y", 1, 2, 0, 0, 0, 0, 0};
  r[2] = {"x", 2, 3, 0, 0, 0, 0, 0};
  EXPECT_EQ(ids_of(hybrid_combine(r, UtilityWeights{})), (std::vector<std::string>{"y", "x", "z"}));
}

TEST(Combine, ConstantPairwiseNeverChangesTheOrder) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const size_t n = 2 + rng.below(9);
    std::vector<ItemUtility> r(n);
    std::vector<size_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = i + 1;
    rng.shuffle(perm);
    for (size_t i = 0; i < n; ++i) {
      r[i].item_id = "i" + std::to_string(i);
      r[i].m = i + 1;
      r[i].m_prime = perm[i];
      r[i].u_point = utility_pointwise(1.0 + std::round(rng.uniform() * 8) / 2, i + 1, 0.1);
      r[i].u_pair = 0.1;
      r[i].u_list = utility_listwise(perm[i], 0.1);
    }
    const double a1 = rng.uniform(), a3 = rng.uniform() + 1e-3, a2 = rng.uniform();
    UtilityWeights with{a1 / (a1 + a2 + a3), a2 / (a1 + a2 + a3), a3 / (a1 + a2 + a3), 0.1, 0.1, 0.1};
    UtilityWeights without{a1 / (a1 + a3), 0.0, a3 / (a1 + a3), 0.1, 0.1, 0.1};
    EXPECT_EQ(ids_of(hybrid_combine(r, with)), ids_of(hybrid_combine(r, without)));

    // Shifting every P shifts u_hybrid by alpha1 times the shift.
    auto shifted = r;
    for (auto& x : shifted) x.u_point += 2.0;
    const auto a = hybrid_combine(r, with), b = hybrid_combine(shifted, with);
    EXPECT_EQ(ids_of(a), ids_of(b));
    for (size_t i = 0; i < n; ++i) EXPECT_NEAR(b[i].u_hybrid - a[i].u_hybrid, with.alpha1 * 2.0, 1e-12);
  }
}

TEST(Weights, Validation) {
  UtilityWeights w;
  EXPECT_TRUE(w.validate().empty());
  w.alpha1 = 0.5;
  EXPECT_FALSE(w.validate().empty());
  w = {0.5, 0.5, 0.0, 0.1, 0.0, 0.1};
  EXPECT_FALSE(w.validate().empty());
  w = {1.2, -0.2, 0.0, 0.1, 0.1, 0.1};
  EXPECT_FALSE(w.validate().empty());
}

// One inference list a, b, c with every prompt kind parsed by hand.
struct Scenario {
  std::vector<lists::RankingList> lists;
  std::vector<prompts::PromptInstance> prompts;
  std::vector<parse::ParsedResult> parsed;

  Scenario() {
    lists::RankingList l;
    l.user_id = "u";
    l.items = l.hint_order = {"a", "b", "c"};
    l.positives = {false, false, false};
    lists.push_back(l);
    add(prompts::Kind::kListwise, "u/l", {"a", "b", "c"}, [](auto& r) { r.items = {"c", "a", "b"}; });
    const double ps[] = {2.0, 4.0, 5.0};
    const double fx[] = {5.0, 1.0, 3.0};
    const char* ids[] = {"a", "b", "c"};
    for (int i = 0; i < 3; ++i) {
      add(prompts::Kind::kPointwise, std::string("u/p/") + ids[i], {ids[i]}, [&](auto& r) { r.score = ps[i]; });
      add(prompts::Kind::kPointwiseFix, std::string("u/f/") + ids[i], {ids[i]}, [&](auto& r) { r.score = fx[i]; });
    }
    add(prompts::Kind::kPairwise, "u/w/ab", {"a", "b"}, [](auto& r) { r.verdict = parse::Verdict::kNo; });
    add(prompts::Kind::kPairwise, "u/w/bc", {"b", "c"}, [](auto& r) { r.verdict = parse::Verdict::kNo; });
  }

  template <typename F>
  void add(prompts::Kind k, const std::string& id, std::vector<std::string> payload, F fill) {
    prompts::PromptInstance p;
    p.id = id;
    p.kind = k;
    p.user_id = "u";
    p.payload = payload;
    p.hint_items = k == prompts::Kind::kListwise ? lists[0].hint_order : std::vector<std::string>{payload[0]};
    if (k == prompts::Kind::kPointwise) p.hint_score = 4.0;
    prompts.push_back(p);
    parse::ParsedResult r;
    r.prompt_id = id;
    r.user_id = "u";
    r.kind = k;
    r.payload = payload;
    r.status = parse::Status::kOk;
    fill(r);
    parsed.push_back(r);
  }
};

std::map<Method, std::vector<std::string>> by_method(const RankOutput& o) {
  std::map<Method, std::vector<std::string>> m;
  for (const auto& r : o.rankings) m[r.method] = r.items;
  return m;
}

TEST(RankAll, EveryMethodOnAHandScenario) {
  Scenario s;
  const auto out = rank_all(s.lists, s.prompts, s.parsed, {});
  const auto m = by_method(out);
  ASSERT_EQ(m.size(), all_methods().size());
  EXPECT_EQ(m.at(Method::kBase), (std::vector<std::string>{"a", "b", "c"}));
  // u_point = 2.0-0.1, 4.0-0.2, 5.0-0.3.
  EXPECT_EQ(m.at(Method::kPointwise), (std::vector<std::string>{"c", "b", "a"}));
  // fix: 4.9, 0.8, 2.7.
  EXPECT_EQ(m.at(Method::kPointwiseFix), (std::vector<std::string>{"a", "c", "b"}));
  EXPECT_EQ(m.at(Method::kPairwise), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(m.at(Method::kListwise), (std::vector<std::string>{"c", "a", "b"}));
  // hybrid: a (1.9+0.1-0.2)/3, b (3.8+0.1-0.3)/3, c (4.7+0.1-0.1)/3.
  EXPECT_EQ(m.at(Method::kHybrid), (std::vector<std::string>{"c", "b", "a"}));
  // hybrid-fix: a (4.9+0.1-0.2)/3, b (0.8+0.1-0.3)/3, c (2.7+0.1-0.1)/3.
  EXPECT_EQ(m.at(Method::kHybridFix), (std::vector<std::string>{"a", "c", "b"}));
  EXPECT_EQ(out.fallbacks, 0u);
}

TEST(RankAll, WinCountModeUsesVerdicts) {
  Scenario s;
  RankOptions o;
  o.pairwise_mode = PairwiseMode::kWinCount;
  // b beats a, c beats b: wins a 0, b 1, c 1; b ahead on initial rank.
  EXPECT_EQ(by_method(rank_all(s.lists, s.prompts, s.parsed, o)).at(Method::kPairwise),
            (std::vector<std::string>{"b", "c", "a"}));
}

TEST(RankAll, FailedParsesFallBackOrDropTheUser) {
  Scenario s;
  for (auto& r : s.parsed) {
    if (r.prompt_id == "u/l") {
      r.status = parse::Status::kFailed;
      r.items.clear();
    }
  }
  const auto out = rank_all(s.lists, s.prompts, s.parsed, {});
  EXPECT_EQ(by_method(out).at(Method::kListwise), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(out.failed_by_kind.at("listwise"), 1u);
  EXPECT_GE(out.fallbacks, 1u);
  RankOptions drop;
  drop.fallback = FallbackPolicy::kDropUser;
  const auto d = rank_all(s.lists, s.prompts, s.parsed, drop);
  EXPECT_TRUE(d.rankings.empty());
  EXPECT_EQ(d.dropped_users, (std::vector<std::string>{"u"}));
}

TEST(RankAll, MissingKindsLimitTheMethods) {
  Scenario s;
  std::vector<parse::ParsedResult> only_list = {s.parsed[0]};
  const auto m = by_method(rank_all(s.lists, s.prompts, only_list, {}));
  EXPECT_EQ(m.size(), 2u);
  EXPECT_TRUE(m.count(Method::kBase) && m.count(Method::kListwise));
}

TEST(RankAll, RankingsFileRoundTrip) {
  Scenario s;
  const auto out = rank_all(s.lists, s.prompts, s.parsed, {});
  const auto path = testing::scratch_dir("rankings") / "r.jsonl";
  write_rankings(path, out);
  EXPECT_EQ(read_rankings(path), out.rankings);
}

}  // namespace
}  // namespace recrank::hybrid
