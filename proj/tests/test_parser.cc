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
#include <set>

#include "recrank/parser.h"
#include "recrank/rng.h"
#include "support/fixture.h"

namespace recrank::parse {
namespace {

data::Catalog films() {
  data::Catalog c;
  c.titles = {{"1", "Alien"}, {"2", "Heat"}, {"3", "Up"}, {"4", "Star Wars (1977)"}, {"5", "Twelve Monkeys (1995)"},
              {"6", "Monkeys"}};
  return c;
}

const std::vector<std::string> kThree = {"1", "2", "3"};

TEST(Listwise, ExactTitlesOnOneLine) {
  const auto r = parse_listwise("1. Alien 2. Heat 3. Up", kThree, {"3", "2", "1"}, films());
  EXPECT_EQ(r.status, Status::kOk) << r.note;
  EXPECT_EQ(r.items, (std::vector<std::string>{"1", "2", "3"}));
}

TEST(Listwise, NumberedLinesInOtherOrder) {
  const auto r = parse_listwise("Here is my ranking:\n1. Up\n2. Alien\n3. Heat\n", kThree, kThree, films());
  EXPECT_EQ(r.items, (std::vector<std::string>{"3", "1", "2"}));
  EXPECT_NE(r.status, Status::kFailed);
}

TEST(Listwise, DuplicateDroppedAndMissingAppendedInHintOrder) {
  const std::vector<std::string> c = {"1", "2", "3", "4"};
  const auto r = parse_listwise("1. Heat\n2. Heat\n3. Alien", c, {"4", "3", "2", "1"}, films());
  EXPECT_EQ(r.status, Status::kPartial);
  EXPECT_EQ(r.items, (std::vector<std::string>{"2", "1", "4", "3"}));
}

TEST(Listwise, CaseAndPunctuationInsensitiveMatch) {
  const std::vector<std::string> c = {"4", "5"};
  const auto r = parse_listwise("1. star wars 1977\n2. TWELVE MONKEYS (1995)!", c, c, films());
  EXPECT_EQ(r.items, (std::vector<std::string>{"4", "5"}));
  EXPECT_NE(r.status, Status::kFailed);
}

TEST(Listwise, FuzzyThresholdSeparatesNearTitles) {
  EXPECT_NEAR(token_set_similarity("Twelve Monkeys (1995)", "twelve monkeys 1995"), 1.0, 1e-12);
  EXPECT_NEAR(token_set_similarity("a b c", "a b d"), 2.0 / 4.0, 1e-12);
  // "Monkeys" shares one of three tokens with "Twelve Monkeys (1995)": no match.
  const std::vector<std::string> c = {"5", "2"};
  const auto r = parse_listwise("1. Monkeys\n2. Heat", c, {"5", "2"}, films());
  EXPECT_EQ(r.items, (std::vector<std::string>{"2", "5"}));
  EXPECT_EQ(r.status, Status::kPartial);
}

TEST(Listwise, ProseFails) {
  const auto r = parse_listwise("I am unable to rank these films without more context.", kThree, kThree, films());
  EXPECT_EQ(r.status, Status::kFailed);
  EXPECT_FALSE(r.note.empty());
}

TEST(Listwise, NonCandidateTitlesAreIgnored) {
  const auto r = parse_listwise("1. Star Wars (1977)\n2. Up\n3. Heat\n4. Alien", kThree, kThree, films());
  EXPECT_EQ(r.items, (std::vector<std::string>{"3", "2", "1"}));
  EXPECT_EQ(r.status, Status::kPartial);
}

TEST(Listwise, OutputIsAlwaysACandidatePermutation) {
  const auto cat = films();
  const std::vector<std::string> c = {"1", "2", "3", "4", "5"};
  const std::vector<std::string> words = {"Alien", "Heat", "Up", "Star", "Wars", "(1977)", "1.", "2.", "\n", ",",
                                          "Twelve", "Monkeys", "(1995)", "the", "Yes", "3."};
  Rng rng(14);
  for (int trial = 0; trial < 500; ++trial) {
    std::string raw;
    const size_t n = rng.below(12);
    for (size_t k = 0; k < n; ++k) raw += words[rng.below(words.size())] + " ";
    const auto r = parse_listwise(raw, c, c, cat);
    if (r.status == Status::kFailed) continue;
    auto s = r.items;
    std::sort(s.begin(), s.end());
    EXPECT_EQ(s, c) << raw;
  }
}

TEST(Pointwise, Examples) {
  auto r = parse_pointwise("The relevance score is 4.5.");
  EXPECT_EQ(r.status, Status::kOk);
  EXPECT_DOUBLE_EQ(*r.score, 4.5);
  r = parse_pointwise("10/10!");
  EXPECT_EQ(r.status, Status::kPartial);
  EXPECT_DOUBLE_EQ(*r.score, 5.0);
  r = parse_pointwise("I cannot answer.");
  EXPECT_EQ(r.status, Status::kFailed);
  EXPECT_FALSE(r.score.has_value());
  r = parse_pointwise("0.2");
  EXPECT_EQ(r.status, Status::kPartial);
  EXPECT_DOUBLE_EQ(*r.score, 1.0);
  EXPECT_DOUBLE_EQ(*parse_pointwise("3").score, 3.0);
}

TEST(Pairwise, Examples) {
  EXPECT_EQ(parse_pairwise("Yes.").verdict, Verdict::kYes);
  EXPECT_EQ(parse_pairwise("no, they would not").verdict, Verdict::kNo);
  EXPECT_EQ(parse_pairwise("  YES").verdict, Verdict::kYes);
  EXPECT_EQ(parse_pairwise("Maybe").status, Status::kFailed);
  EXPECT_EQ(parse_pairwise("yes and no").status, Status::kFailed);
  EXPECT_EQ(parse_pairwise("").status, Status::kFailed);
}

prompts::PromptInstance prompt(prompts::Kind k) {
  prompts::PromptInstance p;
  p.id = "u/x";
  p.user_id = "u";
  p.kind = k;
  if (k == prompts::Kind::kListwise) {
    p.payload = kThree;
    p.hint_items = {"2", "3", "1"};
  } else if (k == prompts::Kind::kPairwise) {
    p.payload = {"1", "2"};
    p.hint_items = {"2"};
  } else {
    p.payload = {"1"};
    if (k == prompts::Kind::kPointwise) p.hint_score = 4.5;
  }
  p.hint_rank = 2;
  return p;
}

TEST(Dispatch, FailedCompletionFailsAndCopiesProvenance) {
  llm::Completion c;
  c.prompt_id = "u/x";
  c.ok = false;
  c.error = "HTTP 500";
  const auto r = parse_completion(prompt(prompts::Kind::kListwise), c, films());
  EXPECT_EQ(r.status, Status::kFailed);
  EXPECT_EQ(r.user_id, "u");
  EXPECT_EQ(r.payload, kThree);
  EXPECT_EQ(r.hint_rank, 2u);
  c.ok = true;
  c.text = "1. Up\n2. Heat\n3. Alien";
  EXPECT_EQ(parse_completion(prompt(prompts::Kind::kListwise), c, films()).items,
            (std::vector<std::string>{"3", "2", "1"}));
}

TEST(Fallback, UsesTheHintOrNeutralScore) {
  ParsedResult r;
  r.status = Status::kFailed;
  auto lw = r;
  apply_fallback(lw, prompt(prompts::Kind::kListwise));
  EXPECT_TRUE(lw.fallback_applied);
  EXPECT_EQ(lw.items, (std::vector<std::string>{"2", "3", "1"}));
  auto pw = r;
  apply_fallback(pw, prompt(prompts::Kind::kPointwise));
  EXPECT_DOUBLE_EQ(*pw.score, 4.5);
  auto fx = r;
  apply_fallback(fx, prompt(prompts::Kind::kPointwiseFix));
  EXPECT_DOUBLE_EQ(*fx.score, kNeutralScore);
  auto pr = r;
  apply_fallback(pr, prompt(prompts::Kind::kPairwise));
  EXPECT_EQ(pr.verdict, Verdict::kNo);  // hint prefers the second item
}

TEST(Normalise, TitlesCollapse) {
  EXPECT_EQ(normalize_title("  Star   Wars: (1977)!! "), "star wars 1977");
  EXPECT_EQ(normalize_title(""), "");
}

TEST(Files, ParsedRoundTrip) {
  std::vector<ParsedResult> rs = {parse_pointwise("4"), parse_pairwise("No."),
                                  parse_listwise("1. Up", kThree, kThree, films())};
  rs[0].prompt_id = "a";
  rs[1].prompt_id = "b";
  rs[2].prompt_id = "c";
  const auto path = testing::scratch_dir("parsed") / "p.jsonl";
  write_parsed(path, rs);
  EXPECT_EQ(read_parsed(path), rs);
}

}  // namespace
}  // namespace recrank::parse
