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


#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "recrank/parser.h"
#include "recrank/prompt.h"
#include "recrank/ranklist.h"

namespace recrank::hybrid {

struct UtilityWeights {
  double alpha1 = 1.0 / 3.0;  // pointwise
  double alpha2 = 1.0 / 3.0;  // pairwise
  double alpha3 = 1.0 / 3.0;  // listwise
  double c1 = 0.1;
  double c2 = 0.1;
  double c3 = 0.1;

  std::vector<std::string> validate() const;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(UtilityWeights, alpha1, alpha2, alpha3, c1, c2, c3)

enum class PairwiseMode { kConstant, kWinCount };
PairwiseMode parse_pairwise_mode(std::string_view tag);
std::string_view pairwise_mode_tag(PairwiseMode m);

// P - m * C1
double utility_pointwise(double p, size_t m, double c1);
// -m' * C3
double utility_listwise(size_t m_prime, double c3);

struct PairVerdict {
  std::string item_a;
  std::string item_b;
  bool a_preferred = false;
};

// Constant mode gives every item C2; win-count mode gives C2 * wins.
std::map<std::string, double> utility_pairwise(const std::vector<std::string>& items,
                                               const std::vector<PairVerdict>& verdicts, double c2,
                                               PairwiseMode mode);

struct ItemUtility {
  std::string item_id;
  size_t m = 0;        // initial-model rank, 1-based
  size_t m_prime = 0;  // LLM listwise rank, 1-based
  double p = 0.0;
  double u_point = 0.0;
  double u_pair = 0.0;
  double u_list = 0.0;
  double u_hybrid = 0.0;

  bool operator==(const ItemUtility&) const = default;
};

// Fills u_hybrid and sorts descending; ties by m, then item id.
std::vector<ItemUtility> hybrid_combine(std::vector<ItemUtility> rows, const UtilityWeights& w);

enum class Method { kBase, kPointwise, kPointwiseFix, kPairwise, kListwise, kHybrid, kHybridFix };
Method parse_method(std::string_view tag);
std::string_view method_tag(Method m);
const std::vector<Method>& all_methods();

enum class FallbackPolicy { kHint, kDropUser };
FallbackPolicy parse_fallback(std::string_view tag);
std::string_view fallback_tag(FallbackPolicy f);

struct RankOptions {
  UtilityWeights weights;
  PairwiseMode pairwise_mode = PairwiseMode::kConstant;
  FallbackPolicy fallback = FallbackPolicy::kHint;
};

struct UserRanking {
  std::string user_id;
  Method method = Method::kBase;
  std::vector<std::string> items;  // final order
  std::vector<ItemUtility> utilities;
  size_t fallbacks = 0;  // parsed results replaced by their hint

  bool operator==(const UserRanking&) const = default;
};

struct RankOutput {
  std::vector<UserRanking> rankings;  // user-major, methods in all_methods() order
  std::vector<std::string> dropped_users;
  std::map<std::string, size_t> parsed_by_kind;
  std::map<std::string, size_t> failed_by_kind;
  std::map<std::string, size_t> partial_by_kind;
  size_t fallbacks = 0;
};

// Ranks every inference list with every method whose prompt kinds were
// parsed; base is always present.
RankOutput rank_all(const std::vector<lists::RankingList>& lists, const std::vector<prompts::PromptInstance>& prompts,
                    const std::vector<parse::ParsedResult>& parsed, const RankOptions& opts);

void write_rankings(const std::filesystem::path& path, const RankOutput& out);
std::vector<UserRanking> read_rankings(const std::filesystem::path& path);

}  // namespace recrank::hybrid
