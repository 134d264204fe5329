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
#include <optional>
#include <string>
#include <vector>

#include "recrank/dataset.h"
#include "recrank/llm.h"
#include "recrank/prompt.h"

namespace recrank::parse {

enum class Status { kOk, kPartial, kFailed };
enum class Verdict { kYes, kNo };

std::string_view status_tag(Status s);
Status parse_status(std::string_view tag);

struct ParsedResult {
  std::string prompt_id;
  std::string user_id;
  prompts::Kind kind = prompts::Kind::kListwise;
  std::vector<std::string> payload;  // copied from the prompt
  Status status = Status::kFailed;
  std::vector<std::string> items;  // listwise: full candidate permutation
  std::optional<double> score;     // pointwise
  std::optional<Verdict> verdict;  // pairwise
  bool fallback_applied = false;
  size_t hint_rank = 0;
  std::string note;  // reason for partial/failed

  bool operator==(const ParsedResult&) const = default;
};

// Case-folded, punctuation-free, single-spaced.
std::string normalize_title(std::string_view s);

// |A intersect B| / |A union B| over normalized whitespace tokens.
double token_set_similarity(std::string_view a, std::string_view b);

constexpr double kFuzzyThreshold = 0.9;

// candidates: presentation order; hint_order: used to append items the
// answer left out.
ParsedResult parse_listwise(std::string_view raw, const std::vector<std::string>& candidates,
                            const std::vector<std::string>& hint_order, const data::Catalog& catalog);
ParsedResult parse_pointwise(std::string_view raw);
ParsedResult parse_pairwise(std::string_view raw);

// Dispatches on the prompt kind; a failed completion yields kFailed.
ParsedResult parse_completion(const prompts::PromptInstance& prompt, const llm::Completion& completion,
                              const data::Catalog& catalog);

constexpr double kNeutralScore = 3.0;

// Replaces a failed result with the prompt's hint: listwise hint order,
// pointwise hint score (neutral score without one), pairwise hint winner.
void apply_fallback(ParsedResult& r, const prompts::PromptInstance& prompt);

nlohmann::json to_json(const ParsedResult& r);
ParsedResult parsed_from_json(const nlohmann::json& j);
void write_parsed(const std::filesystem::path& path, const std::vector<ParsedResult>& results);
std::vector<ParsedResult> read_parsed(const std::filesystem::path& path);

}  // namespace recrank::parse
