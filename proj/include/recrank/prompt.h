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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "recrank/dataset.h"
#include "recrank/ranklist.h"

namespace recrank::prompts {

enum class Kind { kListwise, kPointwise, kPointwiseFix, kPairwise };

// Accepts "pointwise-fix" and "pointwise_fix".
Kind parse_kind(std::string_view tag);
std::string_view kind_tag(Kind k);  // "pointwise_fix" form
const std::vector<Kind>& all_kinds();

struct DomainWords {
  std::string singular = "movie";
  std::string plural = "movies";

  static DomainWords for_format(data::Format f);
};

// Template text with {name} placeholders: domain, domains, liked,
// disliked, candidates, hint, target, item_a, item_b, score.
struct Templates {
  std::string listwise;
  std::string pointwise;
  std::string pointwise_fix;
  std::string pairwise;

  static Templates defaults();
  const std::string& of(Kind k) const;
};

enum class HintSource {
  kModel,  // score derived from the initial model's rank
  kLeaky,  // observed rating when the user interacted with the item, else 0.0
};

HintSource parse_hint_source(std::string_view tag);
std::string_view hint_source_tag(HintSource h);

struct PromptConfig {
  std::vector<Kind> kinds = all_kinds();
  size_t history_liked = 20;
  size_t history_disliked = 20;
  size_t context_budget = 2048;  // tokens, estimated as ceil(bytes / 4)
  HintSource pointwise_hint = HintSource::kModel;
  bool pairwise_round_robin = false;
  uint64_t seed = 0;
  Templates templates = Templates::defaults();

  std::vector<std::string> validate() const;
};

// Titles in chronological order.
struct History {
  std::vector<std::string> liked;
  std::vector<std::string> disliked;
};

struct PromptInstance {
  std::string id;
  Kind kind = Kind::kListwise;
  lists::Phase phase = lists::Phase::kInfer;
  std::string user_id;
  std::string text;
  // listwise: candidates in presentation order; pointwise: {target};
  // pairwise: {item_a, item_b}.
  std::vector<std::string> payload;
  std::vector<std::string> hint_items;  // listwise order or {winner}
  std::optional<double> hint_score;
  size_t hint_rank = 0;  // pointwise: 1-based rank of the target in the hint order
  std::string expected_answer;

  bool operator==(const PromptInstance&) const = default;
};

size_t estimate_tokens(std::string_view text);

// Substitutes {name} placeholders; unknown names throw InvalidArgument.
std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& slots);

// "Title, Title" or "None" for an empty list.
std::string join_titles(const std::vector<std::string>& titles);

// Numbered "1. Title" lines joined by newlines.
std::string numbered_list(const std::vector<std::string>& titles);

// Model-hint score for 1-based rank m of n: 5 - 4(m - 1)/(n - 1).
double rank_hint_score(size_t m, size_t n);

// Maps a rating onto the 1-5 prompt scale (ten-point ratings halve).
double to_prompt_scale(double rating, const data::RatingScale& scale);

struct RenderContext {
  const data::Catalog* catalog = nullptr;
  DomainWords words;
  const Templates* templates = nullptr;
};

PromptInstance build_listwise_prompt(const lists::RankingList& list, const History& history,
                                     const RenderContext& ctx);
PromptInstance build_pointwise_prompt(const std::string& user, const std::string& target, const History& history,
                                      std::optional<double> hint_score, bool fix, const RenderContext& ctx);
PromptInstance build_pairwise_prompt(const std::string& user, const std::string& item_a, const std::string& item_b,
                                     const History& history, const std::string& hint_winner,
                                     const RenderContext& ctx);

// Pairs compared for a hint order: adjacent by default, every i < j when
// round_robin is set. The first element is the model-preferred item.
std::vector<std::pair<std::string, std::string>> pair_schedule(const std::vector<std::string>& hint_order,
                                                               bool round_robin);

// Sampled liked/disliked train history excluding the given items, each
// capped and sorted chronologically.
struct HistoryEntry {
  std::string item_id;
  int64_t timestamp = 0;
  bool liked = false;
};
std::vector<HistoryEntry> sample_history(const std::string& user, const lists::UserHistory& history,
                                         const std::vector<std::string>& exclude, const PromptConfig& cfg);

// Renders every configured kind for every list, truncating history
// oldest-first to meet the context budget.
std::vector<PromptInstance> generate_prompts(const std::vector<lists::RankingList>& lists,
                                             const lists::UserHistory& history, const data::Catalog& catalog,
                                             const DomainWords& words, const PromptConfig& cfg);

struct LintReport {
  size_t checked = 0;  // train-phase pointwise instances
  std::map<std::string, size_t> checked_by_kind;
  std::map<std::string, size_t> flagged_by_kind;
  std::vector<std::string> flagged_ids;

  double flagged_fraction(Kind k) const;
};

// Flags train-phase pointwise prompts whose hint equals the gold output.
LintReport lint_leakage(const std::vector<PromptInstance>& instances);

struct CorpusManifest {
  std::map<std::string, size_t> counts;
  size_t total = 0;
  uint64_t seed = 0;
  std::string config_hash;
};

// Writes corpus.jsonl (instruction/input/output) and corpus_manifest.json
// into out_dir. An empty mix emits every instance.
CorpusManifest emit_tuning_corpus(const std::vector<PromptInstance>& instances,
                                  const std::map<std::string, double>& mix, uint64_t seed,
                                  const std::string& config_hash, const std::filesystem::path& out_dir);

nlohmann::json to_json(const PromptInstance& p);
PromptInstance prompt_from_json(const nlohmann::json& j);
void write_prompts(const std::filesystem::path& path, const std::vector<PromptInstance>& prompts);
std::vector<PromptInstance> read_prompts(const std::filesystem::path& path);

nlohmann::json to_json(const PromptConfig& cfg);
PromptConfig prompt_config_from_json(const nlohmann::json& j);

}  // namespace recrank::prompts
