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
#include <set>
#include <string>
#include <vector>

#include "recrank/dataset.h"
#include "recrank/recommender.h"

namespace recrank::lists {

enum class Phase { kTrain, kInfer };

Phase parse_phase(std::string_view tag);
std::string_view phase_tag(Phase p);

struct RankingList {
  std::string user_id;
  Phase phase = Phase::kInfer;
  std::vector<std::string> items;  // presentation order
  std::vector<bool> positives;     // aligned with items; all false for infer lists
  std::vector<std::string> hint_order;
  std::vector<std::string> ground_truth;  // train only: target permutation of items

  bool operator==(const RankingList&) const = default;
};

struct TrainListOptions {
  size_t n = 10;
  size_t n_pos = 3;
  uint64_t seed = 0;
};

// Per-user view of a split used by list construction.
class UserHistory {
 public:
  UserHistory(const data::DatasetSplit& split, const data::RatingScale& scale);

  const data::Interactions& train_of(const std::string& user) const;
  bool has_interacted(const std::string& user, const std::string& item) const;
  // Observed rating in train or test, if any.
  std::optional<double> rating(const std::string& user, const std::string& item) const;
  const std::vector<std::string>& item_universe() const { return universe_; }
  const data::RatingScale& scale() const { return scale_; }

 private:
  std::map<std::string, data::Interactions, IdLess> train_;
  std::map<std::string, std::map<std::string, double, IdLess>, IdLess> touched_;  // train and test
  std::vector<std::string> universe_;
  data::RatingScale scale_;
};

// n_pos liked train items plus uniformly drawn unobserved negatives,
// shuffled. Throws DataError when the user lacks positives or negatives.
RankingList build_train_list(const std::string& user, const UserHistory& history, const TrainListOptions& opts);

// Model top-n over unseen items; hint order equals the list order.
RankingList build_infer_list(const std::string& user, const models::EmbeddingModel& model,
                             const UserHistory& history, size_t n);

// Sets hint_order to the list items ordered by model score (ties by id).
void apply_model_hint(RankingList& list, const models::EmbeddingModel& model);

struct BuildResult {
  std::vector<RankingList> lists;
  std::vector<std::string> skipped;  // "user: reason"
};

BuildResult build_train_lists(const std::vector<std::string>& users, const UserHistory& history,
                              const TrainListOptions& opts, const models::EmbeddingModel* model);
BuildResult build_infer_lists(const std::vector<std::string>& users, const models::EmbeddingModel& model,
                              const UserHistory& history, size_t n);

void write_lists(const std::filesystem::path& path, const std::vector<RankingList>& lists);
std::vector<RankingList> read_lists(const std::filesystem::path& path);

}  // namespace recrank::lists
