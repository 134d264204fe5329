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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "recrank/common.h"

namespace recrank::data {

struct Interaction {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  int64_t timestamp = 0;  // 0 = no timestamp recorded
  bool simulated_ts = false;

  bool operator==(const Interaction&) const = default;
};

using Interactions = std::vector<Interaction>;

struct Catalog {
  std::map<std::string, std::string, IdLess> titles;

  // Throws DataError naming the item when no title is known.
  const std::string& title(const std::string& item_id) const;
  bool contains(const std::string& item_id) const { return titles.count(item_id) != 0; }
};

enum class Format { kMl100k, kMl1m, kBookCrossing, kAmazonMusic, kGenericTsv };

Format parse_format(std::string_view tag);
std::string_view format_tag(Format f);

struct RatingScale {
  double min = 1.0;
  double max = 5.0;
  double liked_min = 4.0;     // rating >= liked_min -> liked
  double disliked_max = 2.0;  // rating <= disliked_max -> disliked

  static RatingScale five_point() { return {}; }
  static RatingScale ten_point() { return {1.0, 10.0, 7.0, 4.0}; }
  static RatingScale for_format(Format f);
};

struct LoadOptions {
  size_t max_malformed = 0;
  // Title sidecar for formats without one (amazon-music, generic-tsv):
  // TSV of item_id<TAB>title. Missing titles fall back to the item id.
  std::optional<std::filesystem::path> catalog_path;
};

struct LoadResult {
  Interactions interactions;
  Catalog catalog;
  std::vector<std::string> diagnostics;  // "line N: reason"
  size_t duplicates_collapsed = 0;
  // Size of the declared item id space, when the raw format implies one
  // (ML-1M ids run to 3,952 although fewer items are rated).
  std::optional<size_t> item_universe;
};

// path may be the ratings file or the directory holding it.
LoadResult load_raw(const std::filesystem::path& path, Format format, const LoadOptions& opts = {});

// Removes users and items with fewer than k interactions until none remain.
Interactions k_core_filter(const Interactions& interactions, size_t k);

// Assigns distinct pseudo-random timestamps drawn without replacement.
Interactions simulate_timestamps(const Interactions& interactions, uint64_t seed, bool force = false);

bool has_real_timestamps(const Interactions& interactions);

struct DatasetSplit {
  Interactions train;
  Interactions test;
  std::map<std::string, std::string, IdLess> per_user_test_item;
  std::vector<std::string> train_only_users;  // single-interaction users
};

// Per-user leave-last-out. Equal timestamps resolve to the later input row.
DatasetSplit temporal_split(const Interactions& interactions);

enum class Preference { kLiked, kNeutral, kDisliked };

Preference label_preference(double rating, const RatingScale& scale);
std::vector<Preference> label_preferences(const Interactions& interactions, const RatingScale& scale);

struct DatasetStats {
  size_t n_users = 0;
  size_t n_items = 0;
  size_t n_interactions = 0;
  double density = 0.0;

  bool operator==(const DatasetStats&) const = default;
};

DatasetStats compute_stats(const Interactions& interactions, std::optional<size_t> item_universe = std::nullopt);

// Canonical interaction TSV with header: user_id item_id rating timestamp simulated_ts
void write_interactions(const std::filesystem::path& path, const Interactions& interactions);
Interactions read_interactions(const std::filesystem::path& path);

void write_catalog(const std::filesystem::path& path, const Catalog& catalog);
Catalog read_catalog(const std::filesystem::path& path);

void write_stats(const std::filesystem::path& path, const DatasetStats& stats);
DatasetStats read_stats(const std::filesystem::path& path);

// Prepared dataset directory layout.
struct PreparedPaths {
  std::filesystem::path dir;
  std::filesystem::path interactions() const { return dir / "interactions.tsv"; }
  std::filesystem::path catalog() const { return dir / "items.tsv"; }
  std::filesystem::path stats() const { return dir / "stats.json"; }
  std::filesystem::path train() const { return dir / "train.tsv"; }
  std::filesystem::path test() const { return dir / "test.tsv"; }
  std::filesystem::path info() const { return dir / "dataset.json"; }
};

struct PrepareOptions {
  Format format = Format::kGenericTsv;
  size_t k_core = 0;  // 0 or 1 disables filtering
  uint64_t seed = 0;
  bool force_simulated_timestamps = false;
  LoadOptions load;
};

struct PreparedDataset {
  Interactions interactions;
  Catalog catalog;
  DatasetStats stats;
  DatasetSplit split;
  RatingScale scale;
  Format format = Format::kGenericTsv;
};

// load -> (optional) k-core -> simulate timestamps when absent -> split.
PreparedDataset prepare(const std::filesystem::path& raw, const PrepareOptions& opts);

void write_prepared(const PreparedPaths& out, const PreparedDataset& ds);
PreparedDataset read_prepared(const PreparedPaths& in);

DatasetSplit read_split(const PreparedPaths& in);

}  // namespace recrank::data
