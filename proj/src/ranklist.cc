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


#include "recrank/ranklist.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <json.hpp>

#include "recrank/rng.h"

namespace recrank::lists {

namespace fs = std::filesystem;
using nlohmann::json;

Phase parse_phase(std::string_view tag) {
  if (tag == "train") return Phase::kTrain;
  if (tag == "infer") return Phase::kInfer;
  throw InvalidArgument("unknown phase '" + std::string(tag) + "'");
}

std::string_view phase_tag(Phase p) { return p == Phase::kTrain ? "train" : "infer"; }

UserHistory::UserHistory(const data::DatasetSplit& split, const data::RatingScale& scale) : scale_(scale) {
  std::set<std::string, IdLess> items;
  for (const auto& x : split.train) {
    train_[x.user_id].push_back(x);
    touched_[x.user_id][x.item_id] = x.rating;
    items.insert(x.item_id);
  }
  for (const auto& x : split.test) {
    touched_[x.user_id][x.item_id] = x.rating;
    items.insert(x.item_id);
  }
  universe_.assign(items.begin(), items.end());
}

const data::Interactions& UserHistory::train_of(const std::string& user) const {
  static const data::Interactions kEmpty;
  auto it = train_.find(user);
  return it == train_.end() ? kEmpty : it->second;
}

bool UserHistory::has_interacted(const std::string& user, const std::string& item) const {
  auto it = touched_.find(user);
  return it != touched_.end() && it->second.count(item) != 0;
}

std::optional<double> UserHistory::rating(const std::string& user, const std::string& item) const {
  auto it = touched_.find(user);
  if (it == touched_.end()) return std::nullopt;
  auto jt = it->second.find(item);
  if (jt == it->second.end()) return std::nullopt;
  return jt->second;
}

RankingList build_train_list(const std::string& user, const UserHistory& history, const TrainListOptions& opts) {
  if (opts.n < 1 || opts.n_pos < 1 || opts.n_pos > opts.n) {
    throw InvalidArgument("lists need 1 <= n_pos <= n");
  }
  Rng rng(Rng::derive(opts.seed, stable_hash64(user)));
  data::Interactions liked;
  for (const auto& x : history.train_of(user)) {
    if (data::label_preference(x.rating, history.scale()) == data::Preference::kLiked) liked.push_back(x);
  }
  if (liked.size() < opts.n_pos) {
    throw DataError("user " + user + " has " + std::to_string(liked.size()) + " liked train items, needs " +
                    std::to_string(opts.n_pos));
  }
  std::vector<std::string> unobserved;
  for (const auto& item : history.item_universe()) {
    if (!history.has_interacted(user, item)) unobserved.push_back(item);
  }
  const size_t n_neg = opts.n - opts.n_pos;
  if (unobserved.size() < n_neg) {
    throw DataError("user " + user + " has too few unobserved items for negatives");
  }
  if (unobserved.empty()) throw DataError("user " + user + " has no unobserved items");

  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  auto take = [&rng](auto& v, size_t k) {
    for (size_t i = 0; i < k; ++i) std::swap(v[i], v[i + rng.below(v.size() - i)]);
    v.resize(k);
  };
  take(liked, opts.n_pos);
  take(unobserved, n_neg);

  std::sort(liked.begin(), liked.end(), [](const data::Interaction& a, const data::Interaction& b) {
    if (a.rating != b.rating) return a.rating > b.rating;
    if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
    return id_less(a.item_id, b.item_id);
  });

  RankingList list;
  list.user_id = user;
  list.phase = Phase::kTrain;
  for (const auto& x : liked) list.ground_truth.push_back(x.item_id);
  for (const auto& i : unobserved) list.ground_truth.push_back(i);
  list.items = list.ground_truth;
  rng.shuffle(list.items);
  std::set<std::string> pos;
  for (const auto& x : liked) pos.insert(x.item_id);
  for (const auto& i : list.items) list.positives.push_back(pos.count(i) != 0);
  list.hint_order = list.items;
  return list;
}

RankingList build_infer_list(const std::string& user, const models::EmbeddingModel& model,
                             const UserHistory& history, size_t n) {
  std::set<std::string, IdLess> seen;
  for (const auto& x : history.train_of(user)) seen.insert(x.item_id);
  RankingList list;
  list.user_id = user;
  list.phase = Phase::kInfer;
  list.items = models::top_k_unseen(model, user, n, seen);
  list.positives.assign(list.items.size(), false);
  list.hint_order = list.items;
  return list;
}

void apply_model_hint(RankingList& list, const models::EmbeddingModel& model) {
  const auto scores = models::predict_scores(model, list.user_id);
  auto score_of = [&](const std::string& item) {
    auto i = model.items.find(item);
    // Items unknown to the model rank last.
    return i ? scores[*i] : -std::numeric_limits<double>::infinity();
  };
  list.hint_order = list.items;
  std::stable_sort(list.hint_order.begin(), list.hint_order.end(), [&](const std::string& a, const std::string& b) {
    const double sa = score_of(a), sb = score_of(b);
    if (sa != sb) return sa > sb;
    return id_less(a, b);
  });
}

BuildResult build_train_lists(const std::vector<std::string>& users, const UserHistory& history,
                              const TrainListOptions& opts, const models::EmbeddingModel* model) {
  BuildResult r;
  for (const auto& u : users) {
    try {
      RankingList l = build_train_list(u, history, opts);
      if (model) apply_model_hint(l, *model);
      r.lists.push_back(std::move(l));
    } catch (const DataError& e) {
      spdlog::warn("skipping train list: {}", e.what());
      r.skipped.push_back(u + ": " + e.what());
    }
  }
  return r;
}

BuildResult build_infer_lists(const std::vector<std::string>& users, const models::EmbeddingModel& model,
                              const UserHistory& history, size_t n) {
  BuildResult r;
  for (const auto& u : users) {
    if (!model.users.find(u)) {
      r.skipped.push_back(u + ": unknown to model");
      continue;
    }
    r.lists.push_back(build_infer_list(u, model, history, n));
  }
  return r;
}

void write_lists(const fs::path& path, const std::vector<RankingList>& lists) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : lists) {
    json j;
    j["user_id"] = l.user_id;
    j["phase"] = phase_tag(l.phase);
    j["items"] = l.items;
    j["positives"] = l.positives;
    j["hint_order"] = l.hint_order;
    if (l.phase == Phase::kTrain) j["ground_truth"] = l.ground_truth;
    out << j.dump() << '\n';
  }
}

std::vector<RankingList> read_lists(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<RankingList> lists;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      RankingList l;
      l.user_id = j.at("user_id").get<std::string>();
      l.phase = parse_phase(j.at("phase").get<std::string>());
      l.items = j.at("items").get<std::vector<std::string>>();
      l.positives = j.at("positives").get<std::vector<bool>>();
      l.hint_order = j.at("hint_order").get<std::vector<std::string>>();
      if (j.contains("ground_truth")) l.ground_truth = j["ground_truth"].get<std::vector<std::string>>();
      if (l.positives.size() != l.items.size()) throw DataError("positives mask length differs from items");
      lists.push_back(std::move(l));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return lists;
}

}  // namespace recrank::lists
