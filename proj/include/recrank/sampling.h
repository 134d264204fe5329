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
#include <string>
#include <vector>

#include "recrank/common.h"
#include "recrank/matrix.h"

namespace recrank::sampling {

struct UserEmbeddingTable {
  std::vector<std::string> user_ids;
  Matrix vectors;  // one row per user

  size_t size() const { return user_ids.size(); }
  size_t dim() const { return vectors.cols(); }
};

void write_embeddings(const std::filesystem::path& path, const UserEmbeddingTable& table);
UserEmbeddingTable read_embeddings(const std::filesystem::path& path);

// Copy with every row scaled to unit L2 norm (zero rows stay zero).
UserEmbeddingTable l2_normalized(const UserEmbeddingTable& table);

using ProbabilityMap = std::map<std::string, double, IdLess>;

// kAll takes every eligible user once, in id order; n_samples is ignored.
enum class Strategy { kImportance, kKmeans, kDbscan, kRandom, kComposite, kAll };

Strategy parse_strategy(std::string_view tag);
std::string_view strategy_tag(Strategy s);

struct SamplingPlan {
  Strategy strategy = Strategy::kComposite;
  // Clustering stage used by the composite strategy (kKmeans or kDbscan).
  Strategy composite_clustering = Strategy::kKmeans;
  size_t n_samples = 100;
  double penalty_base = 0.9;  // C in (0, 1)
  size_t kmeans_k = 10;
  double dbscan_eps = 0.5;
  size_t dbscan_min_pts = 5;
  uint64_t seed = 0;

  // Returns every violated constraint; empty when valid.
  std::vector<std::string> validate() const;
};

struct SampledUserSet {
  std::vector<std::string> draws;
  std::map<std::string, size_t, IdLess> multiplicity;

  static SampledUserSet from_draws(std::vector<std::string> draws);
  void append(const SampledUserSet& other);
};

// p(u) = ln(q_u) / sum_v ln(q_v); ln(1 + q) when any user has q = 1.
// Users whose smoothed mass is zero are excluded.
ProbabilityMap importance_probabilities(const std::map<std::string, size_t, IdLess>& counts);

struct KmeansResult {
  std::vector<int> labels;  // aligned with the table rows, 0..K-1
  Matrix centroids;
  double inertia = 0.0;
  size_t iterations = 0;
};

struct KmeansOptions {
  size_t max_iterations = 300;
  size_t restarts = 10;  // best inertia over independent k-means++ seedings
};

KmeansResult kmeans_cluster(const UserEmbeddingTable& emb, size_t k, uint64_t seed, const KmeansOptions& opts = {});

inline constexpr int kNoise = -1;

// Euclidean DBSCAN. A point is core when its eps-neighbourhood (itself
// included) holds at least min_pts points.
std::vector<int> dbscan_cluster(const UserEmbeddingTable& emb, double eps, size_t min_pts);

// p(u) proportional to the size of u's cluster; label -1 carries no mass.
ProbabilityMap cluster_proportional_probabilities(const std::vector<std::string>& users, const std::vector<int>& labels);

SampledUserSet sample_from(const ProbabilityMap& probs, size_t n, uint64_t seed);

SampledUserSet cluster_proportional_sample(const std::vector<std::string>& users, const std::vector<int>& labels,
                                           size_t n, uint64_t seed);

SampledUserSet random_sample(const std::vector<std::string>& users, size_t n, uint64_t seed);

// Final mass(u) = C^{M(u)} * M(u) / |merged|, renormalised.
ProbabilityMap penalty_probabilities(const SampledUserSet& merged, double penalty_base);

SampledUserSet penalty_resample(const SampledUserSet& merged, const SamplingPlan& plan);

struct SamplingInputs {
  std::map<std::string, size_t, IdLess> interaction_counts;  // q_u over the train split
  const UserEmbeddingTable* embeddings = nullptr;             // required for clustering strategies
};

// Runs the plan. Composite = importance (first half) + clustering (second
// half) merged, then penalty resampling to n_samples.
SampledUserSet run_plan(const SamplingPlan& plan, const SamplingInputs& inputs);

void write_samples(const std::filesystem::path& path, const SampledUserSet& set);
SampledUserSet read_samples(const std::filesystem::path& path);

}  // namespace recrank::sampling
