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
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "recrank/common.h"
#include "recrank/dataset.h"
#include "recrank/matrix.h"
#include "recrank/sampling.h"

namespace recrank::models {

enum class ModelKind { kMf, kLightGcn, kXSimGcl };

ModelKind parse_model_kind(std::string_view tag);
std::string_view model_tag(ModelKind kind);

struct TrainConfig {
  size_t dim = 64;
  double learning_rate = 1e-3;
  size_t epochs = 200;
  size_t batch_size = 2048;
  size_t negatives = 1;  // per positive
  size_t layers = 3;     // graph models only
  double noise_eps = 0.1;
  double cl_weight = 0.2;  // lambda
  double temperature = 0.2;
  size_t contrast_layer = 1;  // 1-based layer paired with the final view
  double l2_reg = 1e-4;
  double init_std = 0.1;
  uint64_t seed = 0;

  std::vector<std::string> validate(ModelKind kind) const;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, dim, learning_rate, epochs, batch_size, negatives, layers,
                                                noise_eps, cl_weight, temperature, contrast_layer, l2_reg, init_std,
                                                seed)

// Dense indices for the users and items of a train split, ids sorted by
// IdLess so index order equals id order.
class IdIndex {
 public:
  IdIndex() = default;
  explicit IdIndex(std::vector<std::string> sorted_ids);

  size_t size() const { return ids_.size(); }
  const std::string& id(size_t i) const { return ids_[i]; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::optional<size_t> find(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, size_t> lookup_;
};

// Symmetric-normalised user-item bipartite graph. Node order: users then
// items. Edge weight 1/sqrt(deg_u * deg_i).
class InteractionGraph {
 public:
  InteractionGraph(const IdIndex& users, const IdIndex& items,
                   const std::vector<std::pair<uint32_t, uint32_t>>& edges);

  size_t n_users() const { return n_users_; }
  size_t n_items() const { return n_items_; }
  size_t n_nodes() const { return n_users_ + n_items_; }
  size_t n_edges() const { return user_items_.size(); }

  // out = A_hat * in; both n_nodes x d. out is overwritten.
  void propagate(const Matrix& in, Matrix& out) const;

  const std::vector<uint32_t>& user_offsets() const { return user_off_; }
  const std::vector<uint32_t>& user_items() const { return user_items_; }
  const std::vector<double>& user_weights() const { return user_w_; }

 private:
  size_t n_users_;
  size_t n_items_;
  std::vector<uint32_t> user_off_, user_items_;
  std::vector<double> user_w_;
  std::vector<uint32_t> item_off_, item_users_;
  std::vector<double> item_w_;
};

struct Batch {
  std::vector<uint32_t> users;
  std::vector<uint32_t> positives;
  std::vector<uint32_t> negatives;
};

// Per-layer unit-norm noise directions (n_nodes x d each), one per
// propagation layer. Empty when noise is disabled.
using NoiseDirections = std::vector<Matrix>;

struct LossBreakdown {
  double bpr = 0.0;
  double contrastive = 0.0;
  double reg = 0.0;
  double total() const { return bpr + contrastive + reg; }
};

// Differentiable objective over the layer-0 embedding table (users then
// items). MF is the zero-layer case.
class Objective {
 public:
  Objective(ModelKind kind, const TrainConfig& cfg, size_t n_users, const InteractionGraph* graph);

  // Returns the loss; when grad is non-null it receives d loss / d base.
  LossBreakdown evaluate(const Matrix& base, const Batch& batch, const NoiseDirections& noise, Matrix* grad) const;

  // Final (noise-free unless noise is supplied) representations.
  Matrix final_embeddings(const Matrix& base, const NoiseDirections& noise = {}) const;

  size_t layers() const { return layers_; }

 private:
  void forward(const Matrix& base, const NoiseDirections& noise, std::vector<Matrix>& layer_out) const;

  ModelKind kind_;
  TrainConfig cfg_;
  const InteractionGraph* graph_;
  size_t n_users_;
  size_t layers_;
};

// Mean(-ln sigmoid(x_ui - x_uj)) over the batch and its gradient with
// respect to the final user/item rows.
double bpr_loss(const Matrix& final, size_t n_users, const Batch& batch, Matrix* grad_final);

// InfoNCE between two views (rows = entities). Adds d loss / d view to
// grad_a / grad_b when non-null. Views are L2-normalised internally.
double info_nce(const Matrix& view_a, const Matrix& view_b, double temperature, Matrix* grad_a, Matrix* grad_b);

struct EmbeddingModel {
  ModelKind kind = ModelKind::kMf;
  TrainConfig config;
  IdIndex users;
  IdIndex items;
  Matrix user_vectors;  // final representations
  Matrix item_vectors;
  std::vector<double> epoch_losses;

  size_t dim() const { return user_vectors.cols(); }
};

// Dense edges of a train split against a user/item index.
struct TrainingData {
  IdIndex users;
  IdIndex items;
  std::vector<std::pair<uint32_t, uint32_t>> edges;
  std::vector<std::vector<uint32_t>> seen;  // per user, sorted item indices
};

TrainingData index_train_split(const data::DatasetSplit& split);

// Seeded initial layer-0 table with std init_std.
Matrix initial_embeddings(size_t n_nodes, const TrainConfig& cfg);

EmbeddingModel train(ModelKind kind, const data::DatasetSplit& split, const TrainConfig& cfg);

inline EmbeddingModel train_mf(const data::DatasetSplit& s, const TrainConfig& c) { return train(ModelKind::kMf, s, c); }
inline EmbeddingModel train_lightgcn(const data::DatasetSplit& s, const TrainConfig& c) {
  return train(ModelKind::kLightGcn, s, c);
}
inline EmbeddingModel train_xsimgcl(const data::DatasetSplit& s, const TrainConfig& c) {
  return train(ModelKind::kXSimGcl, s, c);
}

// score(u, i) for every item, aligned with model.items.
std::vector<double> predict_scores(const EmbeddingModel& model, const std::string& user_id);

// Highest-scoring unseen items; ties by ascending item id.
std::vector<std::string> top_k_unseen(const EmbeddingModel& model, const std::string& user_id, size_t k,
                                      const std::set<std::string, IdLess>& seen);

// Same selection over a precomputed score vector (aligned with items).
std::vector<size_t> top_k_indices(const std::vector<double>& scores, size_t k, const std::vector<char>& excluded);

sampling::UserEmbeddingTable export_user_embeddings(const EmbeddingModel& model);

// Little-endian binary artifact; see README for the layout.
void save_model(const std::filesystem::path& path, const EmbeddingModel& model);
EmbeddingModel load_model(const std::filesystem::path& path);

std::string config_hash(ModelKind kind, const TrainConfig& cfg);

}  // namespace recrank::models
