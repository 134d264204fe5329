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

#include "recrank/recommender.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>

#include "recrank/hash.h"
#include "recrank/kernels.h"
#include "recrank/rng.h"

namespace recrank::models {

namespace fs = std::filesystem;

ModelKind parse_model_kind(std::string_view tag) {
  if (tag == "mf") return ModelKind::kMf;
  if (tag == "lightgcn") return ModelKind::kLightGcn;
  if (tag == "xsimgcl") return ModelKind::kXSimGcl;
  throw InvalidArgument("unknown model '" + std::string(tag) + "'");
}

std::string_view model_tag(ModelKind kind) {
  switch (kind) {
    case ModelKind::kMf:
      return "mf";
    case ModelKind::kLightGcn:
      return "lightgcn";
    case ModelKind::kXSimGcl:
      return "xsimgcl";
  }
  return "mf";
}

std::vector<std::string> TrainConfig::validate(ModelKind kind) const {
  std::vector<std::string> errs;
  if (dim < 1) errs.emplace_back("recommender.dim must be >= 1");
  if (!(learning_rate > 0.0)) errs.emplace_back("recommender.learning_rate must be > 0");
  if (batch_size < 1) errs.emplace_back("recommender.batch_size must be >= 1");
  if (negatives < 1) errs.emplace_back("recommender.negatives must be >= 1");
  if (!(l2_reg >= 0.0)) errs.emplace_back("recommender.l2_reg must be >= 0");
  if (!(init_std > 0.0)) errs.emplace_back("recommender.init_std must be > 0");
  if (kind == ModelKind::kXSimGcl) {
    if (layers < 1) errs.emplace_back("recommender.layers must be >= 1 for xsimgcl");
    if (!(noise_eps >= 0.0)) errs.emplace_back("recommender.noise_eps must be >= 0");
    if (!(cl_weight >= 0.0)) errs.emplace_back("recommender.cl_weight must be >= 0");
    if (!(temperature > 0.0)) errs.emplace_back("recommender.temperature must be > 0");
    if (contrast_layer < 1 || contrast_layer > layers) {
      errs.emplace_back("recommender.contrast_layer must lie in [1, layers]");
    }
  }
  return errs;
}

IdIndex::IdIndex(std::vector<std::string> sorted_ids) : ids_(std::move(sorted_ids)) {
  lookup_.reserve(ids_.size());
  for (size_t i = 0; i < ids_.size(); ++i) lookup_.emplace(ids_[i], i);
}

std::optional<size_t> IdIndex::find(const std::string& id) const {
  auto it = lookup_.find(id);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

InteractionGraph::InteractionGraph(const IdIndex& users, const IdIndex& items,
                                   const std::vector<std::pair<uint32_t, uint32_t>>& edges)
    : n_users_(users.size()), n_items_(items.size()) {
  std::vector<uint32_t> du(n_users_, 0), di(n_items_, 0);
  for (auto [u, i] : edges) {
    ++du[u];
    ++di[i];
  }
  for (size_t u = 0; u < n_users_; ++u) {
    if (du[u] == 0) throw DataError("isolated user node " + users.id(u) + " in interaction graph");
  }
  for (size_t i = 0; i < n_items_; ++i) {
    if (di[i] == 0) throw DataError("isolated item node " + items.id(i) + " in interaction graph");
  }
  user_off_.assign(n_users_ + 1, 0);
  item_off_.assign(n_items_ + 1, 0);
  for (size_t u = 0; u < n_users_; ++u) user_off_[u + 1] = user_off_[u] + du[u];
  for (size_t i = 0; i < n_items_; ++i) item_off_[i + 1] = item_off_[i] + di[i];
  user_items_.resize(edges.size());
  user_w_.resize(edges.size());
  item_users_.resize(edges.size());
  item_w_.resize(edges.size());
  std::vector<uint32_t> fu(user_off_.begin(), user_off_.end() - 1);
  std::vector<uint32_t> fi(item_off_.begin(), item_off_.end() - 1);
  auto sorted = edges;
  std::sort(sorted.begin(), sorted.end());
  for (auto [u, i] : sorted) {
    const double w = 1.0 / std::sqrt(static_cast<double>(du[u]) * static_cast<double>(di[i]));
    user_items_[fu[u]] = i;
    user_w_[fu[u]++] = w;
    item_users_[fi[i]] = u;
    item_w_[fi[i]++] = w;
  }
}

void InteractionGraph::propagate(const Matrix& in, Matrix& out) const {
  const auto& kt = kernels::active();
  const size_t d = in.cols();
  if (out.rows() != in.rows() || out.cols() != d) out = Matrix(in.rows(), d);
  const double* item_rows = in.row(n_users_).data();
  for (size_t u = 0; u < n_users_; ++u) {
    const uint32_t b = user_off_[u];
    kt.gather_sum(item_rows, d, user_items_.data() + b, user_w_.data() + b, user_off_[u + 1] - b, out.row(u).data());
  }
  for (size_t i = 0; i < n_items_; ++i) {
    const uint32_t b = item_off_[i];
    kt.gather_sum(in.data(), d, item_users_.data() + b, item_w_.data() + b, item_off_[i + 1] - b,
                  out.row(n_users_ + i).data());
  }
}

double bpr_loss(const Matrix& fin, size_t n_users, const Batch& batch, Matrix* grad) {
  const auto& kt = kernels::active();
  const size_t b = batch.users.size();
  if (b == 0) return 0.0;
  const size_t d = fin.cols();
  const double inv_b = 1.0 / static_cast<double>(b);
  double loss = 0.0;
  for (size_t k = 0; k < b; ++k) {
    const double* u = fin.row(batch.users[k]).data();
    const double* i = fin.row(n_users + batch.positives[k]).data();
    const double* j = fin.row(n_users + batch.negatives[k]).data();
    const double x = kt.dot(u, i, d) - kt.dot(u, j, d);
    // -ln sigmoid(x) = softplus(-x), evaluated stably.
    loss += x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
    if (grad) {
      const double sig_neg = 1.0 / (1.0 + std::exp(x));  // sigmoid(-x)
      const double coef = -sig_neg * inv_b;
      double* gu = grad->row(batch.users[k]).data();
      kt.axpy(coef, i, gu, d);
      kt.axpy(-coef, j, gu, d);
      kt.axpy(coef, u, grad->row(n_users + batch.positives[k]).data(), d);
      kt.axpy(-coef, u, grad->row(n_users + batch.negatives[k]).data(), d);
    }
  }
  return loss * inv_b;
}

namespace {

// Rows scaled to unit norm; norms returned for the backward pass.
Matrix normalize_rows(const Matrix& m, std::vector<double>& norms) {
  Matrix out = m;
  norms.assign(m.rows(), 0.0);
  for (size_t r = 0; r < m.rows(); ++r) {
    auto row = out.row(r);
    norms[r] = std::sqrt(kernels::dot(row, row));
    const double inv = norms[r] > 0.0 ? 1.0 / norms[r] : 0.0;
    for (double& x : row) x *= inv;
  }
  return out;
}

// d loss / d x for x -> x / |x|, given d loss / d z and z.
void normalize_backward(const Matrix& z, const std::vector<double>& norms, const Matrix& gz, Matrix& gx) {
  for (size_t r = 0; r < z.rows(); ++r) {
    auto zr = z.row(r);
    auto gr = gz.row(r);
    auto out = gx.row(r);
    if (norms[r] == 0.0) continue;
    const double proj = kernels::dot(zr, gr);
    for (size_t c = 0; c < zr.size(); ++c) out[c] += (gr[c] - zr[c] * proj) / norms[r];
  }
}

}  // namespace

double info_nce(const Matrix& view_a, const Matrix& view_b, double temperature, Matrix* grad_a, Matrix* grad_b) {
  const size_t n = view_a.rows();
  if (n == 0) return 0.0;
  const auto& kt = kernels::active();
  std::vector<double> na, nb;
  Matrix za = normalize_rows(view_a, na);
  Matrix zb = normalize_rows(view_b, nb);
  const size_t d = za.cols();
  // Scratch reused across calls; batches of ~1k rows would otherwise
  // page-fault through several fresh n x n buffers per step.
  thread_local Matrix zbt, logits, g, gt;
  zbt.reshape(d, n);
  for (size_t r = 0; r < n; ++r) {
    for (size_t c = 0; c < d; ++c) zbt(c, r) = zb(r, c);
  }
  logits.reshape(n, n);
  logits.fill(0.0);
  kt.gemm(za.data(), zbt.data(), logits.data(), n, d, n);
  double loss = 0.0;
  g.reshape(n, n);  // d loss / d logits, already divided by the temperature
  const double inv_t = 1.0 / temperature;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    auto gr = g.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double& x : row) {
      x *= inv_t;
      mx = std::max(mx, x);
    }
    std::copy(row.begin(), row.end(), gr.begin());
    const double z = kt.exp_shift_sum(gr.data(), n, mx);
    loss += mx + std::log(z) - row[i];
    const double scale = inv_n * inv_t / z;
    for (double& x : gr) x *= scale;
    gr[i] -= inv_n * inv_t;
  }
  loss /= static_cast<double>(n);
  if (grad_a || grad_b) {
    Matrix gza(n, d), gzb(n, d);
    kt.gemm(g.data(), zb.data(), gza.data(), n, n, d);
    gt.reshape(n, n);
    for (size_t r = 0; r < n; ++r) {
      for (size_t c = 0; c < n; ++c) gt(c, r) = g(r, c);
    }
    kt.gemm(gt.data(), za.data(), gzb.data(), n, n, d);
    if (grad_a) normalize_backward(za, na, gza, *grad_a);
    if (grad_b) normalize_backward(zb, nb, gzb, *grad_b);
  }
  return loss;
}

Objective::Objective(ModelKind kind, const TrainConfig& cfg, size_t n_users, const InteractionGraph* graph)
    : kind_(kind), cfg_(cfg), graph_(graph), n_users_(n_users), layers_(kind == ModelKind::kMf ? 0 : cfg.layers) {
  if (layers_ > 0 && graph_ == nullptr) throw InvalidArgument("graph models need an interaction graph");
}

void Objective::forward(const Matrix& base, const NoiseDirections& noise, std::vector<Matrix>& out) const {
  out.resize(layers_ + 1);
  out[0] = base;
  const bool noisy = kind_ == ModelKind::kXSimGcl && cfg_.noise_eps > 0.0 && !noise.empty();
  for (size_t l = 1; l <= layers_; ++l) {
    graph_->propagate(out[l - 1], out[l]);
    if (noisy) {
      // x += eps * sign(x) * direction; sign is locally constant so the
      // layer Jacobian stays the propagation matrix.
      auto x = out[l].flat();
      auto n = noise[l - 1].flat();
      for (size_t k = 0; k < x.size(); ++k) {
        const double s = x[k] > 0.0 ? 1.0 : (x[k] < 0.0 ? -1.0 : 0.0);
        x[k] += cfg_.noise_eps * s * n[k];
      }
    }
  }
}

Matrix Objective::final_embeddings(const Matrix& base, const NoiseDirections& noise) const {
  if (layers_ == 0) return base;
  std::vector<Matrix> out;
  forward(base, noise, out);
  Matrix mean(base.rows(), base.cols());
  const double w = 1.0 / static_cast<double>(layers_ + 1);
  for (const auto& m : out) kernels::axpy(w, m.flat(), mean.flat());
  return mean;
}

LossBreakdown Objective::evaluate(const Matrix& base, const Batch& batch, const NoiseDirections& noise,
                                  Matrix* grad) const {
  const auto& kt = kernels::active();
  const size_t d = base.cols();
  std::vector<Matrix> layer_out;
  if (layers_ > 0) forward(base, noise, layer_out);
  Matrix fin;
  if (layers_ == 0) {
    fin = base;
  } else {
    fin = Matrix(base.rows(), d);
    const double w = 1.0 / static_cast<double>(layers_ + 1);
    for (const auto& m : layer_out) kt.axpy(w, m.data(), fin.data(), fin.size());
  }

  LossBreakdown lb;
  Matrix grad_final;
  Matrix grad_contrast;
  if (grad) grad_final = Matrix(base.rows(), d);
  lb.bpr = bpr_loss(fin, n_users_, batch, grad ? &grad_final : nullptr);

  const bool contrastive = kind_ == ModelKind::kXSimGcl && cfg_.cl_weight > 0.0;
  if (contrastive) {
    if (grad) grad_contrast = Matrix(base.rows(), d);
    const Matrix& cview = layer_out[cfg_.contrast_layer];
    auto unique_rows = [](std::vector<uint32_t> v, size_t offset) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      for (auto& x : v) x += static_cast<uint32_t>(offset);
      return v;
    };
    for (const auto& rows : {unique_rows(batch.users, 0), unique_rows(batch.positives, n_users_)}) {
      Matrix a(rows.size(), d), b(rows.size(), d);
      for (size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(fin.row(rows[r]).data(), d, a.row(r).data());
        std::copy_n(cview.row(rows[r]).data(), d, b.row(r).data());
      }
      Matrix ga, gb;
      if (grad) {
        ga = Matrix(rows.size(), d);
        gb = Matrix(rows.size(), d);
      }
      lb.contrastive += cfg_.cl_weight * info_nce(a, b, cfg_.temperature, grad ? &ga : nullptr, grad ? &gb : nullptr);
      if (grad) {
        for (size_t r = 0; r < rows.size(); ++r) {
          kt.axpy(cfg_.cl_weight, ga.row(r).data(), grad_final.row(rows[r]).data(), d);
          kt.axpy(cfg_.cl_weight, gb.row(r).data(), grad_contrast.row(rows[r]).data(), d);
        }
      }
    }
  }

  const size_t b = batch.users.size();
  if (cfg_.l2_reg > 0.0 && b > 0) {
    const double scale = cfg_.l2_reg / static_cast<double>(b);
    double sq = 0.0;
    auto add = [&](size_t row) {
      auto r = base.row(row);
      sq += kt.dot(r.data(), r.data(), d);
      if (grad) kt.axpy(scale, r.data(), grad->row(row).data(), d);
    };
    if (grad) {
      if (grad->rows() != base.rows() || grad->cols() != d) *grad = Matrix(base.rows(), d);
      grad->fill(0.0);
    }
    for (size_t k = 0; k < b; ++k) {
      add(batch.users[k]);
      add(n_users_ + batch.positives[k]);
      add(n_users_ + batch.negatives[k]);
    }
    lb.reg = 0.5 * scale * sq;
  } else if (grad) {
    if (grad->rows() != base.rows() || grad->cols() != d) *grad = Matrix(base.rows(), d);
    grad->fill(0.0);
  }

  if (grad) {
    if (layers_ == 0) {
      kt.axpy(1.0, grad_final.data(), grad->data(), grad->size());
    } else {
      // Reverse pass through the linear layer stack:
      // H_L = G/(L+1) [+ G_c], H_l = G/(L+1) [+ G_c] + A_hat H_{l+1}.
      const double w = 1.0 / static_cast<double>(layers_ + 1);
      Matrix h(base.rows(), d), prop(base.rows(), d);
      for (size_t l = layers_ + 1; l-- > 0;) {
        if (l < layers_) {
          graph_->propagate(h, prop);
          std::swap(h, prop);
        } else {
          h.fill(0.0);
        }
        kt.axpy(w, grad_final.data(), h.data(), h.size());
        if (contrastive && l == cfg_.contrast_layer) kt.axpy(1.0, grad_contrast.data(), h.data(), h.size());
      }
      kt.axpy(1.0, h.data(), grad->data(), grad->size());
    }
  }
  return lb;
}

TrainingData index_train_split(const data::DatasetSplit& split) {
  std::set<std::string, IdLess> users, items;
  for (const auto& x : split.train) {
    users.insert(x.user_id);
    items.insert(x.item_id);
  }
  TrainingData td;
  td.users = IdIndex({users.begin(), users.end()});
  td.items = IdIndex({items.begin(), items.end()});
  td.seen.assign(td.users.size(), {});
  td.edges.reserve(split.train.size());
  for (const auto& x : split.train) {
    const auto u = static_cast<uint32_t>(*td.users.find(x.user_id));
    const auto i = static_cast<uint32_t>(*td.items.find(x.item_id));
    td.edges.emplace_back(u, i);
    td.seen[u].push_back(i);
  }
  for (auto& s : td.seen) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  return td;
}

Matrix initial_embeddings(size_t n_nodes, const TrainConfig& cfg) {
  // Uniform(-a, a) with a = sqrt(3) * std.
  Rng rng(Rng::derive(cfg.seed, 1));
  const double a = std::sqrt(3.0) * cfg.init_std;
  Matrix m(n_nodes, cfg.dim);
  for (double& x : m.flat()) x = rng.uniform(-a, a);
  return m;
}

namespace {

NoiseDirections draw_noise(size_t layers, size_t rows, size_t d, Rng& rng) {
  NoiseDirections noise(layers, Matrix(rows, d));
  for (auto& m : noise) {
    for (size_t r = 0; r < rows; ++r) {
      auto row = m.row(r);
      double sq = 0.0;
      for (double& x : row) {
        x = rng.uniform();
        sq += x * x;
      }
      const double inv = sq > 0.0 ? 1.0 / std::sqrt(sq) : 0.0;
      for (double& x : row) x *= inv;
    }
  }
  return noise;
}

class Adam {
 public:
  Adam(size_t n, double lr) : m_(n, 0.0), v_(n, 0.0), lr_(lr) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const kernels::AdamStep st{lr_, kBeta1, kBeta2, kEps, 1.0 - std::pow(kBeta1, static_cast<double>(t_)),
                               1.0 - std::pow(kBeta2, static_cast<double>(t_))};
    kernels::active().adam(params.data(), m_.data(), v_.data(), grad.data(), params.size(), st);
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<double> m_, v_;
  double lr_;
  size_t t_ = 0;
};

}  // namespace

EmbeddingModel train(ModelKind kind, const data::DatasetSplit& split, const TrainConfig& cfg) {
  auto errs = cfg.validate(kind);
  if (!errs.empty()) throw InvalidArgument(errs.front());
  if (split.train.empty()) throw InvalidArgument("cannot train on an empty split");

  TrainingData td = index_train_split(split);
  const size_t n_users = td.users.size();
  const size_t n_items = td.items.size();
  std::optional<InteractionGraph> graph;
  if (kind != ModelKind::kMf) graph.emplace(td.users, td.items, td.edges);
  Objective objective(kind, cfg, n_users, graph ? &*graph : nullptr);

  Matrix base = initial_embeddings(n_users + n_items, cfg);
  Adam adam(base.size(), cfg.learning_rate);
  Rng order_rng(Rng::derive(cfg.seed, 2));
  Rng neg_rng(Rng::derive(cfg.seed, 3));
  Rng noise_rng(Rng::derive(cfg.seed, 4));
  const bool noisy = kind == ModelKind::kXSimGcl && cfg.noise_eps > 0.0;

  for (size_t u = 0; u < n_users; ++u) {
    if (td.seen[u].size() >= n_items) throw DataError("user " + td.users.id(u) + " has no unobserved items");
  }

  EmbeddingModel model;
  model.kind = kind;
  model.config = cfg;
  auto pairs = td.edges;
  Matrix grad(base.rows(), base.cols());
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(pairs);
    double loss_sum = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
      const size_t end = std::min(pairs.size(), start + cfg.batch_size);
      Batch batch;
      for (size_t k = start; k < end; ++k) {
        for (size_t r = 0; r < cfg.negatives; ++r) {
          const auto [u, i] = pairs[k];
          uint32_t j;
          do {
            j = static_cast<uint32_t>(neg_rng.below(n_items));
          } while (std::binary_search(td.seen[u].begin(), td.seen[u].end(), j));
          batch.users.push_back(u);
          batch.positives.push_back(i);
          batch.negatives.push_back(j);
        }
      }
      NoiseDirections noise;
      if (noisy) noise = draw_noise(objective.layers(), base.rows(), base.cols(), noise_rng);
      const LossBreakdown lb = objective.evaluate(base, batch, noise, &grad);
      if (!std::isfinite(lb.total())) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + " (bpr=" +
                             format_double(lb.bpr) + ", cl=" + format_double(lb.contrastive) + ")");
      }
      adam.step(base.flat(), grad.flat());
      loss_sum += lb.total();
      ++batches;
    }
    model.epoch_losses.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
    if ((epoch + 1) % 20 == 0 || epoch + 1 == cfg.epochs) {
      spdlog::debug("{} epoch {} loss {:.6f}", model_tag(kind), epoch + 1, model.epoch_losses.back());
    }
  }

  Matrix fin = objective.final_embeddings(base);
  model.user_vectors = Matrix(n_users, cfg.dim);
  model.item_vectors = Matrix(n_items, cfg.dim);
  std::copy_n(fin.data(), n_users * cfg.dim, model.user_vectors.data());
  std::copy_n(fin.data() + n_users * cfg.dim, n_items * cfg.dim, model.item_vectors.data());
  model.users = std::move(td.users);
  model.items = std::move(td.items);
  return model;
}

std::vector<double> predict_scores(const EmbeddingModel& model, const std::string& user_id) {
  auto u = model.users.find(user_id);
  if (!u) throw InvalidArgument("user " + user_id + " unknown to model");
  std::vector<double> scores(model.items.size());
  kernels::active().gemv(model.item_vectors.data(), model.item_vectors.rows(), model.item_vectors.cols(),
                         model.user_vectors.row(*u).data(), scores.data());
  return scores;
}

std::vector<size_t> top_k_indices(const std::vector<double>& scores, size_t k, const std::vector<char>& excluded) {
  std::vector<size_t> cand;
  cand.reserve(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    if (excluded.empty() || !excluded[i]) cand.push_back(i);
  }
  if (k > cand.size()) {
    throw InvalidArgument("top-k requested " + std::to_string(k) + " items but only " + std::to_string(cand.size()) +
                          " are unseen");
  }
  auto better = [&](size_t a, size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  cand.resize(k);
  return cand;
}

std::vector<std::string> top_k_unseen(const EmbeddingModel& model, const std::string& user_id, size_t k,
                                      const std::set<std::string, IdLess>& seen) {
  const auto scores = predict_scores(model, user_id);
  std::vector<char> excluded(model.items.size(), 0);
  for (const auto& s : seen) {
    if (auto i = model.items.find(s)) excluded[*i] = 1;
  }
  std::vector<std::string> out;
  for (size_t i : top_k_indices(scores, k, excluded)) out.push_back(model.items.id(i));
  return out;
}

sampling::UserEmbeddingTable export_user_embeddings(const EmbeddingModel& model) {
  sampling::UserEmbeddingTable t;
  t.user_ids = model.users.ids();
  t.vectors = model.user_vectors;
  return sampling::l2_normalized(t);
}

std::string config_hash(ModelKind kind, const TrainConfig& cfg) {
  nlohmann::json j = cfg;
  j["model"] = std::string(model_tag(kind));
  return sha256_hex(j.dump());
}

namespace {

constexpr char kMagic[8] = {'R', 'R', 'M', 'O', 'D', 'E', 'L', '1'};

class LeWriter {
 public:
  explicit LeWriter(std::ostream& out) : out_(out) {}
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }
  void str(const std::string& s) {
    put<uint32_t>(static_cast<uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class LeReader {
 public:
  LeReader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}
  template <class T>
  T get() {
    unsigned char buf[sizeof(T)];
    if (!in_.read(reinterpret_cast<char*>(buf), sizeof(T))) throw DataError("truncated model file " + name_);
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::string str() {
    const auto n = get<uint32_t>();
    std::string s(n, '\0');
    if (n && !in_.read(s.data(), n)) throw DataError("truncated model file " + name_);
    return s;
  }

 private:
  std::istream& in_;
  std::string name_;
};

}  // namespace

void save_model(const fs::path& path, const EmbeddingModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  LeWriter w(out);
  out.write(kMagic, sizeof(kMagic));
  w.put<uint32_t>(1);
  w.str(std::string(model_tag(model.kind)));
  w.put<uint64_t>(model.dim());
  w.put<uint64_t>(model.kind == ModelKind::kMf ? 0 : model.config.layers);
  w.put<uint64_t>(model.config.seed);
  w.str(config_hash(model.kind, model.config));
  w.str(nlohmann::json(model.config).dump());
  w.put<uint64_t>(model.users.size());
  for (const auto& id : model.users.ids()) w.str(id);
  w.put<uint64_t>(model.items.size());
  for (const auto& id : model.items.ids()) w.str(id);
  for (double x : model.user_vectors.flat()) w.put<double>(x);
  for (double x : model.item_vectors.flat()) w.put<double>(x);
  w.put<uint64_t>(model.epoch_losses.size());
  for (double x : model.epoch_losses) w.put<double>(x);
}

EmbeddingModel load_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError(path.string() + " is not a model file");
  LeReader r(in, path.string());
  if (r.get<uint32_t>() != 1) throw DataError("unsupported model file version in " + path.string());
  EmbeddingModel m;
  m.kind = parse_model_kind(r.str());
  const auto dim = r.get<uint64_t>();
  r.get<uint64_t>();  // layers, duplicated in the config
  r.get<uint64_t>();  // seed, duplicated in the config
  const std::string hash = r.str();
  m.config = nlohmann::json::parse(r.str()).get<TrainConfig>();
  if (hash != config_hash(m.kind, m.config)) throw DataError("config hash mismatch in " + path.string());
  std::vector<std::string> ids(r.get<uint64_t>());
  for (auto& s : ids) s = r.str();
  m.users = IdIndex(std::move(ids));
  ids.assign(r.get<uint64_t>(), {});
  for (auto& s : ids) s = r.str();
  m.items = IdIndex(std::move(ids));
  m.user_vectors = Matrix(m.users.size(), dim);
  m.item_vectors = Matrix(m.items.size(), dim);
  for (double& x : m.user_vectors.flat()) x = r.get<double>();
  for (double& x : m.item_vectors.flat()) x = r.get<double>();
  m.epoch_losses.resize(r.get<uint64_t>());
  for (double& x : m.epoch_losses) x = r.get<double>();
  return m;
}

}  // namespace recrank::models
