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

#include "recrank/sampling.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include "recrank/kernels.h"
#include "recrank/rng.h"

namespace recrank::sampling {

namespace fs = std::filesystem;

void write_embeddings(const fs::path& path, const UserEmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (size_t r = 0; r < table.size(); ++r) {
    out << table.user_ids[r] << '\t';
    auto row = table.vectors.row(r);
    for (size_t c = 0; c < row.size(); ++c) {
      if (c) out << ',';
      out << format_double(row[c]);
    }
    out << '\n';
  }
}

UserEmbeddingTable read_embeddings(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::string line;
  size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError(path.string() + ":" + std::to_string(no) + ": missing tab");
    ids.push_back(line.substr(0, tab));
    std::vector<double> v;
    std::stringstream ss(line.substr(tab + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      char* end = nullptr;
      double x = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || !std::isfinite(x)) {
        throw DataError(path.string() + ":" + std::to_string(no) + ": bad embedding value '" + tok + "'");
      }
      v.push_back(x);
    }
    if (!rows.empty() && v.size() != rows.front().size()) {
      throw DataError(path.string() + ":" + std::to_string(no) + ": inconsistent embedding dimension");
    }
    rows.push_back(std::move(v));
  }
  UserEmbeddingTable t;
  t.user_ids = std::move(ids);
  t.vectors = Matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), t.vectors.row(r).begin());
  return t;
}

UserEmbeddingTable l2_normalized(const UserEmbeddingTable& table) {
  UserEmbeddingTable out = table;
  for (size_t r = 0; r < out.size(); ++r) {
    auto row = out.vectors.row(r);
    const double norm = std::sqrt(kernels::dot(row, row));
    if (norm > 0.0) {
      for (double& x : row) x /= norm;
    }
  }
  return out;
}

Strategy parse_strategy(std::string_view tag) {
  if (tag == "importance") return Strategy::kImportance;
  if (tag == "kmeans") return Strategy::kKmeans;
  if (tag == "dbscan") return Strategy::kDbscan;
  if (tag == "random") return Strategy::kRandom;
  if (tag == "composite") return Strategy::kComposite;
  if (tag == "all") return Strategy::kAll;
  throw InvalidArgument("unknown sampling strategy '" + std::string(tag) + "'");
}

std::string_view strategy_tag(Strategy s) {
  switch (s) {
    case Strategy::kImportance:
      return "importance";
    case Strategy::kKmeans:
      return "kmeans";
    case Strategy::kDbscan:
      return "dbscan";
    case Strategy::kRandom:
      return "random";
    case Strategy::kComposite:
      return "composite";
    case Strategy::kAll:
      return "all";
  }
  return "composite";
}

std::vector<std::string> SamplingPlan::validate() const {
  std::vector<std::string> errs;
  if (!(penalty_base > 0.0 && penalty_base < 1.0)) errs.emplace_back("sampling.penalty_c must lie in (0, 1)");
  if (n_samples < 1) errs.emplace_back("sampling.n must be >= 1");
  if (kmeans_k < 1) errs.emplace_back("sampling.k must be >= 1");
  if (!(dbscan_eps > 0.0)) errs.emplace_back("sampling.eps must be > 0");
  if (dbscan_min_pts < 1) errs.emplace_back("sampling.min_pts must be >= 1");
  if (strategy == Strategy::kComposite && composite_clustering != Strategy::kKmeans &&
      composite_clustering != Strategy::kDbscan) {
    errs.emplace_back("sampling.cluster must be kmeans or dbscan");
  }
  return errs;
}

SampledUserSet SampledUserSet::from_draws(std::vector<std::string> draws) {
  SampledUserSet s;
  s.draws = std::move(draws);
  for (const auto& u : s.draws) ++s.multiplicity[u];
  return s;
}

void SampledUserSet::append(const SampledUserSet& other) {
  for (const auto& u : other.draws) {
    draws.push_back(u);
    ++multiplicity[u];
  }
}

ProbabilityMap importance_probabilities(const std::map<std::string, size_t, IdLess>& counts) {
  if (counts.empty()) throw InvalidArgument("importance sampling needs at least one user");
  const bool smooth = std::any_of(counts.begin(), counts.end(), [](const auto& kv) { return kv.second == 1; });
  ProbabilityMap p;
  double total = 0.0;
  size_t excluded = 0;
  for (const auto& [user, q] : counts) {
    const double mass = smooth ? std::log1p(static_cast<double>(q)) : std::log(static_cast<double>(q));
    if (!(mass > 0.0)) {
      ++excluded;
      continue;
    }
    p[user] = mass;
    total += mass;
  }
  if (excluded > 0) spdlog::info("importance sampling excluded {} users with no interaction mass", excluded);
  if (p.empty()) throw InvalidArgument("no user has positive importance mass");
  for (auto& [u, v] : p) v /= total;
  return p;
}

namespace {

struct Assignment {
  std::vector<int> labels;
  double inertia;
};

Assignment assign(const Matrix& points, const Matrix& centroids) {
  const auto& kt = kernels::active();
  Assignment a{std::vector<int>(points.rows(), 0), 0.0};
  for (size_t i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (size_t c = 0; c < centroids.rows(); ++c) {
      const double d = kt.squared_distance(points.row(i).data(), centroids.row(c).data(), points.cols());
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    a.labels[i] = arg;
    a.inertia += best;
  }
  return a;
}

Matrix plus_plus_seed(const Matrix& points, size_t k, Rng& rng) {
  const auto& kt = kernels::active();
  const size_t n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<char> chosen(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  size_t first = rng.below(n);
  for (size_t c = 0; c < k; ++c) {
    size_t pick = first;
    if (c > 0) {
      double total = 0.0;
      for (size_t i = 0; i < n; ++i) total += d2[i];
      if (total > 0.0) {
        pick = DiscreteSampler(d2)(rng);
      } else {
        // Remaining points coincide with chosen centres: pick an unchosen one.
        std::vector<size_t> rest;
        for (size_t i = 0; i < n; ++i) {
          if (!chosen[i]) rest.push_back(i);
        }
        pick = rest.empty() ? rng.below(n) : rest[rng.below(rest.size())];
      }
    }
    chosen[pick] = 1;
    std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
    for (size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], kt.squared_distance(points.row(i).data(), centroids.row(c).data(), points.cols()));
    }
  }
  return centroids;
}

KmeansResult lloyd(const Matrix& points, size_t k, Rng& rng, size_t max_iter) {
  KmeansResult r;
  r.centroids = plus_plus_seed(points, k, rng);
  Assignment a = assign(points, r.centroids);
  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    Matrix sums(k, points.cols());
    std::vector<size_t> sizes(k, 0);
    for (size_t i = 0; i < points.rows(); ++i) {
      ++sizes[a.labels[i]];
      kernels::axpy(1.0, points.row(i), sums.row(a.labels[i]));
    }
    for (size_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) {
        // Empty cluster: move its centre to the point farthest from its own.
        size_t far = 0;
        double worst = -1.0;
        for (size_t i = 0; i < points.rows(); ++i) {
          const double d = kernels::squared_distance(points.row(i), r.centroids.row(a.labels[i]));
          if (d > worst) {
            worst = d;
            far = i;
          }
        }
        std::copy(points.row(far).begin(), points.row(far).end(), r.centroids.row(c).begin());
        continue;
      }
      auto dst = r.centroids.row(c);
      auto src = sums.row(c);
      for (size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] / static_cast<double>(sizes[c]);
    }
    Assignment next = assign(points, r.centroids);
    const bool stable = next.labels == a.labels;
    a = std::move(next);
    if (stable) break;
  }
  r.iterations = std::min(r.iterations, max_iter);
  r.labels = std::move(a.labels);
  r.inertia = a.inertia;
  return r;
}

}  // namespace

KmeansResult kmeans_cluster(const UserEmbeddingTable& emb, size_t k, uint64_t seed, const KmeansOptions& opts) {
  if (k < 1) throw InvalidArgument("k-means requires K >= 1");
  if (k > emb.size()) {
    throw InvalidArgument("k-means K=" + std::to_string(k) + " exceeds user count " + std::to_string(emb.size()));
  }
  KmeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (size_t r = 0; r < std::max<size_t>(1, opts.restarts); ++r) {
    Rng rng(Rng::derive(seed, r));
    KmeansResult cand = lloyd(emb.vectors, k, rng, opts.max_iterations);
    if (cand.inertia < best.inertia) best = std::move(cand);
  }
  return best;
}

std::vector<int> dbscan_cluster(const UserEmbeddingTable& emb, double eps, size_t min_pts) {
  if (!(eps > 0.0)) throw InvalidArgument("DBSCAN eps must be > 0");
  if (min_pts < 1) throw InvalidArgument("DBSCAN min_pts must be >= 1");
  constexpr int kUnvisited = -2;
  const size_t n = emb.size();
  const double eps2 = eps * eps;
  const auto& kt = kernels::active();
  auto neighbours = [&](size_t p) {
    std::vector<size_t> out;
    for (size_t q = 0; q < n; ++q) {
      if (kt.squared_distance(emb.vectors.row(p).data(), emb.vectors.row(q).data(), emb.dim()) <= eps2) {
        out.push_back(q);
      }
    }
    return out;
  };
  std::vector<int> labels(n, kUnvisited);
  int cluster = 0;
  for (size_t p = 0; p < n; ++p) {
    if (labels[p] != kUnvisited) continue;
    auto seeds = neighbours(p);
    if (seeds.size() < min_pts) {
      labels[p] = kNoise;
      continue;
    }
    labels[p] = cluster;
    std::deque<size_t> frontier(seeds.begin(), seeds.end());
    while (!frontier.empty()) {
      size_t q = frontier.front();
      frontier.pop_front();
      if (labels[q] == kNoise) labels[q] = cluster;  // border point
      if (labels[q] != kUnvisited) continue;
      labels[q] = cluster;
      auto nq = neighbours(q);
      if (nq.size() >= min_pts) frontier.insert(frontier.end(), nq.begin(), nq.end());
    }
    ++cluster;
  }
  return labels;
}

ProbabilityMap cluster_proportional_probabilities(const std::vector<std::string>& users,
                                                  const std::vector<int>& labels) {
  if (users.size() != labels.size()) throw InvalidArgument("labels and users differ in length");
  std::map<int, size_t> sizes;
  for (int l : labels) {
    if (l != kNoise) ++sizes[l];
  }
  if (sizes.empty()) throw InvalidArgument("every user is labelled noise; nothing to sample");
  ProbabilityMap p;
  double total = 0.0;
  for (size_t i = 0; i < users.size(); ++i) {
    if (labels[i] == kNoise) continue;
    const double mass = static_cast<double>(sizes[labels[i]]);
    p[users[i]] += mass;
    total += mass;
  }
  for (auto& [u, v] : p) v /= total;
  return p;
}

SampledUserSet sample_from(const ProbabilityMap& probs, size_t n, uint64_t seed) {
  if (probs.empty()) throw InvalidArgument("cannot sample from an empty distribution");
  std::vector<std::string> ids;
  std::vector<double> w;
  for (const auto& [u, p] : probs) {
    ids.push_back(u);
    w.push_back(p);
  }
  DiscreteSampler sampler(w);
  Rng rng(seed);
  std::vector<std::string> draws;
  draws.reserve(n);
  for (size_t i = 0; i < n; ++i) draws.push_back(ids[sampler(rng)]);
  return SampledUserSet::from_draws(std::move(draws));
}

SampledUserSet cluster_proportional_sample(const std::vector<std::string>& users, const std::vector<int>& labels,
                                           size_t n, uint64_t seed) {
  return sample_from(cluster_proportional_probabilities(users, labels), n, seed);
}

SampledUserSet random_sample(const std::vector<std::string>& users, size_t n, uint64_t seed) {
  if (users.empty()) throw InvalidArgument("random sampling needs a non-empty user set");
  Rng rng(seed);
  std::vector<std::string> draws;
  draws.reserve(n);
  for (size_t i = 0; i < n; ++i) draws.push_back(users[rng.below(users.size())]);
  return SampledUserSet::from_draws(std::move(draws));
}

ProbabilityMap penalty_probabilities(const SampledUserSet& merged, double penalty_base) {
  if (merged.draws.empty()) throw InvalidArgument("penalty resampling needs a non-empty merged set");
  if (!(penalty_base > 0.0 && penalty_base < 1.0)) throw InvalidArgument("penalty base C must lie in (0, 1)");
  const double n = static_cast<double>(merged.draws.size());
  ProbabilityMap p;
  double total = 0.0;
  for (const auto& [u, m] : merged.multiplicity) {
    const double mass = std::pow(penalty_base, static_cast<double>(m)) * static_cast<double>(m) / n;
    p[u] = mass;
    total += mass;
  }
  for (auto& [u, v] : p) v /= total;
  return p;
}

SampledUserSet penalty_resample(const SampledUserSet& merged, const SamplingPlan& plan) {
  return sample_from(penalty_probabilities(merged, plan.penalty_base), plan.n_samples, plan.seed);
}

namespace {

SampledUserSet clustering_draws(Strategy s, const SamplingPlan& plan, const SamplingInputs& in, size_t n,
                                uint64_t seed) {
  if (in.embeddings == nullptr) throw InvalidArgument("clustering strategies need user embeddings");
  UserEmbeddingTable emb = l2_normalized(*in.embeddings);
  std::vector<int> labels;
  if (s == Strategy::kKmeans) {
    labels = kmeans_cluster(emb, plan.kmeans_k, seed).labels;
  } else {
    labels = dbscan_cluster(emb, plan.dbscan_eps, plan.dbscan_min_pts);
    const auto noise = std::count(labels.begin(), labels.end(), kNoise);
    spdlog::info("dbscan: {} of {} users labelled noise", noise, labels.size());
  }
  return cluster_proportional_sample(emb.user_ids, labels, n, Rng::derive(seed, 1));
}

}  // namespace

SampledUserSet run_plan(const SamplingPlan& plan, const SamplingInputs& in) {
  auto errs = plan.validate();
  if (!errs.empty()) throw InvalidArgument(errs.front());
  switch (plan.strategy) {
    case Strategy::kImportance:
      return sample_from(importance_probabilities(in.interaction_counts), plan.n_samples, plan.seed);
    case Strategy::kKmeans:
    case Strategy::kDbscan:
      return clustering_draws(plan.strategy, plan, in, plan.n_samples, plan.seed);
    case Strategy::kRandom: {
      std::vector<std::string> users;
      for (const auto& [u, q] : in.interaction_counts) users.push_back(u);
      return random_sample(users, plan.n_samples, plan.seed);
    }
    case Strategy::kComposite: {
      const size_t n1 = (plan.n_samples + 1) / 2;
      const size_t n2 = plan.n_samples - n1;
      SampledUserSet merged =
          sample_from(importance_probabilities(in.interaction_counts), n1, Rng::derive(plan.seed, 11));
      if (n2 > 0) merged.append(clustering_draws(plan.composite_clustering, plan, in, n2, Rng::derive(plan.seed, 12)));
      SamplingPlan final_plan = plan;
      final_plan.seed = Rng::derive(plan.seed, 13);
      return penalty_resample(merged, final_plan);
    }
    case Strategy::kAll: {
      std::vector<std::string> users;
      for (const auto& [u, q] : in.interaction_counts) users.push_back(u);
      return SampledUserSet::from_draws(std::move(users));
    }
  }
  throw InvalidArgument("unhandled sampling strategy");
}

void write_samples(const fs::path& path, const SampledUserSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "draw_index\tuser_id\n";
  for (size_t i = 0; i < set.draws.size(); ++i) out << i << '\t' << set.draws[i] << '\n';
}

SampledUserSet read_samples(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  std::vector<std::string> draws;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      first = false;
      if (line.rfind("draw_index", 0) == 0) continue;
    }
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed sample row: " + line);
    draws.push_back(line.substr(tab + 1));
  }
  return SampledUserSet::from_draws(std::move(draws));
}

}  // namespace recrank::sampling
