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


#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <deque>
#include <numbers>

#include "recrank/rng.h"
#include "recrank/sampling.h"

namespace recrank::sampling {
namespace {

// Pearson goodness of fit; returns the upper-tail p-value.
double chi_square_p(const SampledUserSet& s, const std::map<std::string, double>& expected_p) {
  const double n = static_cast<double>(s.draws.size());
  double stat = 0.0;
  for (const auto& [u, p] : expected_p) {
    const auto it = s.multiplicity.find(u);
    const double obs = it == s.multiplicity.end() ? 0.0 : static_cast<double>(it->second);
    const double e = p * n;
    stat += (obs - e) * (obs - e) / e;
  }
  for (const auto& [u, m] : s.multiplicity) {
    if (!expected_p.count(u)) return 0.0;  // mass where none was expected
  }
  const boost::math::chi_squared dist(static_cast<double>(expected_p.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

UserEmbeddingTable table(const std::vector<std::vector<double>>& pts) {
  UserEmbeddingTable t;
  t.vectors = Matrix(pts.size(), pts.empty() ? 0 : pts[0].size());
  for (size_t i = 0; i < pts.size(); ++i) {
    t.user_ids.push_back("u" + std::to_string(i));
    for (size_t j = 0; j < pts[i].size(); ++j) t.vectors(i, j) = pts[i][j];
  }
  return t;
}

std::map<std::string, size_t, IdLess> counts(std::initializer_list<std::pair<const char*, size_t>> kv) {
  std::map<std::string, size_t, IdLess> m;
  for (const auto& [k, v] : kv) m[k] = v;
  return m;
}

// Points on the unit circle grouped at the given angles, so L2
// normalisation leaves them in place.
UserEmbeddingTable circle_groups(const std::vector<std::pair<double, size_t>>& groups, double spread) {
  std::vector<std::vector<double>> pts;
  for (const auto& [angle, n] : groups) {
    for (size_t k = 0; k < n; ++k) {
      const double a = angle + spread * (static_cast<double>(k) - static_cast<double>(n - 1) / 2.0);
      pts.push_back({std::cos(a), std::sin(a)});
    }
  }
  return table(pts);
}

// Same partition up to label names (noise must match exactly).
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == kNoise) != (b[i] == kNoise)) return false;
    if (a[i] == kNoise) continue;
    auto [it1, f1] = ab.emplace(a[i], b[i]);
    auto [it2, f2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

std::vector<int> brute_force_dbscan(const UserEmbeddingTable& t, double eps, size_t min_pts) {
  const size_t n = t.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double s = 0;
      for (size_t c = 0; c < t.dim(); ++c) s += (t.vectors(i, c) - t.vectors(j, c)) * (t.vectors(i, c) - t.vectors(j, c));
      d[i][j] = std::sqrt(s);
    }
  }
  auto core = [&](size_t i) {
    size_t c = 0;
    for (size_t j = 0; j < n; ++j) c += d[i][j] <= eps;
    return c >= min_pts;
  };
  std::vector<int> label(n, kNoise);
  int next = 0;
  for (size_t i = 0; i < n; ++i) {
    if (label[i] != kNoise || !core(i)) continue;
    std::deque<size_t> q = {i};
    label[i] = next;
    while (!q.empty()) {
      const size_t p = q.front();
      q.pop_front();
      if (!core(p)) continue;
      for (size_t j = 0; j < n; ++j) {
        if (d[p][j] <= eps && label[j] == kNoise) {
          label[j] = next;
          q.push_back(j);
        }
      }
    }
    ++next;
  }
  return label;
}

double inertia_of(const UserEmbeddingTable& t, const std::vector<int>& labels, size_t k) {
  std::vector<std::vector<double>> c(k, std::vector<double>(t.dim(), 0.0));
  std::vector<size_t> sz(k, 0);
  for (size_t i = 0; i < t.size(); ++i) {
    ++sz[labels[i]];
    for (size_t j = 0; j < t.dim(); ++j) c[labels[i]][j] += t.vectors(i, j);
  }
  double s = 0;
  for (size_t i = 0; i < t.size(); ++i) {
    for (size_t j = 0; j < t.dim(); ++j) {
      const double mu = c[labels[i]][j] / static_cast<double>(sz[labels[i]]);
      s += (t.vectors(i, j) - mu) * (t.vectors(i, j) - mu);
    }
  }
  return s;
}

TEST(Importance, HandComputedLogs) {
  const auto p = importance_probabilities(counts({{"u1", 10}, {"u2", 100}}));
  EXPECT_NEAR(p.at("u1"), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(p.at("u2"), 2.0 / 3.0, 1e-12);
}

TEST(Importance, EqualCountsAreUniformAndSingleUserIsCertain) {
  const auto p = importance_probabilities(counts({{"a", 5}, {"b", 5}, {"c", 5}}));
  for (const auto& [u, v] : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(importance_probabilities(counts({{"solo", 7}})).at("solo"), 1.0);
}

TEST(Importance, ChiSquareOver100kDraws) {
  const auto c = counts({{"a", 2}, {"b", 5}, {"c", 20}, {"d", 80}, {"e", 300}});
  SamplingPlan plan;
  plan.strategy = Strategy::kImportance;
  plan.n_samples = 100000;
  plan.seed = 17;
  SamplingInputs in;
  in.interaction_counts = c;
  const auto s = run_plan(plan, in);
  std::map<std::string, double> expect;
  double total = 0;
  for (const auto& [u, q] : c) total += std::log(static_cast<double>(q));
  for (const auto& [u, q] : c) expect[u] = std::log(static_cast<double>(q)) / total;
  EXPECT_GT(chi_square_p(s, expect), 0.01);
}

TEST(Random, UniformChiSquareAndEdgeCases) {
  std::vector<std::string> users;
  for (int i = 0; i < 10; ++i) users.push_back("u" + std::to_string(i));
  const auto s = random_sample(users, 100000, 5);
  std::map<std::string, double> expect;
  for (const auto& u : users) expect[u] = 0.1;
  EXPECT_GT(chi_square_p(s, expect), 0.01);
  EXPECT_TRUE(random_sample(users, 0, 5).draws.empty());
  const auto one = random_sample({"only"}, 25, 1);
  EXPECT_EQ(one.multiplicity.at("only"), 25u);
}

TEST(ClusterProportional, SizesEightAndTwo) {
  std::vector<std::string> users;
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) {
    users.push_back("u" + std::to_string(i));
    labels.push_back(i < 8 ? 0 : 1);
  }
  const auto s = cluster_proportional_sample(users, labels, 100000, 9);
  // p(u) = |C(u)| / sum_v |C(v)| = 8/68 or 2/68.
  std::map<std::string, double> expect;
  for (int i = 0; i < 10; ++i) expect[users[i]] = (i < 8 ? 8.0 : 2.0) / 68.0;
  EXPECT_GT(chi_square_p(s, expect), 0.01);
}

TEST(ClusterProportional, SingleClusterIsUniformAndNoiseHasNoMass) {
  const auto p = cluster_proportional_probabilities({"a", "b", "c"}, {0, 0, 0});
  for (const auto& [u, v] : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
  const auto s = cluster_proportional_sample({"a", "b", "c"}, {kNoise, 4, kNoise}, 500, 1);
  EXPECT_EQ(s.multiplicity.size(), 1u);
  EXPECT_EQ(s.multiplicity.at("b"), 500u);
}

TEST(Kmeans, SeparatedCloudsRecoverPartition) {
  const auto t = table({{0, 0}, {0.1, 0}, {0, 0.1}, {10, 10}, {10.1, 10}, {10, 10.1}});
  const auto r = kmeans_cluster(t, 2, 3);
  EXPECT_TRUE(same_partition(r.labels, {0, 0, 0, 1, 1, 1}));
}

TEST(Kmeans, KEqualsNGivesZeroInertia) {
  const auto t = table({{0, 0}, {1, 2}, {3, 1}, {5, 5}});
  const auto r = kmeans_cluster(t, 4, 1);
  EXPECT_NEAR(r.inertia, 0.0, 1e-12);
}

TEST(Kmeans, TwelvePointFixtureMatchesExhaustiveOptimum) {
  const auto t = table({{0, 0}, {1, 0}, {0, 1}, {1, 1}, {6, 0}, {7, 0.5}, {6.5, 1.2}, {7.2, -0.4},
                        {3, 6}, {3.5, 7}, {2.4, 6.6}, {3.1, 5.2}});
  // Global optimum over all 3^12 labelings with three non-empty clusters.
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> lab(12);
  for (int code = 0; code < 531441; ++code) {
    int c = code;
    std::array<int, 3> used{};
    for (int i = 0; i < 12; ++i) {
      lab[i] = c % 3;
      c /= 3;
      used[lab[i]] = 1;
    }
    if (!(used[0] && used[1] && used[2])) continue;
    best = std::min(best, inertia_of(t, lab, 3));
  }
  const auto r = kmeans_cluster(t, 3, 42);
  EXPECT_NEAR(r.inertia, best, 1e-9);
  EXPECT_NEAR(inertia_of(t, r.labels, 3), r.inertia, 1e-9);
}

TEST(Kmeans, ChiSquareThroughRunPlan) {
  // Groups of 6, 3 and 1 users at well separated angles.
  const auto emb = circle_groups({{0.0, 6}, {2.1, 3}, {4.2, 1}}, 0.02);
  SamplingPlan plan;
  plan.strategy = Strategy::kKmeans;
  plan.kmeans_k = 3;
  plan.n_samples = 100000;
  plan.seed = 4;
  SamplingInputs in;
  for (const auto& u : emb.user_ids) in.interaction_counts[u] = 3;
  in.embeddings = &emb;
  const auto s = run_plan(plan, in);
  std::map<std::string, double> expect;
  const double z = 6 * 6 + 3 * 3 + 1 * 1;
  for (size_t i = 0; i < emb.size(); ++i) expect[emb.user_ids[i]] = (i < 6 ? 6.0 : i < 9 ? 3.0 : 1.0) / z;
  EXPECT_GT(chi_square_p(s, expect), 0.01);
}

TEST(Dbscan, BlobsAndOutliers) {
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 6; ++i) pts.push_back({0.05 * i, 0});
  for (int i = 0; i < 6; ++i) pts.push_back({10 + 0.05 * i, 10});
  pts.push_back({50, -50});
  pts.push_back({-50, 50});
  pts.push_back({100, 100});
  const auto labels = dbscan_cluster(table(pts), 0.2, 3);
  std::set<int> clusters;
  size_t noise = 0;
  for (int l : labels) {
    if (l == kNoise) {
      ++noise;
    } else {
      clusters.insert(l);
    }
  }
  EXPECT_EQ(clusters.size(), 2u);
  EXPECT_EQ(noise, 3u);
}

TEST(Dbscan, HugeEpsGivesOneCluster) {
  const auto labels = dbscan_cluster(table({{0, 0}, {5, 5}, {-9, 3}, {100, 2}}), 1e9, 2);
  for (int l : labels) EXPECT_EQ(l, labels[0]);
  EXPECT_NE(labels[0], kNoise);
}

TEST(Dbscan, TwentyPointFixtureMatchesBruteForce) {
  Rng rng(8);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 8; ++i) pts.push_back({rng.uniform(0, 1), rng.uniform(0, 1)});
  for (int i = 0; i < 8; ++i) pts.push_back({rng.uniform(5, 6), rng.uniform(5, 6)});
  for (int i = 0; i < 4; ++i) pts.push_back({rng.uniform(-20, 20), rng.uniform(20, 40)});
  const auto t = table(pts);
  for (double eps : {0.3, 0.5, 0.8}) {
    for (size_t mp : {2, 3, 4}) {
      EXPECT_TRUE(same_partition(dbscan_cluster(t, eps, mp), brute_force_dbscan(t, eps, mp))) << eps << "/" << mp;
    }
  }
}

TEST(Dbscan, ChiSquareAndNoNoiseDraws) {
  // Two groups of 5 and 3 plus two isolated users.
  const auto emb = circle_groups({{0.0, 5}, {2.0, 3}, {3.5, 1}, {5.0, 1}}, 0.01);
  SamplingPlan plan;
  plan.strategy = Strategy::kDbscan;
  plan.dbscan_eps = 0.1;
  plan.dbscan_min_pts = 2;
  plan.n_samples = 100000;
  plan.seed = 21;
  SamplingInputs in;
  for (const auto& u : emb.user_ids) in.interaction_counts[u] = 2;
  in.embeddings = &emb;
  const auto s = run_plan(plan, in);
  EXPECT_EQ(s.multiplicity.count(emb.user_ids[8]), 0u);
  EXPECT_EQ(s.multiplicity.count(emb.user_ids[9]), 0u);
  std::map<std::string, double> expect;
  const double z = 5 * 5 + 3 * 3;
  for (size_t i = 0; i < 8; ++i) expect[emb.user_ids[i]] = (i < 5 ? 5.0 : 3.0) / z;
  EXPECT_GT(chi_square_p(s, expect), 0.01);
}

TEST(Penalty, HandComputedPowers) {
  EXPECT_NEAR(std::pow(0.9, 2), 0.81, 1e-15);
  // M = {1, 3}, C = 0.5: psi 0.5 vs 0.125 (4:1); with the M/|merged|
  // factor the masses are 0.5 and 0.375.
  const auto merged = SampledUserSet::from_draws({"a", "b", "b", "b"});
  const auto p = penalty_probabilities(merged, 0.5);
  EXPECT_NEAR(p.at("a") / p.at("b"), 0.5 / 0.375, 1e-12);
  EXPECT_NEAR(p.at("a") + p.at("b"), 1.0, 1e-12);
}

TEST(Penalty, CloseToOneApproachesUnpenalisedMerge) {
  const auto merged = SampledUserSet::from_draws({"a", "b", "b", "c", "c", "c"});
  const auto p = penalty_probabilities(merged, 1.0 - 1e-12);
  EXPECT_NEAR(p.at("a"), 1.0 / 6.0, 1e-9);
  EXPECT_NEAR(p.at("c"), 3.0 / 6.0, 1e-9);
}

TEST(Penalty, ChiSquareOfResample) {
  const auto merged = SampledUserSet::from_draws({"a", "b", "b", "c", "c", "c", "d", "d", "d", "d"});
  SamplingPlan plan;
  plan.penalty_base = 0.7;
  plan.n_samples = 100000;
  plan.seed = 2;
  const auto s = penalty_resample(merged, plan);
  std::map<std::string, double> expect;
  double z = 0;
  for (int m = 1; m <= 4; ++m) z += std::pow(0.7, m) * m;
  const char* ids[] = {"a", "b", "c", "d"};
  for (int m = 1; m <= 4; ++m) expect[ids[m - 1]] = std::pow(0.7, m) * m / z;
  EXPECT_GT(chi_square_p(s, expect), 0.01);
}

TEST(Plan, ValidationListsEveryProblem) {
  SamplingPlan p;
  p.penalty_base = 1.5;
  p.n_samples = 0;
  p.dbscan_eps = -1;
  EXPECT_EQ(p.validate().size(), 3u);
}

TEST(Plan, AllStrategyTakesEveryUserOnce) {
  SamplingPlan plan;
  plan.strategy = Strategy::kAll;
  SamplingInputs in;
  in.interaction_counts = counts({{"b", 1}, {"a", 4}, {"c", 2}});
  const auto s = run_plan(plan, in);
  EXPECT_EQ(s.draws, (std::vector<std::string>{"a", "b", "c"}));
}

TEST(Plan, CompositeIsDeterministicPerSeed) {
  const auto emb = circle_groups({{0.0, 6}, {2.1, 3}, {4.2, 3}}, 0.02);
  SamplingPlan plan;
  plan.kmeans_k = 3;
  plan.n_samples = 50;
  plan.seed = 9;
  SamplingInputs in;
  for (size_t i = 0; i < emb.size(); ++i) in.interaction_counts[emb.user_ids[i]] = 2 + i;
  in.embeddings = &emb;
  EXPECT_EQ(run_plan(plan, in).draws, run_plan(plan, in).draws);
  EXPECT_EQ(run_plan(plan, in).draws.size(), 50u);
}

TEST(Embeddings, NormalisedRowsAndRoundTrip) {
  const auto t = table({{3, 4}, {0, 0}, {1, 0}});
  const auto n = l2_normalized(t);
  EXPECT_NEAR(n.vectors(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(n.vectors(0, 1), 0.8, 1e-15);
  EXPECT_EQ(n.vectors(1, 0), 0.0);
  const auto path = std::filesystem::temp_directory_path() / "recrank-emb-roundtrip.tsv";
  write_embeddings(path, t);
  const auto back = read_embeddings(path);
  EXPECT_EQ(back.user_ids, t.user_ids);
  EXPECT_EQ(back.vectors, t.vectors);
}

}  // namespace
}  // namespace recrank::sampling
