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

#include "recrank/common.h"
#include "recrank/hybrid.h"

namespace recrank::eval {

// 1 when truth is among the first k items, else 0.
double hit_ratio_at_k(const std::vector<std::string>& ranking, const std::string& truth, size_t k);
// 1 / log2(rank + 1) when the truth sits at 1-based rank <= k, else 0.
double ndcg_at_k(const std::vector<std::string>& ranking, const std::string& truth, size_t k);

struct TTestResult {
  double t = 0.0;  // +-inf when degenerate with non-zero mean difference
  double p = 1.0;
  bool degenerate = false;
  size_t n = 0;
  double mean_diff = 0.0;
};

// Two-sided paired t-test on a - b with n - 1 degrees of freedom.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct Comparison {
  std::string method;    // variant
  std::string baseline;  // reference method
  std::string metric;
  TTestResult test;
};

struct SignificanceResult {
  Comparison comparison;
  bool significant = false;
};

// Step-down correction; results are returned in input order.
std::vector<SignificanceResult> holm_bonferroni(const std::vector<Comparison>& family, double alpha);

struct MetricSpec {
  std::string name;  // "H@3"
  bool ndcg = false;
  size_t k = 0;
};

std::vector<MetricSpec> default_metrics();

struct MethodReport {
  std::string method;
  std::vector<std::string> users;
  std::map<std::string, double> values;
  std::map<std::string, std::vector<double>> per_user;
  double parse_failure_rate = 0.0;
  double fallback_rate = 0.0;
};

struct EvalOptions {
  double alpha = 0.05;
  std::string baseline = "base";
  std::vector<MetricSpec> metrics = default_metrics();
};

// Parse statistics of the rank stage keyed by prompt kind.
struct ParseStats {
  std::map<std::string, size_t> parsed_by_kind;
  std::map<std::string, size_t> failed_by_kind;
  std::map<std::string, size_t> fallbacks_by_method;
};

struct EvalReport {
  std::vector<MethodReport> methods;
  std::vector<SignificanceResult> significance;
  double alpha = 0.05;
  size_t n_users = 0;
  double retrieval_miss_rate = 0.0;  // truth absent from the candidate list
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<std::string> metric_names;

  const MethodReport* find(const std::string& method) const;
  bool significant(const std::string& method, const std::string& metric) const;
};

// Rankings from one rank stage; every method must cover the same users.
EvalReport aggregate_report(const std::vector<hybrid::UserRanking>& rankings,
                            const std::map<std::string, std::string, IdLess>& truth, const EvalOptions& opts,
                            const ParseStats& stats = {});

nlohmann::json to_json(const EvalReport& r);
// Aligned text table: one row per method, metric columns; '*' marks a
// significant difference from the baseline, **best** and _second_.
std::string render_table(const EvalReport& r);

}  // namespace recrank::eval
