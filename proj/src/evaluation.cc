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


#include "recrank/evaluation.h"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace recrank::eval {

using nlohmann::json;

namespace {

std::optional<size_t> rank_of(const std::vector<std::string>& ranking, const std::string& truth) {
  auto it = std::find(ranking.begin(), ranking.end(), truth);
  if (it == ranking.end()) return std::nullopt;
  return static_cast<size_t>(it - ranking.begin()) + 1;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double hit_ratio_at_k(const std::vector<std::string>& ranking, const std::string& truth, size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  const auto r = rank_of(ranking, truth);
  return r && *r <= k ? 1.0 : 0.0;
}

double ndcg_at_k(const std::vector<std::string>& ranking, const std::string& truth, size_t k) {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  const auto r = rank_of(ranking, truth);
  if (!r || *r > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(*r) + 1.0);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidArgument("paired samples differ in length");
  if (a.size() < 2) throw InvalidArgument("paired t-test needs at least 2 pairs");
  TTestResult r;
  r.n = a.size();
  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  r.mean_diff = mean(d);
  double ss = 0.0;
  for (double x : d) ss += (x - r.mean_diff) * (x - r.mean_diff);
  const double var = ss / static_cast<double>(r.n - 1);
  if (var == 0.0) {
    r.degenerate = true;
    r.t = r.mean_diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
    r.p = r.mean_diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = r.mean_diff / std::sqrt(var / static_cast<double>(r.n));
  const boost::math::students_t dist(static_cast<double>(r.n - 1));
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t))));
  return r;
}

std::vector<SignificanceResult> holm_bonferroni(const std::vector<Comparison>& family, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  std::vector<SignificanceResult> out;
  for (const auto& c : family) out.push_back({c, false});
  std::vector<size_t> order(family.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t x, size_t y) { return family[x].test.p < family[y].test.p; });
  const size_t m = family.size();
  for (size_t i = 0; i < m; ++i) {
    if (!(family[order[i]].test.p <= alpha / static_cast<double>(m - i))) break;
    out[order[i]].significant = true;
  }
  return out;
}

std::vector<MetricSpec> default_metrics() {
  return {{"H@3", false, 3}, {"N@3", true, 3}, {"H@5", false, 5}, {"N@5", true, 5}};
}

const MethodReport* EvalReport::find(const std::string& method) const {
  for (const auto& m : methods) {
    if (m.method == method) return &m;
  }
  return nullptr;
}

bool EvalReport::significant(const std::string& method, const std::string& metric) const {
  for (const auto& s : significance) {
    if (s.comparison.method == method && s.comparison.metric == metric) return s.significant;
  }
  return false;
}

EvalReport aggregate_report(const std::vector<hybrid::UserRanking>& rankings,
                            const std::map<std::string, std::string, IdLess>& truth, const EvalOptions& opts,
                            const ParseStats& stats) {
  EvalReport rep;
  rep.alpha = opts.alpha;
  for (const auto& m : opts.metrics) rep.metric_names.push_back(m.name);

  // Methods in first-seen order; users sorted by id.
  std::vector<std::string> method_order;
  std::map<std::string, std::map<std::string, const hybrid::UserRanking*, IdLess>> by_method;
  for (const auto& r : rankings) {
    const std::string tag(hybrid::method_tag(r.method));
    if (!by_method.count(tag)) method_order.push_back(tag);
    if (!by_method[tag].emplace(r.user_id, &r).second) {
      throw DataError("duplicate ranking for user " + r.user_id + " under " + tag);
    }
  }
  if (method_order.empty()) return rep;

  std::vector<std::string> users;
  for (const auto& [u, r] : by_method[method_order.front()]) users.push_back(u);
  for (const auto& m : method_order) {
    std::vector<std::string> other;
    for (const auto& [u, r] : by_method[m]) other.push_back(u);
    if (other != users) {
      throw DataError("method " + m + " covers a different user set than " + method_order.front());
    }
  }
  rep.n_users = users.size();

  size_t misses = 0;
  for (const auto& u : users) {
    auto it = truth.find(u);
    if (it == truth.end()) throw DataError("no held-out item for user " + u);
    const auto& items = by_method[method_order.front()][u]->items;
    if (std::find(items.begin(), items.end(), it->second) == items.end()) ++misses;
  }
  rep.retrieval_miss_rate = users.empty() ? 0.0 : static_cast<double>(misses) / static_cast<double>(users.size());

  auto kinds_of = [](const std::string& method) -> std::vector<std::string> {
    if (method == "pointwise") return {"pointwise"};
    if (method == "pointwise_fix") return {"pointwise_fix"};
    if (method == "pairwise") return {"pairwise"};
    if (method == "listwise") return {"listwise"};
    if (method == "hybrid") return {"pointwise", "pairwise", "listwise"};
    if (method == "hybrid_fix") return {"pointwise_fix", "pairwise", "listwise"};
    return {};
  };

  for (const auto& m : method_order) {
    MethodReport mr;
    mr.method = m;
    mr.users = users;
    for (const auto& spec : opts.metrics) {
      std::vector<double> v;
      v.reserve(users.size());
      for (const auto& u : users) {
        const auto& items = by_method[m][u]->items;
        v.push_back(spec.ndcg ? ndcg_at_k(items, truth.at(u), spec.k) : hit_ratio_at_k(items, truth.at(u), spec.k));
      }
      mr.values[spec.name] = mean(v);
      mr.per_user[spec.name] = std::move(v);
    }
    size_t parsed = 0, failed = 0, fallbacks = 0;
    for (const auto& k : kinds_of(m)) {
      if (auto it = stats.parsed_by_kind.find(k); it != stats.parsed_by_kind.end()) parsed += it->second;
      if (auto it = stats.failed_by_kind.find(k); it != stats.failed_by_kind.end()) failed += it->second;
    }
    for (const auto& u : users) fallbacks += by_method[m][u]->fallbacks;
    if (parsed > 0) {
      mr.parse_failure_rate = static_cast<double>(failed) / static_cast<double>(parsed);
      mr.fallback_rate = static_cast<double>(fallbacks) / static_cast<double>(parsed);
    }
    rep.methods.push_back(std::move(mr));
  }

  // Family: each variant against the baseline, per metric.
  const MethodReport* base = rep.find(opts.baseline);
  if (base && rep.n_users >= 2) {
    std::vector<Comparison> family;
    for (const auto& mr : rep.methods) {
      if (mr.method == opts.baseline) continue;
      for (const auto& spec : opts.metrics) {
        family.push_back({mr.method, opts.baseline, spec.name,
                          paired_t_test(mr.per_user.at(spec.name), base->per_user.at(spec.name))});
      }
    }
    rep.significance = holm_bonferroni(family, opts.alpha);
  }
  return rep;
}

json to_json(const EvalReport& r) {
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  json methods = json::array();
  for (const auto& m : r.methods) {
    json per_user = json::object();
    for (const auto& [k, v] : m.per_user) per_user[k] = v;
    methods.push_back({{"method", m.method},
                       {"values", m.values},
                       {"parse_failure_rate", m.parse_failure_rate},
                       {"fallback_rate", m.fallback_rate},
                       {"users", m.users},
                       {"per_user", per_user}});
  }
  json sig = json::array();
  for (const auto& s : r.significance) {
    sig.push_back({{"method", s.comparison.method},
                   {"baseline", s.comparison.baseline},
                   {"metric", s.comparison.metric},
                   {"t", num(s.comparison.test.t)},
                   {"p", s.comparison.test.p},
                   {"degenerate", s.comparison.test.degenerate},
                   {"significant", s.significant}});
  }
  return {{"alpha", r.alpha},
          {"n_users", r.n_users},
          {"retrieval_miss_rate", r.retrieval_miss_rate},
          {"config_hash", r.config_hash},
          {"seed", r.seed},
          {"metrics", r.metric_names},
          {"methods", methods},
          {"significance", sig}};
}

std::string render_table(const EvalReport& r) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header = {"Method"};
  for (const auto& m : r.metric_names) header.push_back(m);
  header.push_back("ParseFail");
  header.push_back("Fallback");
  cells.push_back(header);

  // Best and second-best distinct values per metric.
  std::map<std::string, std::pair<double, double>> marks;
  for (const auto& metric : r.metric_names) {
    std::set<double, std::greater<>> vals;
    for (const auto& m : r.methods) vals.insert(m.values.at(metric));
    auto it = vals.begin();
    const double best = it == vals.end() ? 0.0 : *it++;
    const double second = it == vals.end() ? -1.0 : *it;
    marks[metric] = {best, second};
  }
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
  };
  for (const auto& m : r.methods) {
    std::vector<std::string> row = {m.method};
    for (const auto& metric : r.metric_names) {
      const double v = m.values.at(metric);
      std::string c = fmt(v);
      if (r.significant(m.method, metric)) c += "*";
      if (v == marks[metric].first) {
        c = "**" + c + "**";
      } else if (v == marks[metric].second) {
        c = "_" + c + "_";
      }
      row.push_back(c);
    }
    row.push_back(fmt(m.parse_failure_rate));
    row.push_back(fmt(m.fallback_rate));
    cells.push_back(row);
  }
  std::vector<size_t> width(header.size(), 0);
  for (const auto& row : cells) {
    for (size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& row) {
    out << '|';
    for (size_t c = 0; c < row.size(); ++c) {
      out << ' ' << row[c] << std::string(width[c] - row[c].size(), ' ') << " |";
    }
    out << '\n';
  };
  line(cells.front());
  out << '|';
  for (size_t c = 0; c < width.size(); ++c) out << std::string(width[c] + 2, '-') << '|';
  out << '\n';
  for (size_t i = 1; i < cells.size(); ++i) line(cells[i]);
  out << "\nusers: " << r.n_users << ", retrieval miss rate: " << fmt(r.retrieval_miss_rate)
      << ", * = Holm-Bonferroni corrected paired t-test vs " << (r.significance.empty() ? "base" : r.significance.front().comparison.baseline)
      << " (p < " << format_double(r.alpha) << ")\n";
  return out.str();
}

}  // namespace recrank::eval
