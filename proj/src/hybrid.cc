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


#include "recrank/hybrid.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <unordered_map>

namespace recrank::hybrid {

namespace fs = std::filesystem;
using nlohmann::json;
using parse::ParsedResult;
using parse::Status;
using prompts::Kind;

std::vector<std::string> UtilityWeights::validate() const {
  std::vector<std::string> errs;
  if (!(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha3 >= 0.0)) errs.emplace_back("weights.alpha must be >= 0");
  if (!(std::fabs(alpha1 + alpha2 + alpha3 - 1.0) <= 1e-12)) {
    errs.emplace_back("weights.alpha1 + alpha2 + alpha3 must equal 1 (got " +
                      format_double(alpha1 + alpha2 + alpha3) + ")");
  }
  if (!(c1 > 0.0 && c2 > 0.0 && c3 > 0.0)) errs.emplace_back("weights.c1, c2 and c3 must be > 0");
  return errs;
}

PairwiseMode parse_pairwise_mode(std::string_view tag) {
  if (tag == "constant") return PairwiseMode::kConstant;
  if (tag == "win-count" || tag == "win_count") return PairwiseMode::kWinCount;
  throw InvalidArgument("unknown pairwise mode '" + std::string(tag) + "'");
}

std::string_view pairwise_mode_tag(PairwiseMode m) { return m == PairwiseMode::kConstant ? "constant" : "win-count"; }

double utility_pointwise(double p, size_t m, double c1) {
  if (m < 1) throw InvalidArgument("rank m must be >= 1");
  return p - static_cast<double>(m) * c1;
}

double utility_listwise(size_t m_prime, double c3) {
  if (m_prime < 1) throw InvalidArgument("rank m' must be >= 1");
  return -static_cast<double>(m_prime) * c3;
}

std::map<std::string, double> utility_pairwise(const std::vector<std::string>& items,
                                               const std::vector<PairVerdict>& verdicts, double c2,
                                               PairwiseMode mode) {
  std::map<std::string, double> u;
  for (const auto& i : items) u[i] = mode == PairwiseMode::kConstant ? c2 : 0.0;
  if (mode == PairwiseMode::kWinCount) {
    std::map<std::string, size_t> wins;
    for (const auto& v : verdicts) ++wins[v.a_preferred ? v.item_a : v.item_b];
    for (auto& [item, value] : u) value = c2 * static_cast<double>(wins[item]);
  }
  return u;
}

std::vector<ItemUtility> hybrid_combine(std::vector<ItemUtility> rows, const UtilityWeights& w) {
  for (auto& r : rows) r.u_hybrid = w.alpha1 * r.u_point + w.alpha2 * r.u_pair + w.alpha3 * r.u_list;
  std::sort(rows.begin(), rows.end(), [](const ItemUtility& a, const ItemUtility& b) {
    if (a.u_hybrid != b.u_hybrid) return a.u_hybrid > b.u_hybrid;
    if (a.m != b.m) return a.m < b.m;
    return id_less(a.item_id, b.item_id);
  });
  return rows;
}

Method parse_method(std::string_view tag) {
  if (tag == "base") return Method::kBase;
  if (tag == "pointwise") return Method::kPointwise;
  if (tag == "pointwise_fix" || tag == "pointwise-fix") return Method::kPointwiseFix;
  if (tag == "pairwise") return Method::kPairwise;
  if (tag == "listwise") return Method::kListwise;
  if (tag == "hybrid") return Method::kHybrid;
  if (tag == "hybrid_fix" || tag == "hybrid-fix") return Method::kHybridFix;
  throw InvalidArgument("unknown method '" + std::string(tag) + "'");
}

std::string_view method_tag(Method m) {
  switch (m) {
    case Method::kBase:
      return "base";
    case Method::kPointwise:
      return "pointwise";
    case Method::kPointwiseFix:
      return "pointwise_fix";
    case Method::kPairwise:
      return "pairwise";
    case Method::kListwise:
      return "listwise";
    case Method::kHybrid:
      return "hybrid";
    case Method::kHybridFix:
      return "hybrid_fix";
  }
  return "base";
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> kAll = {Method::kBase,     Method::kPointwise, Method::kPointwiseFix,
                                           Method::kPairwise, Method::kListwise,  Method::kHybrid,
                                           Method::kHybridFix};
  return kAll;
}

FallbackPolicy parse_fallback(std::string_view tag) {
  if (tag == "hint") return FallbackPolicy::kHint;
  if (tag == "drop-user" || tag == "drop_user") return FallbackPolicy::kDropUser;
  throw InvalidArgument("unknown fallback policy '" + std::string(tag) + "'");
}

std::string_view fallback_tag(FallbackPolicy f) { return f == FallbackPolicy::kHint ? "hint" : "drop-user"; }

namespace {

// Parsed evidence for one user's inference list.
struct Evidence {
  std::map<std::string, double> point, point_fix;
  size_t point_fb = 0, point_fix_fb = 0;
  std::vector<PairVerdict> pairs;
  size_t pair_fb = 0;
  std::vector<std::string> listwise;
  size_t list_fb = 0;
  bool any_failed = false;
};

std::vector<Kind> kinds_for(Method m) {
  switch (m) {
    case Method::kBase:
      return {};
    case Method::kPointwise:
      return {Kind::kPointwise};
    case Method::kPointwiseFix:
      return {Kind::kPointwiseFix};
    case Method::kPairwise:
      return {Kind::kPairwise};
    case Method::kListwise:
      return {Kind::kListwise};
    case Method::kHybrid:
      return {Kind::kPointwise, Kind::kPairwise, Kind::kListwise};
    case Method::kHybridFix:
      return {Kind::kPointwiseFix, Kind::kPairwise, Kind::kListwise};
  }
  return {};
}

}  // namespace

RankOutput rank_all(const std::vector<lists::RankingList>& lists, const std::vector<prompts::PromptInstance>& prompts,
                    const std::vector<ParsedResult>& parsed, const RankOptions& opts) {
  auto errs = opts.weights.validate();
  if (!errs.empty()) throw InvalidArgument(errs.front());
  std::unordered_map<std::string, const prompts::PromptInstance*> by_id;
  for (const auto& p : prompts) by_id.emplace(p.id, &p);

  RankOutput out;
  std::set<Kind> present;
  std::map<std::string, Evidence, IdLess> evidence;
  for (ParsedResult r : parsed) {
    auto it = by_id.find(r.prompt_id);
    if (it == by_id.end()) throw DataError("parsed result " + r.prompt_id + " has no matching prompt");
    const auto& prompt = *it->second;
    if (prompt.phase != lists::Phase::kInfer) continue;
    const std::string tag(prompts::kind_tag(r.kind));
    present.insert(r.kind);
    ++out.parsed_by_kind[tag];
    out.failed_by_kind.try_emplace(tag, 0);
    out.partial_by_kind.try_emplace(tag, 0);
    if (r.status == Status::kPartial) ++out.partial_by_kind[tag];
    Evidence& ev = evidence[r.user_id];
    if (r.status == Status::kFailed) {
      ++out.failed_by_kind[tag];
      ev.any_failed = true;
      parse::apply_fallback(r, prompt);
    }
    const size_t fb = r.fallback_applied ? 1 : 0;
    switch (r.kind) {
      case Kind::kListwise:
        ev.listwise = r.items;
        ev.list_fb += fb;
        break;
      case Kind::kPointwise:
        ev.point[r.payload.at(0)] = r.score.value();
        ev.point_fb += fb;
        break;
      case Kind::kPointwiseFix:
        ev.point_fix[r.payload.at(0)] = r.score.value();
        ev.point_fix_fb += fb;
        break;
      case Kind::kPairwise:
        ev.pairs.push_back({r.payload.at(0), r.payload.at(1), r.verdict.value() == parse::Verdict::kYes});
        ev.pair_fb += fb;
        break;
    }
  }

  std::vector<Method> methods;
  for (Method m : all_methods()) {
    const auto need = kinds_for(m);
    if (std::all_of(need.begin(), need.end(), [&](Kind k) { return present.count(k) != 0; })) methods.push_back(m);
  }

  for (const auto& list : lists) {
    if (list.phase != lists::Phase::kInfer) continue;
    const Evidence& ev = evidence[list.user_id];
    if (opts.fallback == FallbackPolicy::kDropUser && ev.any_failed) {
      out.dropped_users.push_back(list.user_id);
      continue;
    }
    const size_t n = list.hint_order.size();
    std::vector<ItemUtility> rows(n);
    std::map<std::string, size_t> listwise_rank;
    for (size_t i = 0; i < ev.listwise.size(); ++i) listwise_rank[ev.listwise[i]] = i + 1;
    const auto pair_u = utility_pairwise(list.hint_order, ev.pairs, opts.weights.c2, opts.pairwise_mode);
    for (size_t i = 0; i < n; ++i) {
      rows[i].item_id = list.hint_order[i];
      rows[i].m = i + 1;
    }

    for (Method m : methods) {
      const auto need = kinds_for(m);
      auto uses = [&](Kind k) { return std::find(need.begin(), need.end(), k) != need.end(); };
      std::vector<ItemUtility> r = rows;
      UtilityWeights w = opts.weights;
      size_t fallbacks = 0;
      for (auto& row : r) {
        if (uses(Kind::kPointwise) || uses(Kind::kPointwiseFix)) {
          const auto& table = uses(Kind::kPointwise) ? ev.point : ev.point_fix;
          auto it = table.find(row.item_id);
          if (it == table.end()) {
            throw DataError("user " + list.user_id + " lacks a pointwise score for item " + row.item_id);
          }
          row.p = it->second;
          row.u_point = utility_pointwise(row.p, row.m, w.c1);
        }
        if (uses(Kind::kPairwise)) row.u_pair = pair_u.at(row.item_id);
        if (uses(Kind::kListwise)) {
          auto it = listwise_rank.find(row.item_id);
          if (it == listwise_rank.end()) {
            throw DataError("user " + list.user_id + " listwise result misses item " + row.item_id);
          }
          row.m_prime = it->second;
          row.u_list = utility_listwise(row.m_prime, w.c3);
        }
      }
      if (uses(Kind::kPointwise)) fallbacks += ev.point_fb;
      if (uses(Kind::kPointwiseFix)) fallbacks += ev.point_fix_fb;
      if (uses(Kind::kPairwise)) fallbacks += ev.pair_fb;
      if (uses(Kind::kListwise)) fallbacks += ev.list_fb;

      switch (m) {
        case Method::kBase:
          w.alpha1 = w.alpha2 = w.alpha3 = 0.0;
          break;
        case Method::kPointwise:
        case Method::kPointwiseFix:
          w.alpha1 = 1.0, w.alpha2 = 0.0, w.alpha3 = 0.0;
          break;
        case Method::kPairwise:
          w.alpha1 = 0.0, w.alpha2 = 1.0, w.alpha3 = 0.0;
          break;
        case Method::kListwise:
          w.alpha1 = 0.0, w.alpha2 = 0.0, w.alpha3 = 1.0;
          break;
        case Method::kHybrid:
        case Method::kHybridFix:
          break;
      }
      UserRanking ur;
      ur.user_id = list.user_id;
      ur.method = m;
      ur.utilities = hybrid_combine(std::move(r), w);
      for (const auto& row : ur.utilities) ur.items.push_back(row.item_id);
      ur.fallbacks = fallbacks;
      out.fallbacks += fallbacks;
      out.rankings.push_back(std::move(ur));
    }
  }
  if (!out.dropped_users.empty()) {
    spdlog::warn("dropped {} users with failed parses", out.dropped_users.size());
  }
  return out;
}

void write_rankings(const fs::path& path, const RankOutput& out) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  for (const auto& r : out.rankings) {
    json rows = json::array();
    for (const auto& u : r.utilities) {
      rows.push_back({{"item_id", u.item_id},
                      {"m", u.m},
                      {"m_prime", u.m_prime},
                      {"p", u.p},
                      {"u_point", u.u_point},
                      {"u_pair", u.u_pair},
                      {"u_list", u.u_list},
                      {"u_hybrid", u.u_hybrid}});
    }
    json j = {{"user_id", r.user_id},
              {"method", method_tag(r.method)},
              {"items", r.items},
              {"fallbacks", r.fallbacks},
              {"utilities", rows}};
    f << j.dump() << '\n';
  }
}

std::vector<UserRanking> read_rankings(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<UserRanking> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      UserRanking r;
      r.user_id = j.at("user_id").get<std::string>();
      r.method = parse_method(j.at("method").get<std::string>());
      r.items = j.at("items").get<std::vector<std::string>>();
      r.fallbacks = j.value("fallbacks", size_t{0});
      for (const auto& u : j.value("utilities", json::array())) {
        ItemUtility x;
        x.item_id = u.at("item_id").get<std::string>();
        x.m = u.at("m").get<size_t>();
        x.m_prime = u.at("m_prime").get<size_t>();
        x.p = u.at("p").get<double>();
        x.u_point = u.at("u_point").get<double>();
        x.u_pair = u.at("u_pair").get<double>();
        x.u_list = u.at("u_list").get<double>();
        x.u_hybrid = u.at("u_hybrid").get<double>();
        r.utilities.push_back(std::move(x));
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace recrank::hybrid
