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


#include "recrank/prompt.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "recrank/rng.h"

namespace recrank::prompts {

namespace fs = std::filesystem;
using nlohmann::json;

Kind parse_kind(std::string_view tag) {
  if (tag == "listwise") return Kind::kListwise;
  if (tag == "pointwise") return Kind::kPointwise;
  if (tag == "pointwise_fix" || tag == "pointwise-fix") return Kind::kPointwiseFix;
  if (tag == "pairwise") return Kind::kPairwise;
  throw InvalidArgument("unknown prompt kind '" + std::string(tag) + "'");
}

std::string_view kind_tag(Kind k) {
  switch (k) {
    case Kind::kListwise:
      return "listwise";
    case Kind::kPointwise:
      return "pointwise";
    case Kind::kPointwiseFix:
      return "pointwise_fix";
    case Kind::kPairwise:
      return "pairwise";
  }
  return "listwise";
}

const std::vector<Kind>& all_kinds() {
  static const std::vector<Kind> kAll = {Kind::kListwise, Kind::kPointwise, Kind::kPointwiseFix, Kind::kPairwise};
  return kAll;
}

DomainWords DomainWords::for_format(data::Format f) {
  switch (f) {
    case data::Format::kBookCrossing:
      return {"book", "books"};
    case data::Format::kAmazonMusic:
      return {"music", "music"};
    default:
      return {"movie", "movies"};
  }
}

Templates Templates::defaults() {
  const std::string history =
      "User's Liked {domains}: {liked}.\n"
      "User's Disliked {domains}: {disliked}.\n";
  Templates t;
  t.listwise =
      "You are a {domain} recommender system. Your task is to rank a given list of candidate {domains} based on "
      "user preferences and return the top five recommendations.\n" +
      history +
      "Question: How would the user rank the candidate item list: {candidates}?\n"
      "Hint: Another recommender model suggests {hint}.";
  const std::string point_head =
      "You are a {domain} recommender system. Your task is to predict the relevance score to a target {domain} "
      "based on the user's historical {domain} ratings.\n"
      "The score should be between 1 and 5.\n" +
      history + "Question: Based on the user's historical ratings, predict the relevance score of the target {target} "
                "with the user.";
  t.pointwise = point_head + "\nHint: Another recommender model suggests the answer is {score}.";
  t.pointwise_fix = point_head;
  t.pairwise =
      "You are a {domain} recommender system. Based on a user's likes and dislikes, determine if they would prefer "
      "one {domain} over another. Respond only with \"Yes.\" or \"No.\".\n" +
      history +
      "Question: Would the user prefer {item_a} over {item_b}?\n"
      "Hint: Another recommender model suggests the answer is {hint}.";
  return t;
}

const std::string& Templates::of(Kind k) const {
  switch (k) {
    case Kind::kListwise:
      return listwise;
    case Kind::kPointwise:
      return pointwise;
    case Kind::kPointwiseFix:
      return pointwise_fix;
    case Kind::kPairwise:
      return pairwise;
  }
  return listwise;
}

HintSource parse_hint_source(std::string_view tag) {
  if (tag == "model") return HintSource::kModel;
  if (tag == "leaky") return HintSource::kLeaky;
  throw InvalidArgument("unknown pointwise hint source '" + std::string(tag) + "'");
}

std::string_view hint_source_tag(HintSource h) { return h == HintSource::kModel ? "model" : "leaky"; }

std::vector<std::string> PromptConfig::validate() const {
  std::vector<std::string> errs;
  if (kinds.empty()) errs.emplace_back("prompts.kinds must name at least one kind");
  if (context_budget < 64) errs.emplace_back("prompts.context_budget must be >= 64 tokens");
  if (templates.pointwise_fix.find("{score}") != std::string::npos) {
    errs.emplace_back("prompts.templates.pointwise_fix must not reference {score}");
  }
  return errs;
}

size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size() + 256);
  size_t i = 0;
  while (i < tmpl.size()) {
    const size_t open = tmpl.find('{', i);
    if (open == std::string::npos) {
      out.append(tmpl, i, std::string::npos);
      break;
    }
    const size_t close = tmpl.find('}', open);
    if (close == std::string::npos) throw InvalidArgument("unterminated placeholder in template");
    out.append(tmpl, i, open - i);
    const std::string name = tmpl.substr(open + 1, close - open - 1);
    auto it = slots.find(name);
    if (it == slots.end()) throw InvalidArgument("template placeholder {" + name + "} has no value here");
    out += it->second;
    i = close + 1;
  }
  return out;
}

std::string join_titles(const std::vector<std::string>& titles) {
  if (titles.empty()) return "None";
  std::string s;
  for (size_t i = 0; i < titles.size(); ++i) {
    if (i) s += ", ";
    s += titles[i];
  }
  return s;
}

std::string numbered_list(const std::vector<std::string>& titles) {
  std::string s;
  for (size_t i = 0; i < titles.size(); ++i) {
    if (i) s += '\n';
    s += std::to_string(i + 1) + ". " + titles[i];
  }
  return s;
}

double rank_hint_score(size_t m, size_t n) {
  if (m < 1 || m > n) throw InvalidArgument("rank outside list");
  if (n == 1) return 5.0;
  return 5.0 - 4.0 * static_cast<double>(m - 1) / static_cast<double>(n - 1);
}

double to_prompt_scale(double rating, const data::RatingScale& scale) { return rating * 5.0 / scale.max; }

namespace {

std::vector<std::string> titles_of(const std::vector<std::string>& ids, const data::Catalog& catalog) {
  std::vector<std::string> t;
  t.reserve(ids.size());
  for (const auto& id : ids) t.push_back(catalog.title(id));
  return t;
}

std::map<std::string, std::string> base_slots(const History& h, const RenderContext& ctx) {
  return {{"domain", ctx.words.singular},
          {"domains", ctx.words.plural},
          {"liked", join_titles(h.liked)},
          {"disliked", join_titles(h.disliked)}};
}

void check_ctx(const RenderContext& ctx) {
  if (!ctx.catalog || !ctx.templates) throw InvalidArgument("render context needs a catalog and templates");
}

}  // namespace

PromptInstance build_listwise_prompt(const lists::RankingList& list, const History& history,
                                     const RenderContext& ctx) {
  check_ctx(ctx);
  if (list.items.empty()) throw InvalidArgument("listwise prompt for " + list.user_id + " has no candidates");
  auto slots = base_slots(history, ctx);
  slots["candidates"] = join_titles(titles_of(list.items, *ctx.catalog));
  slots["hint"] = join_titles(titles_of(list.hint_order, *ctx.catalog));
  PromptInstance p;
  p.id = list.user_id + "/listwise/0";
  p.kind = Kind::kListwise;
  p.phase = list.phase;
  p.user_id = list.user_id;
  p.text = render_template(ctx.templates->listwise, slots);
  p.payload = list.items;
  p.hint_items = list.hint_order;
  if (list.phase == lists::Phase::kTrain) {
    const size_t top = std::min<size_t>(5, list.ground_truth.size());
    std::vector<std::string> gold(list.ground_truth.begin(), list.ground_truth.begin() + static_cast<long>(top));
    p.expected_answer = numbered_list(titles_of(gold, *ctx.catalog));
  }
  return p;
}

PromptInstance build_pointwise_prompt(const std::string& user, const std::string& target, const History& history,
                                      std::optional<double> hint_score, bool fix, const RenderContext& ctx) {
  check_ctx(ctx);
  if (!fix && !hint_score) throw InvalidArgument("pointwise prompt for " + user + " needs a hint score");
  auto slots = base_slots(history, ctx);
  slots["target"] = ctx.catalog->title(target);
  if (!fix) slots["score"] = format_score(*hint_score);
  PromptInstance p;
  p.id = user + (fix ? "/pointwise_fix/" : "/pointwise/") + target;
  p.kind = fix ? Kind::kPointwiseFix : Kind::kPointwise;
  p.user_id = user;
  p.text = render_template(fix ? ctx.templates->pointwise_fix : ctx.templates->pointwise, slots);
  p.payload = {target};
  if (!fix) p.hint_score = hint_score;
  return p;
}

PromptInstance build_pairwise_prompt(const std::string& user, const std::string& item_a, const std::string& item_b,
                                     const History& history, const std::string& hint_winner,
                                     const RenderContext& ctx) {
  check_ctx(ctx);
  if (item_a == item_b) throw InvalidArgument("pairwise prompt compares " + item_a + " with itself");
  if (hint_winner != item_a && hint_winner != item_b) {
    throw InvalidArgument("pairwise hint winner " + hint_winner + " is not in the pair");
  }
  auto slots = base_slots(history, ctx);
  slots["item_a"] = ctx.catalog->title(item_a);
  slots["item_b"] = ctx.catalog->title(item_b);
  slots["hint"] = ctx.catalog->title(hint_winner);
  PromptInstance p;
  p.id = user + "/pairwise/" + item_a + "," + item_b;
  p.kind = Kind::kPairwise;
  p.user_id = user;
  p.text = render_template(ctx.templates->pairwise, slots);
  p.payload = {item_a, item_b};
  p.hint_items = {hint_winner};
  return p;
}

std::vector<std::pair<std::string, std::string>> pair_schedule(const std::vector<std::string>& hint_order,
                                                               bool round_robin) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (size_t i = 0; i + 1 < hint_order.size(); ++i) {
    if (round_robin) {
      for (size_t j = i + 1; j < hint_order.size(); ++j) pairs.emplace_back(hint_order[i], hint_order[j]);
    } else {
      pairs.emplace_back(hint_order[i], hint_order[i + 1]);
    }
  }
  return pairs;
}

std::vector<HistoryEntry> sample_history(const std::string& user, const lists::UserHistory& history,
                                         const std::vector<std::string>& exclude, const PromptConfig& cfg) {
  const std::set<std::string> skip(exclude.begin(), exclude.end());
  std::vector<HistoryEntry> liked, disliked;
  for (const auto& x : history.train_of(user)) {
    if (skip.count(x.item_id)) continue;
    switch (data::label_preference(x.rating, history.scale())) {
      case data::Preference::kLiked:
        liked.push_back({x.item_id, x.timestamp, true});
        break;
      case data::Preference::kDisliked:
        disliked.push_back({x.item_id, x.timestamp, false});
        break;
      case data::Preference::kNeutral:
        break;
    }
  }
  Rng rng(Rng::derive(cfg.seed, stable_hash64(user)));
  rng.shuffle(liked);
  rng.shuffle(disliked);
  if (liked.size() > cfg.history_liked) liked.resize(cfg.history_liked);
  if (disliked.size() > cfg.history_disliked) disliked.resize(cfg.history_disliked);
  std::vector<HistoryEntry> all = std::move(liked);
  all.insert(all.end(), disliked.begin(), disliked.end());
  std::sort(all.begin(), all.end(), [](const HistoryEntry& a, const HistoryEntry& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return id_less(a.item_id, b.item_id);
  });
  return all;
}

namespace {

History history_from(const std::vector<HistoryEntry>& entries, size_t drop, const data::Catalog& catalog) {
  History h;
  for (size_t i = drop; i < entries.size(); ++i) {
    (entries[i].liked ? h.liked : h.disliked).push_back(catalog.title(entries[i].item_id));
  }
  return h;
}

// Renders with the longest history suffix that fits the budget.
template <class Build>
PromptInstance fit_budget(const std::vector<HistoryEntry>& entries, const data::Catalog& catalog, size_t budget,
                          const Build& build) {
  for (size_t drop = 0; drop <= entries.size(); ++drop) {
    PromptInstance p = build(history_from(entries, drop, catalog));
    if (estimate_tokens(p.text) <= budget) {
      if (drop > 0) spdlog::debug("{}: dropped {} oldest history items", p.id, drop);
      return p;
    }
    if (drop == entries.size()) {
      throw DataError("prompt " + p.id + " needs " + std::to_string(estimate_tokens(p.text)) +
                      " tokens with empty history; budget is " + std::to_string(budget));
    }
  }
  throw DataError("unreachable");
}

}  // namespace

std::vector<PromptInstance> generate_prompts(const std::vector<lists::RankingList>& lists,
                                             const lists::UserHistory& history, const data::Catalog& catalog,
                                             const DomainWords& words, const PromptConfig& cfg) {
  auto errs = cfg.validate();
  if (!errs.empty()) throw InvalidArgument(errs.front());
  const RenderContext ctx{&catalog, words, &cfg.templates};
  auto wants = [&](Kind k) { return std::find(cfg.kinds.begin(), cfg.kinds.end(), k) != cfg.kinds.end(); };
  std::vector<PromptInstance> out;
  for (const auto& list : lists) {
    const bool train = list.phase == lists::Phase::kTrain;
    const auto entries = sample_history(list.user_id, history, list.items, cfg);
    auto gold_pos = [&](const std::string& item) {
      auto it = std::find(list.ground_truth.begin(), list.ground_truth.end(), item);
      return static_cast<size_t>(it - list.ground_truth.begin());
    };

    if (wants(Kind::kListwise)) {
      out.push_back(fit_budget(entries, catalog, cfg.context_budget,
                               [&](const History& h) { return build_listwise_prompt(list, h, ctx); }));
    }

    for (bool fix : {false, true}) {
      if (!wants(fix ? Kind::kPointwiseFix : Kind::kPointwise)) continue;
      const size_t n = list.hint_order.size();
      for (size_t r = 0; r < n; ++r) {
        const std::string& target = list.hint_order[r];
        const auto observed = history.rating(list.user_id, target);
        // Train targets need a gold rating, so only observed items qualify.
        if (train && !observed) continue;
        std::optional<double> hint;
        if (!fix) {
          hint = cfg.pointwise_hint == HintSource::kModel
                     ? rank_hint_score(r + 1, n)
                     : (observed ? to_prompt_scale(*observed, history.scale()) : 0.0);
        }
        PromptInstance p = fit_budget(entries, catalog, cfg.context_budget, [&](const History& h) {
          return build_pointwise_prompt(list.user_id, target, h, hint, fix, ctx);
        });
        p.phase = list.phase;
        p.hint_rank = r + 1;
        if (train) p.expected_answer = format_score(to_prompt_scale(*observed, history.scale()));
        out.push_back(std::move(p));
      }
    }

    if (wants(Kind::kPairwise)) {
      for (const auto& [a, b] : pair_schedule(list.hint_order, cfg.pairwise_round_robin)) {
        PromptInstance p = fit_budget(entries, catalog, cfg.context_budget, [&](const History& h) {
          return build_pairwise_prompt(list.user_id, a, b, h, a, ctx);
        });
        p.phase = list.phase;
        if (train) p.expected_answer = gold_pos(a) < gold_pos(b) ? "Yes." : "No.";
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

double LintReport::flagged_fraction(Kind k) const {
  const std::string tag(kind_tag(k));
  auto c = checked_by_kind.find(tag);
  if (c == checked_by_kind.end() || c->second == 0) return 0.0;
  auto f = flagged_by_kind.find(tag);
  return static_cast<double>(f == flagged_by_kind.end() ? 0 : f->second) / static_cast<double>(c->second);
}

LintReport lint_leakage(const std::vector<PromptInstance>& instances) {
  LintReport r;
  for (const auto& p : instances) {
    if (p.phase != lists::Phase::kTrain) continue;
    if (p.kind != Kind::kPointwise && p.kind != Kind::kPointwiseFix) continue;
    const std::string tag(kind_tag(p.kind));
    ++r.checked;
    ++r.checked_by_kind[tag];
    r.flagged_by_kind.try_emplace(tag, 0);
    if (p.hint_score && format_score(*p.hint_score) == p.expected_answer) {
      ++r.flagged_by_kind[tag];
      r.flagged_ids.push_back(p.id);
    }
  }
  return r;
}

CorpusManifest emit_tuning_corpus(const std::vector<PromptInstance>& instances,
                                  const std::map<std::string, double>& mix, uint64_t seed,
                                  const std::string& config_hash, const fs::path& out_dir) {
  std::map<std::string, std::vector<const PromptInstance*>> pools;
  for (const auto& p : instances) {
    if (p.phase != lists::Phase::kTrain) throw InvalidArgument("inference-phase prompt " + p.id + " in tuning corpus");
    if (p.expected_answer.empty()) throw InvalidArgument("prompt " + p.id + " has no gold answer");
    pools[std::string(kind_tag(p.kind))].push_back(&p);
  }

  std::vector<const PromptInstance*> chosen;
  CorpusManifest m;
  m.seed = seed;
  m.config_hash = config_hash;
  if (mix.empty()) {
    for (const auto& p : instances) chosen.push_back(&p);
    for (const auto& [k, v] : pools) m.counts[k] = v.size();
  } else {
    double weight_sum = 0.0;
    size_t total = 0;
    for (const auto& [k, w] : mix) {
      parse_kind(k);
      if (!(w >= 0.0)) throw InvalidArgument("corpus mix weight for " + k + " must be >= 0");
      if (w > 0.0) {
        weight_sum += w;
        total += pools[k].size();
      }
    }
    if (!(weight_sum > 0.0)) throw InvalidArgument("corpus mix has no positive weight");
    // Largest-remainder apportionment of the total across kinds.
    std::vector<std::pair<std::string, double>> shares;
    size_t assigned = 0;
    for (const auto& [k, w] : mix) {
      if (w <= 0.0) continue;
      const double exact = w / weight_sum * static_cast<double>(total);
      m.counts[k] = static_cast<size_t>(std::floor(exact + 1e-9));
      assigned += m.counts[k];
      shares.emplace_back(k, exact - static_cast<double>(m.counts[k]));
    }
    std::stable_sort(shares.begin(), shares.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    for (size_t i = 0; assigned < total; ++i, ++assigned) ++m.counts[shares[i % shares.size()].first];
    for (const auto& [k, want] : m.counts) {
      auto pool = pools[k];
      if (pool.size() < want) {
        throw InvalidArgument("corpus mix needs " + std::to_string(want) + " " + k + " instances, have " +
                              std::to_string(pool.size()));
      }
      Rng rng(Rng::derive(seed, stable_hash64(k)));
      rng.shuffle(pool);
      chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<long>(want));
    }
  }
  Rng rng(Rng::derive(seed, 0));
  rng.shuffle(chosen);
  m.total = chosen.size();

  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "corpus.jsonl", std::ios::binary);
    if (!out) throw DataError("cannot write corpus in " + out_dir.string());
    for (const auto* p : chosen) {
      json j;
      j["instruction"] = p->text;
      j["input"] = "";
      j["output"] = p->expected_answer;
      out << j.dump() << '\n';
    }
  }
  json mj;
  mj["counts"] = m.counts;
  mj["total"] = m.total;
  mj["seed"] = m.seed;
  mj["config_hash"] = m.config_hash;
  std::ofstream(out_dir / "corpus_manifest.json", std::ios::binary) << mj.dump(2) << '\n';
  return m;
}

json to_json(const PromptInstance& p) {
  json j;
  j["id"] = p.id;
  j["kind"] = kind_tag(p.kind);
  j["phase"] = lists::phase_tag(p.phase);
  j["user_id"] = p.user_id;
  j["text"] = p.text;
  j["payload"] = p.payload;
  j["hint_items"] = p.hint_items;
  j["hint_score"] = p.hint_score ? json(*p.hint_score) : json(nullptr);
  j["hint_rank"] = p.hint_rank;
  j["expected_answer"] = p.expected_answer;
  return j;
}

PromptInstance prompt_from_json(const json& j) {
  PromptInstance p;
  p.id = j.at("id").get<std::string>();
  p.kind = parse_kind(j.at("kind").get<std::string>());
  p.phase = lists::parse_phase(j.at("phase").get<std::string>());
  p.user_id = j.at("user_id").get<std::string>();
  p.text = j.at("text").get<std::string>();
  p.payload = j.at("payload").get<std::vector<std::string>>();
  p.hint_items = j.value("hint_items", std::vector<std::string>{});
  if (j.contains("hint_score") && !j["hint_score"].is_null()) p.hint_score = j["hint_score"].get<double>();
  p.hint_rank = j.value("hint_rank", size_t{0});
  p.expected_answer = j.value("expected_answer", std::string{});
  return p;
}

void write_prompts(const fs::path& path, const std::vector<PromptInstance>& prompts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : prompts) out << to_json(p).dump() << '\n';
}

std::vector<PromptInstance> read_prompts(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<PromptInstance> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(prompt_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

json to_json(const PromptConfig& cfg) {
  json j;
  std::vector<std::string> kinds;
  for (Kind k : cfg.kinds) kinds.emplace_back(kind_tag(k));
  j["kinds"] = kinds;
  j["history_liked"] = cfg.history_liked;
  j["history_disliked"] = cfg.history_disliked;
  j["context_budget"] = cfg.context_budget;
  j["pointwise_hint"] = hint_source_tag(cfg.pointwise_hint);
  j["pairwise_round_robin"] = cfg.pairwise_round_robin;
  j["seed"] = cfg.seed;
  j["templates"] = {{"listwise", cfg.templates.listwise},
                    {"pointwise", cfg.templates.pointwise},
                    {"pointwise_fix", cfg.templates.pointwise_fix},
                    {"pairwise", cfg.templates.pairwise}};
  return j;
}

PromptConfig prompt_config_from_json(const json& j) {
  PromptConfig cfg;
  if (j.contains("kinds")) {
    cfg.kinds.clear();
    for (const auto& k : j["kinds"]) cfg.kinds.push_back(parse_kind(k.get<std::string>()));
  }
  cfg.history_liked = j.value("history_liked", cfg.history_liked);
  cfg.history_disliked = j.value("history_disliked", cfg.history_disliked);
  cfg.context_budget = j.value("context_budget", cfg.context_budget);
  if (j.contains("pointwise_hint")) cfg.pointwise_hint = parse_hint_source(j["pointwise_hint"].get<std::string>());
  cfg.pairwise_round_robin = j.value("pairwise_round_robin", cfg.pairwise_round_robin);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("templates")) {
    const auto& t = j["templates"];
    cfg.templates.listwise = t.value("listwise", cfg.templates.listwise);
    cfg.templates.pointwise = t.value("pointwise", cfg.templates.pointwise);
    cfg.templates.pointwise_fix = t.value("pointwise_fix", cfg.templates.pointwise_fix);
    cfg.templates.pairwise = t.value("pairwise", cfg.templates.pairwise);
  }
  return cfg;
}

}  // namespace recrank::prompts
