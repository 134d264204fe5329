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


#include "recrank/pipeline.h"

#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "recrank/hash.h"
#include "recrank/parser.h"

#ifndef RECRANK_VERSION
#define RECRANK_VERSION "0.0.0"
#endif

namespace recrank::pipeline {

using nlohmann::json;

namespace {

// Bumped when a stage's on-disk layout changes; old cache entries then miss.
constexpr int kCacheVersion = 1;

bool needs_embeddings(const sampling::SamplingPlan& p) {
  return p.strategy == sampling::Strategy::kKmeans || p.strategy == sampling::Strategy::kDbscan ||
         p.strategy == sampling::Strategy::kComposite;
}

std::optional<eval::MetricSpec> parse_metric(const std::string& name) {
  if (name.size() < 3 || name[1] != '@' || (name[0] != 'H' && name[0] != 'N')) return std::nullopt;
  size_t k = 0;
  for (size_t i = 2; i < name.size(); ++i) {
    if (name[i] < '0' || name[i] > '9') return std::nullopt;
    k = k * 10 + static_cast<size_t>(name[i] - '0');
  }
  if (k == 0) return std::nullopt;
  return eval::MetricSpec{name, name[0] == 'N', k};
}

json sampling_json(const SamplingConfig& s) {
  return {{"strategy", sampling::strategy_tag(s.plan.strategy)},
          {"cluster", sampling::strategy_tag(s.plan.composite_clustering)},
          {"n", s.plan.n_samples},
          {"penalty_c", s.plan.penalty_base},
          {"k", s.plan.kmeans_k},
          {"eps", s.plan.dbscan_eps},
          {"min_pts", s.plan.dbscan_min_pts},
          {"seed", s.plan.seed},
          {"embeddings", s.embeddings}};
}

SamplingConfig sampling_from(const json& j) {
  SamplingConfig s;
  s.plan.strategy = sampling::parse_strategy(j.at("strategy").get<std::string>());
  s.plan.composite_clustering = sampling::parse_strategy(j.at("cluster").get<std::string>());
  s.plan.n_samples = j.at("n").get<size_t>();
  s.plan.penalty_base = j.at("penalty_c").get<double>();
  s.plan.kmeans_k = j.at("k").get<size_t>();
  s.plan.dbscan_eps = j.at("eps").get<double>();
  s.plan.dbscan_min_pts = j.at("min_pts").get<size_t>();
  s.plan.seed = j.at("seed").get<uint64_t>();
  s.embeddings = j.at("embeddings").get<std::string>();
  return s;
}

json recommender_json(const RecommenderConfig& r) {
  json j = r.train;
  j["model"] = models::model_tag(r.model);
  return j;
}

RecommenderConfig recommender_from(const json& j) {
  RecommenderConfig r;
  r.model = models::parse_model_kind(j.at("model").get<std::string>());
  json t = j;
  t.erase("model");
  r.train = t.get<models::TrainConfig>();
  return r;
}

json lists_json(const ListConfig& l) {
  return {{"n", l.n},
          {"train_lists", l.train_lists},
          {"train_n", l.train.n},
          {"n_pos", l.train.n_pos},
          {"seed", l.train.seed}};
}

ListConfig lists_from(const json& j) {
  ListConfig l;
  l.n = j.at("n").get<size_t>();
  l.train_lists = j.at("train_lists").get<bool>();
  l.train.n = j.at("train_n").get<size_t>();
  l.train.n_pos = j.at("n_pos").get<size_t>();
  l.train.seed = j.at("seed").get<uint64_t>();
  return l;
}

json prompts_json(const PromptStageConfig& p) {
  json j = prompts::to_json(p.prompts);
  j["emit_corpus"] = p.emit_corpus;
  j["corpus_mix"] = p.corpus_mix;
  return j;
}

PromptStageConfig prompts_from(const json& j) {
  PromptStageConfig p;
  p.prompts = prompts::prompt_config_from_json(j);
  p.emit_corpus = j.at("emit_corpus").get<bool>();
  p.corpus_mix = j.at("corpus_mix").get<std::map<std::string, double>>();
  return p;
}

json dataset_json(const DatasetConfig& d) {
  return {{"tag", d.tag},
          {"raw", d.raw.string()},
          {"format", data::format_tag(d.format)},
          {"k_core", d.k_core},
          {"max_malformed", d.max_malformed},
          {"catalog", d.catalog.string()},
          {"force_simulated_timestamps", d.force_simulated_timestamps}};
}

DatasetConfig dataset_from(const json& j) {
  DatasetConfig d;
  d.tag = j.at("tag").get<std::string>();
  d.raw = j.at("raw").get<std::string>();
  d.format = data::parse_format(j.at("format").get<std::string>());
  d.k_core = j.at("k_core").get<size_t>();
  d.max_malformed = j.at("max_malformed").get<size_t>();
  d.catalog = j.at("catalog").get<std::string>();
  d.force_simulated_timestamps = j.at("force_simulated_timestamps").get<bool>();
  return d;
}

json rank_json(const hybrid::RankOptions& r) {
  return {{"pairwise_mode", hybrid::pairwise_mode_tag(r.pairwise_mode)}, {"fallback", hybrid::fallback_tag(r.fallback)}};
}

json eval_json(const EvalConfig& e) { return {{"alpha", e.alpha}, {"metrics", e.metrics}}; }

// Keys present in `given` but absent from `schema`. Free-form maps are
// skipped.
void unknown_keys(const json& given, const json& schema, const std::string& prefix, std::vector<std::string>& out) {
  if (!given.is_object()) return;
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) {
      out.push_back(path + ": unknown key");
      continue;
    }
    if (path == "prompts.corpus_mix") continue;
    if (schema[it.key()].is_object()) unknown_keys(it.value(), schema[it.key()], path, out);
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write to " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string hash_path(const fs::path& p) {
  if (p.empty()) return "";
  if (fs::is_directory(p)) return sha256_tree(p);
  return sha256_file(p);
}

std::vector<lists::RankingList> infer_only(std::vector<lists::RankingList> all) {
  std::erase_if(all, [](const lists::RankingList& l) { return l.phase != lists::Phase::kInfer; });
  return all;
}

std::vector<prompts::PromptInstance> infer_prompts(const std::vector<prompts::PromptInstance>& all) {
  std::vector<prompts::PromptInstance> out;
  for (const auto& p : all) {
    if (p.phase == lists::Phase::kInfer) out.push_back(p);
  }
  return out;
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"prepare", "train", "sample", "lists", "prompts",
                                                 "complete", "parse", "rank", "evaluate"};
  return names;
}

json to_json(const RunConfig& c) {
  return {{"name", c.name},
          {"seed", c.seed},
          {"work_dir", c.work_dir.string()},
          {"dataset", dataset_json(c.dataset)},
          {"sampling", sampling_json(c.sampling)},
          {"recommender", recommender_json(c.recommender)},
          {"lists", lists_json(c.lists)},
          {"prompts", prompts_json(c.prompts)},
          {"backend", c.complete.backend},
          {"generation", c.complete.generation},
          {"replay", {{"transcript", c.complete.replay.string()}, {"only", c.complete.replay_only}}},
          {"weights", c.rank.weights},
          {"rank", rank_json(c.rank)},
          {"eval", eval_json(c.eval)}};
}

ConfigLoad config_from_json(const json& given, const fs::path& base_dir) {
  ConfigLoad out;
  if (!given.is_object()) {
    out.diagnostics.emplace_back("config: top level must be an object");
    return out;
  }
  json doc = to_json(RunConfig{});
  unknown_keys(given, doc, "", out.diagnostics);
  json merged = doc;
  merged.merge_patch(given);
  // Seeds left unset fall back to the global one.
  for (const char* section : {"sampling", "recommender", "lists", "prompts", "backend"}) {
    if (!(given.contains(section) && given[section].is_object() && given[section].contains("seed"))) {
      merged[section]["seed"] = merged["seed"];
    }
  }

  RunConfig& c = out.config;
  auto section = [&](const char* name, auto&& fn) {
    try {
      fn(merged.at(name));
    } catch (const std::exception& e) {
      out.diagnostics.push_back(std::string(name) + ": " + e.what());
    }
  };
  section("name", [&](const json& j) { c.name = j.get<std::string>(); });
  section("seed", [&](const json& j) { c.seed = j.get<uint64_t>(); });
  section("work_dir", [&](const json& j) { c.work_dir = j.get<std::string>(); });
  section("dataset", [&](const json& j) { c.dataset = dataset_from(j); });
  section("sampling", [&](const json& j) { c.sampling = sampling_from(j); });
  section("recommender", [&](const json& j) { c.recommender = recommender_from(j); });
  section("lists", [&](const json& j) { c.lists = lists_from(j); });
  section("prompts", [&](const json& j) { c.prompts = prompts_from(j); });
  section("backend", [&](const json& j) { c.complete.backend = j.get<llm::BackendConfig>(); });
  section("generation", [&](const json& j) { c.complete.generation = j.get<llm::GenerationParams>(); });
  section("replay", [&](const json& j) {
    c.complete.replay = j.at("transcript").get<std::string>();
    c.complete.replay_only = j.at("only").get<bool>();
  });
  section("weights", [&](const json& j) { c.rank.weights = j.get<hybrid::UtilityWeights>(); });
  section("rank", [&](const json& j) {
    c.rank.pairwise_mode = hybrid::parse_pairwise_mode(j.at("pairwise_mode").get<std::string>());
    c.rank.fallback = hybrid::parse_fallback(j.at("fallback").get<std::string>());
  });
  section("eval", [&](const json& j) {
    c.eval.alpha = j.at("alpha").get<double>();
    c.eval.metrics = j.at("metrics").get<std::vector<std::string>>();
  });

  c.work_dir = resolve(c.work_dir, base_dir);
  c.dataset.raw = resolve(c.dataset.raw, base_dir);
  c.dataset.catalog = resolve(c.dataset.catalog, base_dir);
  if (c.sampling.embeddings != "model" && !c.sampling.embeddings.empty()) {
    c.sampling.embeddings = resolve(c.sampling.embeddings, base_dir).string();
  }
  if (!c.complete.backend.script_path.empty()) {
    c.complete.backend.script_path = resolve(c.complete.backend.script_path, base_dir).string();
  }
  c.complete.replay = resolve(c.complete.replay, base_dir);
  return out;
}

ConfigLoad load_config(const fs::path& path) {
  ConfigLoad out;
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const std::exception& e) {
    out.diagnostics.push_back("config " + path.string() + ": " + e.what());
    return out;
  }
  return config_from_json(j, fs::absolute(path).parent_path());
}

std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> errs;
  auto add = [&](const std::vector<std::string>& v) { errs.insert(errs.end(), v.begin(), v.end()); };

  if (c.dataset.raw.empty()) {
    errs.emplace_back("dataset.raw is required");
  } else if (!fs::exists(c.dataset.raw)) {
    errs.push_back("dataset.raw: path not found: " + c.dataset.raw.string());
  }
  if (!c.dataset.catalog.empty() && !fs::exists(c.dataset.catalog)) {
    errs.push_back("dataset.catalog: path not found: " + c.dataset.catalog.string());
  }

  add(c.sampling.plan.validate());
  if (needs_embeddings(c.sampling.plan)) {
    const std::string strat(sampling::strategy_tag(c.sampling.plan.strategy));
    if (c.sampling.embeddings.empty()) {
      errs.push_back("sampling.embeddings is required for strategy " + strat);
    } else if (c.sampling.embeddings != "model" && !fs::exists(c.sampling.embeddings)) {
      errs.push_back("sampling.embeddings: path not found for strategy " + strat + ": " + c.sampling.embeddings);
    }
  }

  add(c.recommender.train.validate(c.recommender.model));

  if (c.lists.n < 1) errs.emplace_back("lists.n must be >= 1");
  if (c.lists.train_lists) {
    if (c.lists.train.n_pos < 1) errs.emplace_back("lists.n_pos must be >= 1");
    if (c.lists.train.n_pos >= c.lists.train.n) errs.emplace_back("lists.n_pos must be < lists.train_n");
  }

  add(c.prompts.prompts.validate());
  for (const auto& [kind, w] : c.prompts.corpus_mix) {
    try {
      prompts::parse_kind(kind);
    } catch (const std::exception&) {
      errs.push_back("prompts.corpus_mix: unknown kind '" + kind + "'");
    }
    if (!(w >= 0.0)) errs.push_back("prompts.corpus_mix." + kind + " must be >= 0");
  }

  add(c.complete.backend.validate());
  if (c.complete.backend.kind == llm::BackendKind::kMockScripted && !c.complete.backend.script_path.empty() &&
      !fs::exists(c.complete.backend.script_path)) {
    errs.push_back("backend.script_path: path not found: " + c.complete.backend.script_path);
  }
  add(c.complete.generation.validate());
  if (c.complete.replay_only && c.complete.replay.empty()) errs.emplace_back("replay.only requires replay.transcript");
  if (!c.complete.replay.empty() && !fs::exists(c.complete.replay)) {
    errs.push_back("replay.transcript: path not found: " + c.complete.replay.string());
  }

  add(c.rank.weights.validate());

  if (!(c.eval.alpha > 0.0 && c.eval.alpha < 1.0)) errs.emplace_back("eval.alpha must lie in (0, 1)");
  if (c.eval.metrics.empty()) errs.emplace_back("eval.metrics must name at least one metric");
  for (const auto& m : c.eval.metrics) {
    const auto spec = parse_metric(m);
    if (!spec) {
      errs.push_back("eval.metrics: cannot parse '" + m + "' (expected H@k or N@k)");
    } else if (spec->k > c.lists.n) {
      errs.push_back("eval.metrics: " + m + " exceeds lists.n = " + std::to_string(c.lists.n));
    }
  }
  return errs;
}

std::string config_hash(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("name");
  j.erase("work_dir");
  return sha256_hex(j.dump());
}

void set_path(json& doc, const std::string& dotted, const json& value) {
  json* node = &doc;
  size_t start = 0;
  while (true) {
    const size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw InvalidArgument("bad config key '" + dotted + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object()) *node = json::object();
    start = dot + 1;
  }
}

// ---- stage bodies ----

namespace stages {

void prepare(const DatasetConfig& cfg, uint64_t seed, const fs::path& out) {
  data::PrepareOptions opts;
  opts.format = cfg.format;
  opts.k_core = cfg.k_core;
  opts.seed = seed;
  opts.force_simulated_timestamps = cfg.force_simulated_timestamps;
  opts.load.max_malformed = cfg.max_malformed;
  if (!cfg.catalog.empty()) opts.load.catalog_path = cfg.catalog;
  const auto ds = data::prepare(cfg.raw, opts);
  fs::create_directories(out);
  data::write_prepared({out}, ds);
  spdlog::info("prepared {}: {} users, {} items, {} interactions, density {:.6f}", cfg.tag, ds.stats.n_users,
               ds.stats.n_items, ds.stats.n_interactions, ds.stats.density);
}

void train(const RecommenderConfig& cfg, const fs::path& prepared, const fs::path& out) {
  const auto split = data::read_split({prepared});
  const auto model = models::train(cfg.model, split, cfg.train);
  fs::create_directories(out);
  models::save_model(out / artifacts::kModel, model);
  sampling::write_embeddings(out / artifacts::kEmbeddings, models::export_user_embeddings(model));
}

void sample(const SamplingConfig& cfg, const fs::path& prepared, const fs::path& model_dir, const fs::path& out) {
  const auto split = data::read_split({prepared});
  // Only users with a held-out item can be scored.
  sampling::SamplingInputs in;
  for (const auto& x : split.train) {
    if (split.per_user_test_item.count(x.user_id)) ++in.interaction_counts[x.user_id];
  }
  sampling::UserEmbeddingTable emb;
  if (needs_embeddings(cfg.plan)) {
    const fs::path src = cfg.embeddings == "model" ? model_dir / artifacts::kEmbeddings : fs::path(cfg.embeddings);
    const auto all = sampling::read_embeddings(src);
    std::vector<size_t> keep;
    for (size_t r = 0; r < all.size(); ++r) {
      if (in.interaction_counts.count(all.user_ids[r])) keep.push_back(r);
    }
    emb.vectors = Matrix(keep.size(), all.dim());
    for (size_t r = 0; r < keep.size(); ++r) {
      emb.user_ids.push_back(all.user_ids[keep[r]]);
      std::copy_n(all.vectors.row(keep[r]).data(), all.dim(), emb.vectors.row(r).data());
    }
    in.embeddings = &emb;
  }
  const auto set = sampling::run_plan(cfg.plan, in);
  fs::create_directories(out);
  sampling::write_samples(out / artifacts::kSamples, set);
  spdlog::info("sampled {} draws over {} distinct users", set.draws.size(), set.multiplicity.size());
}

void build_lists(const ListConfig& cfg, const fs::path& prepared, const fs::path& model_dir,
                 const fs::path& samples_dir, const fs::path& out) {
  const auto ds = data::read_prepared({prepared});
  const lists::UserHistory history(ds.split, ds.scale);
  const auto model = models::load_model(model_dir / artifacts::kModel);
  const auto samples = sampling::read_samples(samples_dir / artifacts::kSamples);
  std::vector<std::string> users;
  for (const auto& [u, count] : samples.multiplicity) users.push_back(u);

  auto infer = lists::build_infer_lists(users, model, history, cfg.n);
  std::vector<lists::RankingList> all = std::move(infer.lists);
  std::vector<std::string> skipped = std::move(infer.skipped);
  if (cfg.train_lists) {
    auto tr = lists::build_train_lists(users, history, cfg.train, &model);
    all.insert(all.end(), tr.lists.begin(), tr.lists.end());
    for (auto& s : tr.skipped) skipped.push_back("train " + s);
  }
  fs::create_directories(out);
  lists::write_lists(out / artifacts::kLists, all);
  std::string text;
  for (const auto& s : skipped) text += s + "\n";
  write_text(out / artifacts::kListSkips, text);
  if (!skipped.empty()) spdlog::warn("{} list(s) skipped; see {}", skipped.size(), (out / artifacts::kListSkips).string());
}

void gen_prompts(const PromptStageConfig& cfg, const fs::path& prepared, const fs::path& lists_dir,
                 const fs::path& out) {
  const auto ds = data::read_prepared({prepared});
  const lists::UserHistory history(ds.split, ds.scale);
  const auto all_lists = lists::read_lists(lists_dir / artifacts::kLists);
  const auto instances =
      prompts::generate_prompts(all_lists, history, ds.catalog, prompts::DomainWords::for_format(ds.format), cfg.prompts);
  fs::create_directories(out);
  prompts::write_prompts(out / artifacts::kPrompts, instances);

  const auto lint = prompts::lint_leakage(instances);
  json lj = {{"checked", lint.checked},
             {"checked_by_kind", lint.checked_by_kind},
             {"flagged_by_kind", lint.flagged_by_kind},
             {"flagged_ids", lint.flagged_ids}};
  json frac = json::object();
  for (const auto& [kind, n] : lint.checked_by_kind) {
    frac[kind] = lint.flagged_fraction(prompts::parse_kind(kind));
  }
  lj["flagged_fraction"] = frac;
  write_text(out / artifacts::kLint, lj.dump(2) + "\n");

  if (cfg.emit_corpus) {
    std::vector<prompts::PromptInstance> train;
    for (const auto& p : instances) {
      if (p.phase == lists::Phase::kTrain) train.push_back(p);
    }
    prompts::emit_tuning_corpus(train, cfg.corpus_mix, cfg.prompts.seed, sha256_hex(prompts_json(cfg).dump()),
                                out / "corpus");
  }
}

void complete(const CompleteConfig& cfg, const fs::path& prepared, const fs::path& prompts_dir, const fs::path& out,
              const fs::path& transcript) {
  const auto ds = data::read_prepared({prepared});
  const lists::UserHistory history(ds.split, ds.scale);
  llm::MockContext mock;
  mock.catalog = &ds.catalog;
  mock.truth.test_item = ds.split.per_user_test_item;
  mock.truth.history = &history;

  llm::ReplayCache cache;
  llm::GatewayOptions gopts;
  gopts.params = cfg.generation;
  gopts.replay_only = cfg.replay_only;
  if (!cfg.replay.empty()) {
    cache = llm::ReplayCache::load(cfg.replay);
    gopts.cache = &cache;
    spdlog::info("replay cache holds {} completions", cache.size());
  }
  std::optional<llm::TranscriptLog> log;
  if (!transcript.empty()) {
    fs::create_directories(transcript.parent_path());
    log.emplace(transcript);
    gopts.transcript = &*log;
  }
  llm::Gateway gw(llm::make_backend(cfg.backend, mock), cfg.backend, gopts);
  const auto todo = infer_prompts(prompts::read_prompts(prompts_dir / artifacts::kPrompts));
  llm::Gateway::BatchStats st;
  const auto done = gw.batch_complete(todo, &st);
  fs::create_directories(out);
  llm::write_completions(out / artifacts::kCompletions, done);
  spdlog::info("completed {} prompts: {} failed, {} from cache, peak in flight {}", done.size(), st.failures,
               st.cache_hits, st.peak_in_flight);
}

void parse(const fs::path& prepared, const fs::path& prompts_dir, const fs::path& completions_dir,
           const fs::path& out) {
  const auto catalog = data::read_catalog(data::PreparedPaths{prepared}.catalog());
  const auto todo = infer_prompts(prompts::read_prompts(prompts_dir / artifacts::kPrompts));
  std::map<std::string, llm::Completion> by_id;
  for (auto& c : llm::read_completions(completions_dir / artifacts::kCompletions)) by_id[c.prompt_id] = std::move(c);
  std::vector<parse::ParsedResult> results;
  results.reserve(todo.size());
  for (const auto& p : todo) {
    auto it = by_id.find(p.id);
    llm::Completion c;
    if (it == by_id.end()) {
      c.prompt_id = p.id;
      c.error = "no completion recorded";
    } else {
      c = it->second;
    }
    results.push_back(parse::parse_completion(p, c, catalog));
  }
  fs::create_directories(out);
  parse::write_parsed(out / artifacts::kParsed, results);
}

void rank(const hybrid::RankOptions& opts, const fs::path& lists_dir, const fs::path& prompts_dir,
          const fs::path& parsed_dir, const fs::path& out) {
  const auto infer = infer_only(lists::read_lists(lists_dir / artifacts::kLists));
  const auto ps = infer_prompts(prompts::read_prompts(prompts_dir / artifacts::kPrompts));
  const auto parsed = parse::read_parsed(parsed_dir / artifacts::kParsed);
  const auto ranked = hybrid::rank_all(infer, ps, parsed, opts);
  fs::create_directories(out);
  hybrid::write_rankings(out / artifacts::kRankings, ranked);
  std::map<std::string, size_t> by_method;
  for (const auto& r : ranked.rankings) by_method[std::string(hybrid::method_tag(r.method))] += r.fallbacks;
  const json st = {{"parsed_by_kind", ranked.parsed_by_kind},
                   {"failed_by_kind", ranked.failed_by_kind},
                   {"partial_by_kind", ranked.partial_by_kind},
                   {"fallbacks", ranked.fallbacks},
                   {"fallbacks_by_method", by_method},
                   {"dropped_users", ranked.dropped_users}};
  write_text(out / artifacts::kRankStats, st.dump(2) + "\n");
}

void evaluate(const EvalConfig& cfg, const std::string& cfg_hash, uint64_t seed, const fs::path& prepared,
              const fs::path& rank_dir, const fs::path& out) {
  const auto split = data::read_split({prepared});
  const auto rankings = hybrid::read_rankings(rank_dir / artifacts::kRankings);
  const json st = json::parse(read_text(rank_dir / artifacts::kRankStats));
  eval::ParseStats ps;
  ps.parsed_by_kind = st.at("parsed_by_kind").get<std::map<std::string, size_t>>();
  ps.failed_by_kind = st.at("failed_by_kind").get<std::map<std::string, size_t>>();
  ps.fallbacks_by_method = st.at("fallbacks_by_method").get<std::map<std::string, size_t>>();
  eval::EvalOptions opts;
  opts.alpha = cfg.alpha;
  opts.metrics.clear();
  for (const auto& m : cfg.metrics) {
    const auto spec = parse_metric(m);
    if (!spec) throw InvalidArgument("cannot parse metric '" + m + "'");
    opts.metrics.push_back(*spec);
  }
  auto report = eval::aggregate_report(rankings, split.per_user_test_item, opts, ps);
  report.config_hash = cfg_hash;
  report.seed = seed;
  fs::create_directories(out);
  write_text(out / artifacts::kReport, eval::to_json(report).dump(2) + "\n");
  write_text(out / artifacts::kTable, eval::render_table(report));
}

}  // namespace stages

// ---- cached runner ----

const StageRecord* RunManifest::find(const std::string& stage) const {
  for (const auto& s : stages) {
    if (s.stage == stage) return &s;
  }
  return nullptr;
}

json to_json(const RunManifest& m) {
  json stages = json::array();
  for (const auto& s : m.stages) {
    stages.push_back({{"stage", s.stage},
                      {"key", s.key},
                      {"output_hash", s.output_hash},
                      {"dir", s.dir.string()},
                      {"cached", s.cached},
                      {"seconds", s.seconds}});
  }
  return {{"config_hash", m.config_hash},
          {"software_version", m.software_version},
          {"started_at", m.started_at},
          {"finished_at", m.finished_at},
          {"stages", stages},
          {"parse_failure_rate", m.parse_failure_rate},
          {"fallback_rate", m.fallback_rate},
          {"report", m.report.string()}};
}

namespace {

class StageCache {
 public:
  explicit StageCache(fs::path root) : root_(std::move(root)) {}

  // Runs body into a fresh directory unless (stage, key) is cached. The
  // finished directory appears by rename, so readers never see a partial
  // output.
  StageRecord run(const std::string& stage, const json& key_doc, const std::function<void(const fs::path&)>& body) {
    StageRecord rec;
    rec.stage = stage;
    rec.key = sha256_hex(key_doc.dump());
    const fs::path final_dir = root_ / stage / rec.key;
    rec.dir = final_dir / "out";
    const auto t0 = std::chrono::steady_clock::now();
    if (fs::exists(final_dir / "meta.json")) {
      rec.cached = true;
      rec.output_hash = json::parse(read_text(final_dir / "meta.json")).at("output_hash").get<std::string>();
      spdlog::info("[{}] cached {}", stage, rec.key.substr(0, 12));
      return rec;
    }
    static std::atomic<uint64_t> counter{0};
    const fs::path tmp = root_ / stage /
                         (".tmp-" + rec.key.substr(0, 12) + "-" + std::to_string(::getpid()) + "-" +
                          std::to_string(counter.fetch_add(1)));
    fs::remove_all(tmp);
    fs::create_directories(tmp / "out");
    spdlog::info("[{}] running {}", stage, rec.key.substr(0, 12));
    try {
      body(tmp / "out");
    } catch (const std::exception& e) {
      std::error_code ec;
      fs::remove_all(tmp, ec);
      throw StageError(stage, final_dir, e.what());
    }
    rec.output_hash = sha256_tree(tmp / "out");
    write_text(tmp / "meta.json", json{{"stage", stage}, {"key", rec.key}, {"key_doc", key_doc},
                                       {"output_hash", rec.output_hash}}
                                      .dump(2) +
                                      "\n");
    std::error_code ec;
    fs::rename(tmp, final_dir, ec);
    if (ec) {
      // Lost a race with an identical writer; keep theirs.
      fs::remove_all(tmp, ec);
      if (!fs::exists(final_dir / "meta.json")) throw StageError(stage, final_dir, "could not publish stage output");
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
  }

 private:
  fs::path root_;
};

json key_doc(const std::string& stage, const std::vector<std::string>& inputs, const json& section) {
  return {{"stage", stage}, {"version", kCacheVersion}, {"inputs", inputs}, {"config", section}};
}

}  // namespace

RunResult run_pipeline(const RunConfig& cfg) {
  const auto errs = validate_config(cfg);
  if (!errs.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw InvalidArgument(msg);
  }
  RunResult result;
  RunManifest& m = result.manifest;
  m.config_hash = config_hash(cfg);
  m.software_version = RECRANK_VERSION;
  m.started_at = utc_now();
  const json doc = to_json(cfg);

  const auto stamp = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
  const fs::path run_dir = cfg.work_dir / "runs" / (m.config_hash.substr(0, 12) + "-" + std::to_string(stamp));
  fs::create_directories(run_dir);
  StageCache cache(cfg.work_dir / "cache");

  std::string raw_hash;
  try {
    raw_hash = hash_path(cfg.dataset.raw) + "|" + hash_path(cfg.dataset.catalog);
  } catch (const std::exception& e) {
    throw StageError("prepare", cfg.dataset.raw, e.what());
  }
  json ds_section = doc["dataset"];
  ds_section.erase("raw");
  ds_section.erase("catalog");
  ds_section["seed"] = cfg.seed;

  const auto prep = cache.run("prepare", key_doc("prepare", {raw_hash}, ds_section),
                              [&](const fs::path& out) { stages::prepare(cfg.dataset, cfg.seed, out); });
  m.stages.push_back(prep);

  const auto trn = cache.run("train", key_doc("train", {prep.output_hash}, doc["recommender"]),
                             [&](const fs::path& out) { stages::train(cfg.recommender, prep.dir, out); });
  m.stages.push_back(trn);

  std::vector<std::string> sample_inputs = {prep.output_hash};
  json sample_section = doc["sampling"];
  if (needs_embeddings(cfg.sampling.plan)) {
    sample_inputs.push_back(cfg.sampling.embeddings == "model" ? trn.output_hash : hash_path(cfg.sampling.embeddings));
    sample_section.erase("embeddings");
  }
  const auto smp = cache.run("sample", key_doc("sample", sample_inputs, sample_section),
                             [&](const fs::path& out) { stages::sample(cfg.sampling, prep.dir, trn.dir, out); });
  m.stages.push_back(smp);

  const auto lst =
      cache.run("lists", key_doc("lists", {prep.output_hash, trn.output_hash, smp.output_hash}, doc["lists"]),
                [&](const fs::path& out) { stages::build_lists(cfg.lists, prep.dir, trn.dir, smp.dir, out); });
  m.stages.push_back(lst);

  const auto prm = cache.run("prompts", key_doc("prompts", {prep.output_hash, lst.output_hash}, doc["prompts"]),
                             [&](const fs::path& out) { stages::gen_prompts(cfg.prompts, prep.dir, lst.dir, out); });
  m.stages.push_back(prm);

  json complete_section = {{"backend", doc["backend"]}, {"generation", doc["generation"]},
                           {"replay_only", cfg.complete.replay_only}};
  std::vector<std::string> complete_inputs = {prep.output_hash, prm.output_hash};
  if (!cfg.complete.replay.empty()) complete_inputs.push_back(hash_path(cfg.complete.replay));
  if (cfg.complete.backend.kind == llm::BackendKind::kMockScripted) {
    complete_inputs.push_back(hash_path(cfg.complete.backend.script_path));
  }
  const fs::path transcript = run_dir / "transcript.jsonl";
  const auto cmp = cache.run("complete", key_doc("complete", complete_inputs, complete_section),
                             [&](const fs::path& out) {
                               stages::complete(cfg.complete, prep.dir, prm.dir, out, transcript);
                             });
  m.stages.push_back(cmp);

  const auto prs =
      cache.run("parse", key_doc("parse", {prep.output_hash, prm.output_hash, cmp.output_hash}, json::object()),
                [&](const fs::path& out) { stages::parse(prep.dir, prm.dir, cmp.dir, out); });
  m.stages.push_back(prs);

  const json rank_section = {{"weights", doc["weights"]}, {"rank", doc["rank"]}};
  const auto rnk =
      cache.run("rank", key_doc("rank", {lst.output_hash, prm.output_hash, prs.output_hash}, rank_section),
                [&](const fs::path& out) { stages::rank(cfg.rank, lst.dir, prm.dir, prs.dir, out); });
  m.stages.push_back(rnk);

  json eval_section = doc["eval"];
  eval_section["config_hash"] = m.config_hash;
  eval_section["seed"] = cfg.seed;
  const auto evl = cache.run("evaluate", key_doc("evaluate", {prep.output_hash, rnk.output_hash}, eval_section),
                             [&](const fs::path& out) {
                               stages::evaluate(cfg.eval, m.config_hash, cfg.seed, prep.dir, rnk.dir, out);
                             });
  m.stages.push_back(evl);

  // Manifest figures come from the rank statistics.
  const json st = json::parse(read_text(rnk.dir / artifacts::kRankStats));
  size_t parsed = 0, failed = 0;
  for (const auto& [k, v] : st.at("parsed_by_kind").items()) parsed += v.get<size_t>();
  for (const auto& [k, v] : st.at("failed_by_kind").items()) failed += v.get<size_t>();
  if (parsed > 0) {
    m.parse_failure_rate = static_cast<double>(failed) / static_cast<double>(parsed);
    m.fallback_rate = static_cast<double>(st.at("fallbacks").get<size_t>()) / static_cast<double>(parsed);
  }
  m.report = evl.dir / artifacts::kReport;
  result.table = read_text(evl.dir / artifacts::kTable);
  {
    // Rebuild the report struct from the stage inputs; it is cheap and
    // keeps the returned value identical to the written bytes.
    const auto split = data::read_split({prep.dir});
    const auto rankings = hybrid::read_rankings(rnk.dir / artifacts::kRankings);
    eval::ParseStats ps;
    ps.parsed_by_kind = st.at("parsed_by_kind").get<std::map<std::string, size_t>>();
    ps.failed_by_kind = st.at("failed_by_kind").get<std::map<std::string, size_t>>();
    ps.fallbacks_by_method = st.at("fallbacks_by_method").get<std::map<std::string, size_t>>();
    eval::EvalOptions opts;
    opts.alpha = cfg.eval.alpha;
    opts.metrics.clear();
    for (const auto& name : cfg.eval.metrics) opts.metrics.push_back(*parse_metric(name));
    result.report = eval::aggregate_report(rankings, split.per_user_test_item, opts, ps);
    result.report.config_hash = m.config_hash;
    result.report.seed = cfg.seed;
  }

  m.finished_at = utc_now();
  write_text(run_dir / "config.json", doc.dump(2) + "\n");
  m.manifest_path = run_dir / "manifest.json";
  const json mj = to_json(m);
  write_text(m.manifest_path, mj.dump(2) + "\n");
  {
    std::ofstream ledger(cfg.work_dir / "runs.jsonl", std::ios::app | std::ios::binary);
    json line = mj;
    line["name"] = cfg.name;
    line["metrics"] = json::object();
    for (const auto& mr : result.report.methods) line["metrics"][mr.method] = mr.values;
    ledger << line.dump() << '\n';
  }
  return result;
}

}  // namespace recrank::pipeline
