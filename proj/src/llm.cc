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


#include "recrank/llm.h"

#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "recrank/hash.h"
#include "recrank/rng.h"

namespace recrank::llm {

namespace fs = std::filesystem;
using nlohmann::json;
using prompts::Kind;
using prompts::PromptInstance;

std::vector<std::string> GenerationParams::validate() const {
  std::vector<std::string> errs;
  if (!(temperature >= 0.0)) errs.emplace_back("generation.temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) errs.emplace_back("generation.top_p must lie in (0, 1]");
  if (top_k < 1) errs.emplace_back("generation.top_k must be >= 1");
  if (max_tokens < 1) errs.emplace_back("generation.max_tokens must be >= 1");
  return errs;
}

BackendKind parse_backend_kind(std::string_view tag) {
  if (tag == "http-chat") return BackendKind::kHttpChat;
  if (tag == "mock-echo-hint") return BackendKind::kMockEchoHint;
  if (tag == "mock-oracle") return BackendKind::kMockOracle;
  if (tag == "mock-noisy-oracle") return BackendKind::kMockNoisyOracle;
  if (tag == "mock-scripted") return BackendKind::kMockScripted;
  throw InvalidArgument("unknown backend '" + std::string(tag) + "'");
}

std::string_view backend_tag(BackendKind k) {
  switch (k) {
    case BackendKind::kHttpChat:
      return "http-chat";
    case BackendKind::kMockEchoHint:
      return "mock-echo-hint";
    case BackendKind::kMockOracle:
      return "mock-oracle";
    case BackendKind::kMockNoisyOracle:
      return "mock-noisy-oracle";
    case BackendKind::kMockScripted:
      return "mock-scripted";
  }
  return "mock-echo-hint";
}

std::vector<std::string> BackendConfig::validate() const {
  std::vector<std::string> errs;
  if (kind == BackendKind::kHttpChat) {
    if (endpoint.empty()) errs.emplace_back("backend.endpoint is required for http-chat");
    if (model.empty()) errs.emplace_back("backend.model is required for http-chat");
    if (!endpoint.empty() && endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
      errs.emplace_back("backend.endpoint must start with http:// or https://");
    }
  }
  if (kind == BackendKind::kMockScripted && script_path.empty()) {
    errs.emplace_back("backend.script_path is required for mock-scripted");
  }
  if (!(timeout_s > 0.0)) errs.emplace_back("backend.timeout_s must be > 0");
  if (max_in_flight < 1) errs.emplace_back("backend.max_in_flight must be >= 1");
  if (!(backoff_initial_ms >= 0.0) || !(backoff_max_ms >= backoff_initial_ms)) {
    errs.emplace_back("backend backoff must satisfy 0 <= initial <= max");
  }
  return errs;
}

std::string BackendConfig::id() const {
  std::string s(backend_tag(kind));
  if (kind == BackendKind::kHttpChat) s += ":" + model + "@" + endpoint;
  if (kind == BackendKind::kMockNoisyOracle) s += ":" + std::to_string(seed);
  if (kind == BackendKind::kMockScripted) s += ":" + script_path;
  return s;
}

void to_json(json& j, const BackendConfig& c) {
  j = json{{"kind", backend_tag(c.kind)},
           {"endpoint", c.endpoint},
           {"model", c.model},
           {"token_env", c.token_env},
           {"timeout_s", c.timeout_s},
           {"max_retries", c.max_retries},
           {"max_in_flight", c.max_in_flight},
           {"backoff_initial_ms", c.backoff_initial_ms},
           {"backoff_max_ms", c.backoff_max_ms},
           {"script_path", c.script_path},
           {"seed", c.seed}};
}

void from_json(const json& j, BackendConfig& c) {
  BackendConfig d;
  c.kind = parse_backend_kind(j.value("kind", std::string(backend_tag(d.kind))));
  c.endpoint = j.value("endpoint", d.endpoint);
  c.model = j.value("model", d.model);
  c.token_env = j.value("token_env", d.token_env);
  c.timeout_s = j.value("timeout_s", d.timeout_s);
  c.max_retries = j.value("max_retries", d.max_retries);
  c.max_in_flight = j.value("max_in_flight", d.max_in_flight);
  c.backoff_initial_ms = j.value("backoff_initial_ms", d.backoff_initial_ms);
  c.backoff_max_ms = j.value("backoff_max_ms", d.backoff_max_ms);
  c.script_path = j.value("script_path", d.script_path);
  c.seed = j.value("seed", d.seed);
}

std::string prompt_hash(const PromptInstance& p) { return sha256_hex(p.text); }

namespace {

std::vector<std::string> titles(const std::vector<std::string>& ids, const data::Catalog& catalog) {
  std::vector<std::string> t;
  for (const auto& id : ids) t.push_back(catalog.title(id));
  return t;
}

std::string yes_no(bool yes) { return yes ? "Yes." : "No."; }

// Answers exactly what the prompt's hint suggests.
class EchoHintBackend : public Backend {
 public:
  explicit EchoHintBackend(MockContext ctx) : ctx_(std::move(ctx)) {}
  std::string id() const override { return "mock-echo-hint"; }

  std::string send(const PromptInstance& p, const GenerationParams&) override {
    switch (p.kind) {
      case Kind::kListwise:
        return prompts::numbered_list(titles(p.hint_items, *ctx_.catalog));
      case Kind::kPointwise:
      case Kind::kPointwiseFix:
        // No hint to echo in the fix variant: answer the scale midpoint.
        return format_score(p.hint_score.value_or(3.0));
      case Kind::kPairwise:
        return yes_no(!p.hint_items.empty() && p.hint_items.front() == p.payload.at(0));
    }
    throw BackendError("unsupported prompt kind", false);
  }

 protected:
  MockContext ctx_;
};

// Knows the held-out item: ranks it first, scores it 5 and prefers it.
class OracleBackend : public Backend {
 public:
  explicit OracleBackend(MockContext ctx) : ctx_(std::move(ctx)) {}
  std::string id() const override { return "mock-oracle"; }

  std::string send(const PromptInstance& p, const GenerationParams&) override {
    const std::string truth = truth_of(p.user_id);
    switch (p.kind) {
      case Kind::kListwise: {
        std::vector<std::string> order;
        const auto& base = p.hint_items.empty() ? p.payload : p.hint_items;
        if (std::find(p.payload.begin(), p.payload.end(), truth) != p.payload.end()) order.push_back(truth);
        for (const auto& i : base) {
          if (i != truth) order.push_back(i);
        }
        return prompts::numbered_list(titles(order, *ctx_.catalog));
      }
      case Kind::kPointwise:
      case Kind::kPointwiseFix:
        return format_score(p.payload.at(0) == truth ? 5.0 : 1.0);
      case Kind::kPairwise:
        return yes_no(p.payload.at(0) == truth);
    }
    throw BackendError("unsupported prompt kind", false);
  }

 protected:
  std::string truth_of(const std::string& user) const {
    auto it = ctx_.truth.test_item.find(user);
    return it == ctx_.truth.test_item.end() ? std::string() : it->second;
  }
  MockContext ctx_;
};

// Pointwise: the observed rating (1.0 when unobserved) whenever the prompt
// carries a hint score, otherwise a seeded random score in [1, 5].
// Listwise and pairwise behave like the echo mock.
class NoisyOracleBackend : public EchoHintBackend {
 public:
  NoisyOracleBackend(MockContext ctx, uint64_t seed) : EchoHintBackend(std::move(ctx)), seed_(seed) {}
  std::string id() const override { return "mock-noisy-oracle"; }

  std::string send(const PromptInstance& p, const GenerationParams& params) override {
    if (p.kind != Kind::kPointwise && p.kind != Kind::kPointwiseFix) return EchoHintBackend::send(p, params);
    if (p.hint_score) {
      std::optional<double> r;
      if (ctx_.truth.history) r = ctx_.truth.history->rating(p.user_id, p.payload.at(0));
      return format_score(r ? prompts::to_prompt_scale(*r, ctx_.truth.history->scale()) : 1.0);
    }
    Rng rng(Rng::derive(seed_, stable_hash64(p.user_id + "\n" + p.payload.at(0))));
    return format_score(1.0 + std::round(rng.uniform() * 40.0) / 10.0);
  }

 private:
  uint64_t seed_;
};

// Responses looked up by prompt id in a JSON object; "*" is the default.
// A value is either the response text or {"error": msg, "transient": bool}.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read script " + path);
    try {
      script_ = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError("malformed script " + path + ": " + e.what());
    }
  }
  std::string id() const override { return "mock-scripted:" + path_; }

  std::string send(const PromptInstance& p, const GenerationParams&) override {
    const json* v = nullptr;
    if (script_.contains(p.id)) {
      v = &script_[p.id];
    } else if (script_.contains("*")) {
      v = &script_["*"];
    }
    if (!v) throw BackendError("no scripted response for " + p.id, false);
    if (v->is_string()) return v->get<std::string>();
    throw BackendError(v->value("error", std::string("scripted failure")), v->value("transient", false));
  }

 private:
  std::string path_;
  json script_;
};

class HttpChatBackend : public Backend {
 public:
  explicit HttpChatBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
    const size_t scheme = cfg_.endpoint.find("://");
    const size_t slash = cfg_.endpoint.find('/', scheme + 3);
    origin_ = slash == std::string::npos ? cfg_.endpoint : cfg_.endpoint.substr(0, slash);
    base_path_ = slash == std::string::npos ? "" : cfg_.endpoint.substr(slash);
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
    if (const char* tok = std::getenv(cfg_.token_env.c_str())) token_ = tok;
  }
  std::string id() const override { return cfg_.id(); }

  std::string send(const PromptInstance& p, const GenerationParams& params) override {
    json body = {{"model", cfg_.model},
                 {"messages", json::array({{{"role", "user"}, {"content", p.text}}})},
                 {"temperature", params.temperature},
                 {"top_p", params.top_p},
                 {"max_tokens", params.max_tokens}};
    if (!drop_top_k_.load()) body["top_k"] = params.top_k;

    httplib::Client cli(origin_);
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = cli.Post(base_path_ + "/chat/completions", headers, body.dump(), "application/json");
    if (!res) throw BackendError("transport error: " + httplib::to_string(res.error()), true);
    const int status = res->status;
    if (status == 200) {
      try {
        const json r = json::parse(res->body);
        return r.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception& e) {
        throw BackendError(std::string("malformed completion body: ") + e.what(), false);
      }
    }
    if ((status == 400 || status == 422) && body.contains("top_k") && res->body.find("top_k") != std::string::npos) {
      if (!drop_top_k_.exchange(true)) spdlog::warn("{} rejects top_k; dropping it from requests", cfg_.endpoint);
      throw BackendError("top_k rejected", true);
    }
    const bool transient = status == 408 || status == 409 || status == 429 || status >= 500;
    throw BackendError("HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200), transient);
  }

 private:
  BackendConfig cfg_;
  std::string origin_;
  std::string base_path_;
  std::string token_;
  std::atomic<bool> drop_top_k_{false};
};

}  // namespace

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg, const MockContext& mock) {
  auto errs = cfg.validate();
  if (!errs.empty()) throw InvalidArgument(errs.front());
  const bool needs_catalog = cfg.kind == BackendKind::kMockEchoHint || cfg.kind == BackendKind::kMockOracle ||
                             cfg.kind == BackendKind::kMockNoisyOracle;
  if (needs_catalog && !mock.catalog) throw InvalidArgument("mock backends need the item catalog");
  switch (cfg.kind) {
    case BackendKind::kHttpChat:
      return std::make_unique<HttpChatBackend>(cfg);
    case BackendKind::kMockEchoHint:
      return std::make_unique<EchoHintBackend>(mock);
    case BackendKind::kMockOracle:
      return std::make_unique<OracleBackend>(mock);
    case BackendKind::kMockNoisyOracle:
      return std::make_unique<NoisyOracleBackend>(mock, cfg.seed);
    case BackendKind::kMockScripted:
      return std::make_unique<ScriptedBackend>(cfg.script_path);
  }
  throw InvalidArgument("unhandled backend kind");
}

TranscriptLog::TranscriptLog(const fs::path& path) : out_(path, std::ios::binary | std::ios::app) {
  if (!out_) throw DataError("cannot open transcript " + path.string());
}

void TranscriptLog::append(const json& record) {
  std::lock_guard lock(mu_);
  out_ << record.dump() << '\n';
  out_.flush();
}

std::string ReplayCache::key(const std::string& hash, const GenerationParams& params, const std::string& backend) {
  return sha256_hex(hash + "|" + json(params).dump() + "|" + backend);
}

ReplayCache ReplayCache::load(const fs::path& transcript) {
  std::ifstream in(transcript, std::ios::binary);
  if (!in) throw DataError("cannot read transcript " + transcript.string());
  ReplayCache c;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json r = json::parse(line);
      if (!r.value("ok", false)) continue;
      c.insert(key(r.at("prompt_hash").get<std::string>(), r.at("params").get<GenerationParams>(),
                   r.at("backend").get<std::string>()),
               r.at("response").get<std::string>());
    } catch (const json::exception& e) {
      throw DataError(transcript.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

std::optional<std::string> ReplayCache::find(const std::string& k) const {
  auto it = entries_.find(k);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ReplayCache::insert(const std::string& k, std::string text) { entries_[k] = std::move(text); }

Gateway::Gateway(std::unique_ptr<Backend> backend, BackendConfig cfg, GatewayOptions opts)
    : backend_(std::move(backend)), cfg_(std::move(cfg)), opts_(std::move(opts)) {
  auto errs = opts_.params.validate();
  if (!errs.empty()) throw InvalidArgument(errs.front());
  backend_id_ = backend_->id();
  if (!opts_.sleep) opts_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

Completion Gateway::complete(const PromptInstance& prompt) {
  Completion c;
  c.prompt_id = prompt.id;
  c.prompt_hash = prompt_hash(prompt);
  const auto t0 = std::chrono::steady_clock::now();
  const std::string key = ReplayCache::key(c.prompt_hash, opts_.params, backend_id_);
  std::optional<std::string> cached;
  if (opts_.cache) cached = opts_.cache->find(key);
  if (cached) {
    c.ok = true;
    c.text = *cached;
    c.from_cache = true;
  } else if (opts_.replay_only) {
    c.error = "no transcript record for prompt " + prompt.id;
  } else {
    for (size_t attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      ++c.attempts;
      try {
        c.text = backend_->send(prompt, opts_.params);
        c.ok = true;
        c.error.clear();
        break;
      } catch (const BackendError& e) {
        c.error = e.what();
        if (!e.transient() || attempt == cfg_.max_retries) break;
        const double wait = std::min(cfg_.backoff_max_ms, cfg_.backoff_initial_ms * std::pow(2.0, attempt));
        spdlog::debug("{} attempt {} failed ({}); retrying in {:.0f} ms", prompt.id, c.attempts, e.what(), wait);
        opts_.sleep(std::chrono::milliseconds(static_cast<long>(wait)));
      }
    }
  }
  c.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (opts_.transcript) {
    json r = {{"prompt_id", prompt.id},
              {"prompt_hash", c.prompt_hash},
              {"backend", backend_id_},
              {"params", opts_.params},
              {"request", prompt.text},
              {"response", c.ok ? json(c.text) : json(nullptr)},
              {"ok", c.ok},
              {"error", c.error},
              {"latency_ms", c.latency_ms},
              {"attempts", c.attempts},
              {"cached", c.from_cache}};
    opts_.transcript->append(r);
  }
  return c;
}

std::vector<Completion> Gateway::batch_complete(const std::vector<PromptInstance>& prompts, BatchStats* stats) {
  std::vector<Completion> out(prompts.size());
  std::atomic<size_t> next{0};
  std::atomic<size_t> in_flight{0};
  std::atomic<size_t> peak{0};
  auto worker = [&] {
    for (size_t i = next++; i < prompts.size(); i = next++) {
      const size_t now = ++in_flight;
      size_t prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
      out[i] = complete(prompts[i]);
      --in_flight;
    }
  };
  const size_t n_workers = std::min(cfg_.max_in_flight, std::max<size_t>(prompts.size(), 1));
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (stats) {
    stats->peak_in_flight = peak.load();
    stats->failures = 0;
    stats->cache_hits = 0;
    for (const auto& c : out) {
      stats->failures += !c.ok;
      stats->cache_hits += c.from_cache;
    }
  }
  return out;
}

void write_completions(const fs::path& path, const std::vector<Completion>& completions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& c : completions) {
    // Latency is left out so that reruns produce identical files.
    json j = {{"prompt_id", c.prompt_id}, {"prompt_hash", c.prompt_hash}, {"ok", c.ok},
              {"text", c.text},           {"error", c.error},             {"attempts", c.attempts},
              {"from_cache", c.from_cache}};
    out << j.dump() << '\n';
  }
}

std::vector<Completion> read_completions(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<Completion> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      Completion c;
      c.prompt_id = j.at("prompt_id").get<std::string>();
      c.prompt_hash = j.at("prompt_hash").get<std::string>();
      c.ok = j.at("ok").get<bool>();
      c.text = j.value("text", std::string{});
      c.error = j.value("error", std::string{});
      c.attempts = j.value("attempts", size_t{0});
      c.from_cache = j.value("from_cache", false);
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace recrank::llm
