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

#include <httplib.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "recrank/llm.h"
#include "support/fixture.h"

namespace recrank::llm {
namespace {

using prompts::Kind;
using prompts::PromptInstance;

data::Catalog catalog() {
  data::Catalog c;
  c.titles = {{"a", "Alpha"}, {"b", "Beta"}, {"c", "Gamma"}, {"d", "Delta"}};
  return c;
}

PromptInstance listwise(const std::string& user, std::vector<std::string> items, std::vector<std::string> hint) {
  PromptInstance p;
  p.id = user + "/listwise/0";
  p.kind = Kind::kListwise;
  p.user_id = user;
  p.text = "rank " + user;
  p.payload = std::move(items);
  p.hint_items = std::move(hint);
  return p;
}

PromptInstance pairwise(const std::string& user, const std::string& a, const std::string& b, const std::string& w) {
  PromptInstance p;
  p.id = user + "/pairwise/" + a + "," + b;
  p.kind = Kind::kPairwise;
  p.user_id = user;
  p.text = "pair " + a + b + " for " + user;
  p.payload = {a, b};
  p.hint_items = {w};
  return p;
}

PromptInstance pointwise(const std::string& user, const std::string& item, std::optional<double> hint) {
  PromptInstance p;
  p.id = user + (hint ? "/pointwise/" : "/pointwise_fix/") + item;
  p.kind = hint ? Kind::kPointwise : Kind::kPointwiseFix;
  p.user_id = user;
  p.text = "score " + item;
  p.payload = {item};
  p.hint_score = hint;
  return p;
}

GatewayOptions no_sleep() {
  GatewayOptions o;
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

Gateway mock_gateway(BackendKind kind, const MockContext& ctx, GatewayOptions opts = no_sleep()) {
  BackendConfig cfg;
  cfg.kind = kind;
  return Gateway(make_backend(cfg, ctx), cfg, std::move(opts));
}

TEST(Mocks, EchoHintRepeatsTheHint) {
  const auto cat = catalog();
  MockContext ctx{&cat, {}};
  auto g = mock_gateway(BackendKind::kMockEchoHint, ctx);
  EXPECT_EQ(g.complete(listwise("u", {"a", "b", "c"}, {"c", "a", "b"})).text, "1. Gamma\n2. Alpha\n3. Beta");
  EXPECT_EQ(g.complete(pairwise("u", "a", "b", "a")).text, "Yes.");
  EXPECT_EQ(g.complete(pairwise("u", "a", "b", "b")).text, "No.");
  EXPECT_EQ(g.complete(pointwise("u", "a", 4.0)).text, "4.0");
}

TEST(Mocks, OracleKnowsTheHeldOutItem) {
  const auto cat = catalog();
  MockContext ctx{&cat, {}};
  ctx.truth.test_item["u"] = "b";
  auto g = mock_gateway(BackendKind::kMockOracle, ctx);
  EXPECT_EQ(g.complete(pairwise("u", "b", "a", "a")).text, "Yes.");
  EXPECT_EQ(g.complete(pairwise("u", "a", "b", "a")).text, "No.");
  EXPECT_EQ(g.complete(listwise("u", {"a", "b", "c"}, {"c", "a", "b"})).text, "1. Beta\n2. Gamma\n3. Alpha");
  EXPECT_EQ(g.complete(pointwise("u", "b", std::nullopt)).text, "5.0");
  EXPECT_EQ(g.complete(pointwise("u", "c", 5.0)).text, "1.0");
}

TEST(Mocks, NoisyOracleLeaksOnlyThroughHints) {
  const auto cat = catalog();
  data::Interactions xs = {{"u", "a", 4.0, 1}, {"u", "b", 2.0, 2}, {"u", "c", 5.0, 3}};
  const auto split = data::temporal_split(xs);
  const lists::UserHistory h(split, data::RatingScale::five_point());
  MockContext ctx{&cat, {}};
  ctx.truth.history = &h;
  BackendConfig cfg;
  cfg.kind = BackendKind::kMockNoisyOracle;
  cfg.seed = 3;
  Gateway g(make_backend(cfg, ctx), cfg, no_sleep());
  EXPECT_EQ(g.complete(pointwise("u", "c", 0.0)).text, "5.0");
  EXPECT_EQ(g.complete(pointwise("u", "b", 1.0)).text, "2.0");
  const auto r1 = g.complete(pointwise("u", "c", std::nullopt)).text;
  EXPECT_EQ(g.complete(pointwise("u", "c", std::nullopt)).text, r1);
  const double v = std::stod(r1);
  EXPECT_GE(v, 1.0);
  EXPECT_LE(v, 5.0);
}

TEST(Mocks, BatchIsDeterministicAndOrdered) {
  const auto cat = catalog();
  MockContext ctx{&cat, {}};
  ctx.truth.test_item["u"] = "a";
  std::vector<PromptInstance> ps;
  for (int k = 0; k < 50; ++k) {
    ps.push_back(pairwise("u" + std::to_string(k % 2 ? 0 : 1), k % 3 ? "a" : "b", "c", "c"));
    ps.back().id += "#" + std::to_string(k);
  }
  auto g = mock_gateway(BackendKind::kMockOracle, ctx);
  const auto a = g.batch_complete(ps), b = g.batch_complete(ps);
  ASSERT_EQ(a.size(), ps.size());
  for (size_t i = 0; i < ps.size(); ++i) {
    EXPECT_EQ(a[i].prompt_id, ps[i].id);
    EXPECT_EQ(a[i].text, b[i].text);
  }
}

// Counts concurrent send() calls independently of the gateway.
class ProbeBackend : public Backend {
 public:
  std::string id() const override { return "probe"; }
  std::string send(const PromptInstance& p, const GenerationParams&) override {
    const int now = ++live_;
    int prev = peak_.load();
    while (now > prev && !peak_.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(3));
    --live_;
    if (p.id == "p7") throw BackendError("boom", false);
    return "ok:" + p.id;
  }
  static std::atomic<int> live_, peak_;
};
std::atomic<int> ProbeBackend::live_{0};
std::atomic<int> ProbeBackend::peak_{0};

TEST(Batch, InFlightIsBoundedAndFailuresIsolated) {
  BackendConfig cfg;
  cfg.kind = BackendKind::kMockScripted;
  cfg.script_path = "unused";
  cfg.max_in_flight = 8;
  Gateway g(std::make_unique<ProbeBackend>(), cfg, no_sleep());
  std::vector<PromptInstance> ps(100);
  for (size_t i = 0; i < ps.size(); ++i) ps[i].id = "p" + std::to_string(i);
  Gateway::BatchStats st;
  const auto out = g.batch_complete(ps, &st);
  EXPECT_LE(ProbeBackend::peak_.load(), 8);
  EXPECT_GE(ProbeBackend::peak_.load(), 2);
  EXPECT_LE(st.peak_in_flight, 8u);
  EXPECT_EQ(st.failures, 1u);
  for (size_t i = 0; i < ps.size(); ++i) {
    EXPECT_EQ(out[i].prompt_id, ps[i].id);
    if (i == 7) {
      EXPECT_FALSE(out[i].ok);
      EXPECT_TRUE(out[i].text.empty()) << "no fabricated completion";
      EXPECT_EQ(out[i].attempts, 1u) << "permanent errors are not retried";
    } else {
      EXPECT_TRUE(out[i].ok);
      EXPECT_EQ(out[i].text, "ok:" + ps[i].id);
    }
  }
}

TEST(Scripted, OneFailureAmongTen) {
  const auto dir = testing::scratch_dir("script");
  {
    std::ofstream s(dir / "script.json");
    s << R"({"*": "1. Alpha", "q3": {"error": "overloaded", "transient": true}})";
  }
  BackendConfig cfg;
  cfg.kind = BackendKind::kMockScripted;
  cfg.script_path = (dir / "script.json").string();
  cfg.max_retries = 2;
  Gateway g(make_backend(cfg, {}), cfg, no_sleep());
  std::vector<PromptInstance> ps(10);
  for (size_t i = 0; i < ps.size(); ++i) ps[i].id = "q" + std::to_string(i);
  const auto out = g.batch_complete(ps);
  size_t ok = 0;
  for (const auto& c : out) ok += c.ok;
  EXPECT_EQ(ok, 9u);
  EXPECT_FALSE(out[3].ok);
  EXPECT_EQ(out[3].attempts, 3u);
  EXPECT_NE(out[3].error.find("overloaded"), std::string::npos);
}

// In-process chat-completions server.
class ChatServer {
 public:
  explicit ChatServer(int fail_first, int status = 500) : fail_first_(fail_first), status_(status) {
    srv_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++hits_;
      {
        std::lock_guard<std::mutex> lock(mu_);
        bodies_.push_back(nlohmann::json::parse(req.body));
        auth_ = req.get_header_value("Authorization");
      }
      if (n <= fail_first_) {
        res.status = status_;
        res.set_content(status_ == 400 ? "unknown field top_k" : "busy", "text/plain");
        return;
      }
      nlohmann::json r = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "Yes."}}}}}}};
      res.set_content(r.dump(), "application/json");
    });
    port_ = srv_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  ~ChatServer() {
    srv_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  int hits() const { return hits_; }
  nlohmann::json body(size_t i) {
    std::lock_guard<std::mutex> lock(mu_);
    return bodies_.at(i);
  }
  std::string auth() {
    std::lock_guard<std::mutex> lock(mu_);
    return auth_;
  }

 private:
  httplib::Server srv_;
  std::thread thread_;
  int port_ = 0;
  int fail_first_;
  int status_;
  std::atomic<int> hits_{0};
  std::mutex mu_;
  std::vector<nlohmann::json> bodies_;
  std::string auth_;
};

BackendConfig http_config(const std::string& endpoint) {
  BackendConfig cfg;
  cfg.kind = BackendKind::kHttpChat;
  cfg.endpoint = endpoint;
  cfg.model = "test-model";
  cfg.token_env = "RECRANK_TEST_TOKEN";
  cfg.timeout_s = 5;
  return cfg;
}

TEST(Http, TwoServerErrorsThenSuccessTakesThreeAttempts) {
  ChatServer srv(2);
  ::setenv("RECRANK_TEST_TOKEN", "sekrit", 1);
  const auto cfg = http_config(srv.endpoint());
  std::vector<long> waits;
  GatewayOptions o;
  o.sleep = [&](std::chrono::milliseconds d) { waits.push_back(d.count()); };
  Gateway g(make_backend(cfg, {}), cfg, o);
  const auto c = g.complete(pairwise("u", "a", "b", "a"));
  EXPECT_TRUE(c.ok) << c.error;
  EXPECT_EQ(c.text, "Yes.");
  EXPECT_EQ(c.attempts, 3u);
  EXPECT_EQ(srv.hits(), 3);
  EXPECT_EQ(waits, (std::vector<long>{500, 1000}));
  const auto body = srv.body(0);
  EXPECT_EQ(body["model"], "test-model");
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "pair ab for u");
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.1);
  EXPECT_EQ(body["top_k"], 40);
  EXPECT_DOUBLE_EQ(body["top_p"].get<double>(), 0.1);
  EXPECT_EQ(body["max_tokens"], 256);
  EXPECT_EQ(srv.auth(), "Bearer sekrit");
  ::unsetenv("RECRANK_TEST_TOKEN");
}

TEST(Http, ExhaustedRetriesGiveTypedFailure) {
  ChatServer srv(100);
  auto cfg = http_config(srv.endpoint());
  cfg.max_retries = 2;
  Gateway g(make_backend(cfg, {}), cfg, no_sleep());
  const auto c = g.complete(pairwise("u", "a", "b", "a"));
  EXPECT_FALSE(c.ok);
  EXPECT_TRUE(c.text.empty());
  EXPECT_EQ(c.attempts, 3u);
  EXPECT_NE(c.error.find("500"), std::string::npos);
}

TEST(Http, RejectedTopKIsDroppedOnce) {
  ChatServer srv(1, 400);
  const auto cfg = http_config(srv.endpoint());
  Gateway g(make_backend(cfg, {}), cfg, no_sleep());
  const auto c = g.complete(pairwise("u", "a", "b", "a"));
  EXPECT_TRUE(c.ok) << c.error;
  EXPECT_TRUE(srv.body(0).contains("top_k"));
  EXPECT_FALSE(srv.body(1).contains("top_k"));
}

TEST(Http, UnreachableServerIsATransportFailure) {
  auto cfg = http_config("http://127.0.0.1:9/v1");
  cfg.max_retries = 1;
  cfg.timeout_s = 1;
  Gateway g(make_backend(cfg, {}), cfg, no_sleep());
  const auto c = g.complete(pairwise("u", "a", "b", "a"));
  EXPECT_FALSE(c.ok);
  EXPECT_EQ(c.attempts, 2u);
}

TEST(Replay, TranscriptServesWithoutTheBackend) {
  const auto dir = testing::scratch_dir("replay");
  std::vector<PromptInstance> ps;
  for (int k = 0; k < 5; ++k) ps.push_back(pairwise("u" + std::to_string(k), "a", "b", "a"));
  std::vector<Completion> first;
  std::string endpoint;
  {
    ChatServer srv(0);
    endpoint = srv.endpoint();
    const auto cfg = http_config(endpoint);
    TranscriptLog log(dir / "t.jsonl");
    GatewayOptions o = no_sleep();
    o.transcript = &log;
    Gateway g(make_backend(cfg, {}), cfg, o);
    first = g.batch_complete(ps);
  }
  // Server gone; the replay cache must answer everything.
  const auto cache = ReplayCache::load(dir / "t.jsonl");
  EXPECT_EQ(cache.size(), 5u);
  const auto cfg = http_config(endpoint);
  GatewayOptions o = no_sleep();
  o.cache = &cache;
  o.replay_only = true;
  Gateway g(make_backend(cfg, {}), cfg, o);
  const auto again = g.batch_complete(ps);
  for (size_t i = 0; i < ps.size(); ++i) {
    EXPECT_TRUE(again[i].ok);
    EXPECT_TRUE(again[i].from_cache);
    EXPECT_EQ(again[i].text, first[i].text);
  }
  auto extra = pairwise("zz", "a", "b", "a");
  const auto miss = g.complete(extra);
  EXPECT_FALSE(miss.ok);
  EXPECT_EQ(miss.attempts, 0u);

  // Different decoding parameters are a different cache key.
  GenerationParams p2;
  p2.temperature = 0.7;
  EXPECT_NE(ReplayCache::key(prompt_hash(ps[0]), p2, g.backend_id()),
            ReplayCache::key(prompt_hash(ps[0]), GenerationParams{}, g.backend_id()));
}

TEST(Config, ValidationAndRoundTrip) {
  BackendConfig c;
  c.kind = BackendKind::kHttpChat;
  EXPECT_GE(c.validate().size(), 2u);  // endpoint and model
  GenerationParams p;
  p.top_p = 0.0;
  p.top_k = 0;
  p.temperature = -1;
  EXPECT_EQ(p.validate().size(), 3u);
  c.endpoint = "http://x/v1";
  c.model = "m";
  nlohmann::json j = c;
  const auto back = j.get<BackendConfig>();
  EXPECT_EQ(back.id(), c.id());
  EXPECT_EQ(parse_backend_kind("mock-noisy-oracle"), BackendKind::kMockNoisyOracle);
}

TEST(Completions, FileRoundTrip) {
  std::vector<Completion> cs(2);
  cs[0] = {"p0", "h0", true, "1. A", "", 1, 3.0, false};
  cs[1] = {"p1", "h1", false, "", "HTTP 500", 4, 9.0, false};
  const auto path = testing::scratch_dir("compl") / "c.jsonl";
  write_completions(path, cs);
  const auto back = read_completions(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].error, "HTTP 500");
  EXPECT_EQ(back[0].text, "1. A");
  EXPECT_EQ(back[1].attempts, 4u);
}

}  // namespace
}  // namespace recrank::llm
