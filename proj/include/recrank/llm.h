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

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "recrank/dataset.h"
#include "recrank/prompt.h"
#include "recrank/ranklist.h"

namespace recrank::llm {

struct GenerationParams {
  double temperature = 0.1;
  size_t top_k = 40;
  double top_p = 0.1;
  size_t max_tokens = 256;

  std::vector<std::string> validate() const;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GenerationParams, temperature, top_k, top_p, max_tokens)

enum class BackendKind { kHttpChat, kMockEchoHint, kMockOracle, kMockNoisyOracle, kMockScripted };

BackendKind parse_backend_kind(std::string_view tag);
std::string_view backend_tag(BackendKind k);

struct BackendConfig {
  BackendKind kind = BackendKind::kMockEchoHint;
  std::string endpoint;  // base URL, e.g. http://localhost:8000/v1
  std::string model;
  std::string token_env = "RECRANK_API_TOKEN";
  double timeout_s = 60.0;
  size_t max_retries = 3;
  size_t max_in_flight = 4;
  double backoff_initial_ms = 500.0;
  double backoff_max_ms = 20000.0;
  std::string script_path;  // mock-scripted responses
  uint64_t seed = 0;        // mock-noisy-oracle

  std::vector<std::string> validate() const;
  // Stable identity used in cache keys and transcripts.
  std::string id() const;
};

void to_json(nlohmann::json& j, const BackendConfig& c);
void from_json(const nlohmann::json& j, BackendConfig& c);

// A failed attempt. Transient failures are retried.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool transient) : Error(what), transient_(transient) {}
  bool transient() const { return transient_; }

 private:
  bool transient_;
};

struct Completion {
  std::string prompt_id;
  std::string prompt_hash;
  bool ok = false;
  std::string text;   // verbatim assistant text when ok
  std::string error;  // reason when not ok
  size_t attempts = 0;
  double latency_ms = 0.0;
  bool from_cache = false;
};

// Ground truth available to the oracle mocks.
struct GroundTruth {
  std::map<std::string, std::string, IdLess> test_item;
  const lists::UserHistory* history = nullptr;
};

struct MockContext {
  const data::Catalog* catalog = nullptr;
  GroundTruth truth;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  // One attempt. Throws BackendError on failure.
  virtual std::string send(const prompts::PromptInstance& prompt, const GenerationParams& params) = 0;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& cfg, const MockContext& mock);

// Line-delimited transcript writer; safe for concurrent use.
class TranscriptLog {
 public:
  explicit TranscriptLog(const std::filesystem::path& path);
  void append(const nlohmann::json& record);

 private:
  std::mutex mu_;
  std::ofstream out_;
};

// Successful transcript records keyed by (prompt hash, params, backend id).
class ReplayCache {
 public:
  ReplayCache() = default;
  static ReplayCache load(const std::filesystem::path& transcript);
  static std::string key(const std::string& prompt_hash, const GenerationParams& params, const std::string& backend);

  std::optional<std::string> find(const std::string& key) const;
  void insert(const std::string& key, std::string text);
  size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, std::string> entries_;
};

struct GatewayOptions {
  GenerationParams params;
  const ReplayCache* cache = nullptr;
  bool replay_only = false;  // cache misses fail instead of reaching the backend
  TranscriptLog* transcript = nullptr;
  // Sleep hook for backoff; tests substitute a no-op.
  std::function<void(std::chrono::milliseconds)> sleep;
};

class Gateway {
 public:
  Gateway(std::unique_ptr<Backend> backend, BackendConfig cfg, GatewayOptions opts);

  Completion complete(const prompts::PromptInstance& prompt);

  struct BatchStats {
    size_t peak_in_flight = 0;
    size_t failures = 0;
    size_t cache_hits = 0;
  };
  // Results align with the input order.
  std::vector<Completion> batch_complete(const std::vector<prompts::PromptInstance>& prompts,
                                         BatchStats* stats = nullptr);

  const std::string& backend_id() const { return backend_id_; }

 private:
  std::unique_ptr<Backend> backend_;
  BackendConfig cfg_;
  GatewayOptions opts_;
  std::string backend_id_;
};

std::string prompt_hash(const prompts::PromptInstance& p);

void write_completions(const std::filesystem::path& path, const std::vector<Completion>& completions);
std::vector<Completion> read_completions(const std::filesystem::path& path);

}  // namespace recrank::llm
