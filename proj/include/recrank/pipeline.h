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

#include "recrank/dataset.h"
#include "recrank/evaluation.h"
#include "recrank/hybrid.h"
#include "recrank/llm.h"
#include "recrank/prompt.h"
#include "recrank/ranklist.h"
#include "recrank/recommender.h"
#include "recrank/sampling.h"

namespace recrank::pipeline {

namespace fs = std::filesystem;

struct DatasetConfig {
  std::string tag = "ml-100k";
  fs::path raw;  // file or directory
  data::Format format = data::Format::kMl100k;
  size_t k_core = 0;
  size_t max_malformed = 0;
  fs::path catalog;  // optional title sidecar
  bool force_simulated_timestamps = false;
};

struct RecommenderConfig {
  models::ModelKind model = models::ModelKind::kMf;
  models::TrainConfig train;
};

struct SamplingConfig {
  sampling::SamplingPlan plan;
  // "model" takes user embeddings from the trained recommender; anything
  // else is an embeddings TSV path. Only read by clustering strategies.
  std::string embeddings = "model";
};

struct ListConfig {
  size_t n = 10;  // inference candidates per user
  bool train_lists = false;
  lists::TrainListOptions train;
};

struct PromptStageConfig {
  prompts::PromptConfig prompts;
  bool emit_corpus = false;
  std::map<std::string, double> corpus_mix;  // empty: every instance
};

struct CompleteConfig {
  llm::BackendConfig backend;
  llm::GenerationParams generation;
  fs::path replay;  // transcript to serve from before reaching the backend
  bool replay_only = false;
};

struct EvalConfig {
  double alpha = 0.05;
  std::vector<std::string> metrics = {"H@3", "N@3", "H@5", "N@5"};
};

struct RunConfig {
  std::string name;
  uint64_t seed = 0;
  fs::path work_dir = "recrank-work";
  DatasetConfig dataset;
  SamplingConfig sampling;
  RecommenderConfig recommender;
  ListConfig lists;
  PromptStageConfig prompts;
  CompleteConfig complete;
  hybrid::RankOptions rank;
  EvalConfig eval;
};

// Canonical JSON; every field is written so defaults are visible.
nlohmann::json to_json(const RunConfig& cfg);

struct ConfigLoad {
  RunConfig config;
  std::vector<std::string> diagnostics;  // parse problems and unknown keys
  bool ok() const { return diagnostics.empty(); }
};

// Overlays j on the defaults. Relative paths resolve against base_dir.
// Sections that omit "seed" inherit the top-level seed.
ConfigLoad config_from_json(const nlohmann::json& j, const fs::path& base_dir = {});
ConfigLoad load_config(const fs::path& path);

// Every statically checkable violation, not only the first.
std::vector<std::string> validate_config(const RunConfig& cfg);

// Hash of the canonical config without run-local fields (name, work_dir).
std::string config_hash(const RunConfig& cfg);

// Sets a dotted key ("weights.alpha1") in a config document.
void set_path(nlohmann::json& doc, const std::string& dotted, const nlohmann::json& value);

class StageError : public Error {
 public:
  StageError(std::string stage, fs::path artifact, const std::string& what)
      : Error("stage " + stage + " failed (" + artifact.string() + "): " + what),
        stage_(std::move(stage)),
        artifact_(std::move(artifact)) {}
  const std::string& stage() const { return stage_; }
  const fs::path& artifact() const { return artifact_; }

 private:
  std::string stage_;
  fs::path artifact_;
};

// Stage bodies over explicit directories; shared by the CLI subcommands
// and the cached runner.
namespace stages {

void prepare(const DatasetConfig& cfg, uint64_t seed, const fs::path& out);
void train(const RecommenderConfig& cfg, const fs::path& prepared, const fs::path& out);
void sample(const SamplingConfig& cfg, const fs::path& prepared, const fs::path& model_dir, const fs::path& out);
void build_lists(const ListConfig& cfg, const fs::path& prepared, const fs::path& model_dir,
                 const fs::path& samples_dir, const fs::path& out);
void gen_prompts(const PromptStageConfig& cfg, const fs::path& prepared, const fs::path& lists_dir,
                 const fs::path& out);
// transcript, when non-empty, receives one record per attempt.
void complete(const CompleteConfig& cfg, const fs::path& prepared, const fs::path& prompts_dir, const fs::path& out,
              const fs::path& transcript);
void parse(const fs::path& prepared, const fs::path& prompts_dir, const fs::path& completions_dir,
           const fs::path& out);
void rank(const hybrid::RankOptions& opts, const fs::path& lists_dir, const fs::path& prompts_dir,
          const fs::path& parsed_dir, const fs::path& out);
void evaluate(const EvalConfig& cfg, const std::string& config_hash, uint64_t seed, const fs::path& prepared,
              const fs::path& rank_dir, const fs::path& out);

}  // namespace stages

// File names inside stage output directories.
namespace artifacts {
inline constexpr const char* kModel = "model.bin";
inline constexpr const char* kEmbeddings = "user_embeddings.tsv";
inline constexpr const char* kSamples = "samples.tsv";
inline constexpr const char* kLists = "lists.jsonl";
inline constexpr const char* kListSkips = "skipped.txt";
inline constexpr const char* kPrompts = "prompts.jsonl";
inline constexpr const char* kLint = "lint.json";
inline constexpr const char* kCompletions = "completions.jsonl";
inline constexpr const char* kParsed = "parsed.jsonl";
inline constexpr const char* kRankings = "rankings.jsonl";
inline constexpr const char* kRankStats = "rank_stats.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kTable = "table.txt";
}  // namespace artifacts

struct StageRecord {
  std::string stage;
  std::string key;          // cache key
  std::string output_hash;  // tree hash of the stage output
  fs::path dir;
  bool cached = false;
  double seconds = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::string software_version;
  std::string started_at;  // UTC, ISO-8601
  std::string finished_at;
  std::vector<StageRecord> stages;
  double parse_failure_rate = 0.0;
  double fallback_rate = 0.0;
  fs::path report;
  fs::path manifest_path;
  const StageRecord* find(const std::string& stage) const;
};

nlohmann::json to_json(const RunManifest& m);

struct RunResult {
  RunManifest manifest;
  eval::EvalReport report;
  std::string table;
};

// Runs every stage in order, reusing cached outputs whose key matches.
// Throws StageError naming the failing stage.
RunResult run_pipeline(const RunConfig& cfg);

const std::vector<std::string>& stage_names();

}  // namespace recrank::pipeline
