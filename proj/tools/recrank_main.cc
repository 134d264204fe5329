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


// recrank command-line entry point.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <iostream>
#include <json.hpp>

#include "recrank/pipeline.h"

namespace {

namespace fs = std::filesystem;
namespace pl = recrank::pipeline;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

class ValidationFailure : public std::runtime_error {
 public:
  explicit ValidationFailure(std::vector<std::string> diags)
      : std::runtime_error("invalid configuration"), diags_(std::move(diags)) {}
  const std::vector<std::string>& diagnostics() const { return diags_; }

 private:
  std::vector<std::string> diags_;
};

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;  // bare strings need no quoting on the command line
  }
}

// Splits on commas outside brackets and quotes.
std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  bool quoted = false;
  for (char c : s) {
    if (c == '"') quoted = !quoted;
    if (!quoted && (c == '[' || c == '{')) ++depth;
    if (!quoted && (c == ']' || c == '}')) --depth;
    if (c == ',' && depth == 0 && !quoted) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationFailure({"expected key=value, got '" + s + "'"});
  return {s.substr(0, eq), s.substr(eq + 1)};
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
};

void add_config_args(CLI::App* app, ConfigArgs& a) {
  app->add_option("--config", a.path, "Run configuration (JSON)");
  app->add_option("--set", a.sets, "Override a config key, e.g. recommender.epochs=50")->take_all();
}

json read_doc(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ValidationFailure({"cannot read config " + path});
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationFailure({"config " + path + ": " + e.what()});
  }
}

// full also runs the whole-config checks so one error report lists
// everything.
pl::RunConfig load(const ConfigArgs& a, const std::vector<std::pair<std::string, json>>& extra = {},
                   bool full = false) {
  json doc = read_doc(a.path);
  for (const auto& s : a.sets) {
    const auto [k, v] = split_assignment(s);
    pl::set_path(doc, k, parse_value(v));
  }
  for (const auto& [k, v] : extra) pl::set_path(doc, k, v);
  const fs::path base = a.path.empty() ? fs::current_path() : fs::absolute(a.path).parent_path();
  auto res = pl::config_from_json(doc, base);
  if (full) {
    const auto more = pl::validate_config(res.config);
    res.diagnostics.insert(res.diagnostics.end(), more.begin(), more.end());
  }
  if (!res.ok()) throw ValidationFailure(res.diagnostics);
  return res.config;
}

void check(const std::vector<std::string>& diags) {
  if (!diags.empty()) throw ValidationFailure(diags);
}

int print_run(const pl::RunResult& r) {
  std::cout << r.table;
  spdlog::info("manifest {}", r.manifest.manifest_path.string());
  spdlog::info("report {}", r.manifest.report.string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recrank: LLM reranking evaluation pipeline"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error")->capture_default_str();

  // prepare-data
  ConfigArgs prep_cfg;
  std::string prep_raw, prep_format, prep_out, prep_tag;
  size_t prep_kcore = 0;
  uint64_t prep_seed = 0;
  auto* prep = app.add_subcommand("prepare-data", "Load, filter, split and summarise a raw dataset");
  add_config_args(prep, prep_cfg);
  prep->add_option("--dataset", prep_tag, "Dataset tag; also the format when --format is absent");
  prep->add_option("--raw", prep_raw, "Raw dataset file or directory");
  prep->add_option("--seed", prep_seed, "Seed for simulated timestamps");
  prep->add_option("--format", prep_format, "ml-100k|ml-1m|bookcrossing|amazon-music|generic-tsv");
  prep->add_option("--k-core", prep_kcore, "k-core threshold (0 disables)");
  prep->add_option("--out", prep_out, "Output directory")->required();

  // train-recommender
  ConfigArgs train_cfg;
  std::string train_data, train_model, train_out;
  auto* train = app.add_subcommand("train-recommender", "Train the initial recommender");
  add_config_args(train, train_cfg);
  train->add_option("--data", train_data, "Prepared dataset directory")->required();
  train->add_option("--model", train_model, "mf|lightgcn|xsimgcl");
  train->add_option("--out", train_out, "Output directory")->required();

  // sample-users
  ConfigArgs sample_cfg;
  std::string sample_data, sample_model, sample_strategy, sample_out;
  size_t sample_n = 0;
  auto* sample = app.add_subcommand("sample-users", "Draw the evaluation user set");
  add_config_args(sample, sample_cfg);
  sample->add_option("--data", sample_data, "Prepared dataset directory")->required();
  sample->add_option("--model-dir", sample_model, "train-recommender output (for clustering strategies)");
  sample->add_option("--strategy", sample_strategy, "importance|kmeans|dbscan|random|composite|all");
  sample->add_option("--n", sample_n, "Number of draws");
  sample->add_option("--out", sample_out, "Output directory")->required();

  // build-lists
  ConfigArgs lists_cfg;
  std::string lists_data, lists_model, lists_samples, lists_out;
  auto* blists = app.add_subcommand("build-lists", "Build candidate lists for sampled users");
  add_config_args(blists, lists_cfg);
  blists->add_option("--data", lists_data, "Prepared dataset directory")->required();
  blists->add_option("--model-dir", lists_model, "train-recommender output")->required();
  blists->add_option("--samples-dir", lists_samples, "sample-users output")->required();
  blists->add_option("--out", lists_out, "Output directory")->required();

  // gen-prompts
  ConfigArgs prompts_cfg;
  std::string prompts_data, prompts_lists, prompts_out;
  auto* gprompts = app.add_subcommand("gen-prompts", "Render prompts, run the leakage linter, emit corpora");
  add_config_args(gprompts, prompts_cfg);
  gprompts->add_option("--data", prompts_data, "Prepared dataset directory")->required();
  gprompts->add_option("--lists-dir", prompts_lists, "build-lists output")->required();
  gprompts->add_option("--out", prompts_out, "Output directory")->required();

  // complete
  ConfigArgs complete_cfg;
  std::string complete_data, complete_prompts, complete_out, complete_transcript;
  auto* cmpl = app.add_subcommand("complete", "Send inference prompts to the configured backend");
  add_config_args(cmpl, complete_cfg);
  cmpl->add_option("--data", complete_data, "Prepared dataset directory")->required();
  cmpl->add_option("--prompts-dir", complete_prompts, "gen-prompts output")->required();
  cmpl->add_option("--out", complete_out, "Output directory")->required();
  cmpl->add_option("--transcript", complete_transcript, "Append request/response records here (JSONL)");

  // parse
  std::string parse_data, parse_prompts, parse_completions, parse_out;
  auto* prs = app.add_subcommand("parse", "Parse completions into structured results");
  prs->add_option("--data", parse_data, "Prepared dataset directory")->required();
  prs->add_option("--prompts-dir", parse_prompts, "gen-prompts output")->required();
  prs->add_option("--completions-dir", parse_completions, "complete output")->required();
  prs->add_option("--out", parse_out, "Output directory")->required();

  // rank
  ConfigArgs rank_cfg;
  std::string rank_lists, rank_prompts, rank_parsed, rank_out;
  auto* rnk = app.add_subcommand("rank", "Combine parsed results into final rankings");
  add_config_args(rnk, rank_cfg);
  rnk->add_option("--lists-dir", rank_lists, "build-lists output")->required();
  rnk->add_option("--prompts-dir", rank_prompts, "gen-prompts output")->required();
  rnk->add_option("--parsed-dir", rank_parsed, "parse output")->required();
  rnk->add_option("--out", rank_out, "Output directory")->required();

  // evaluate
  ConfigArgs eval_cfg;
  std::string eval_data, eval_rank, eval_out;
  auto* evl = app.add_subcommand("evaluate", "Compute metrics and significance tests");
  add_config_args(evl, eval_cfg);
  evl->add_option("--data", eval_data, "Prepared dataset directory")->required();
  evl->add_option("--rank-dir", eval_rank, "rank output")->required();
  evl->add_option("--out", eval_out, "Output directory")->required();

  // run / sweep / validate
  ConfigArgs run_cfg;
  auto* run = app.add_subcommand("run", "Run every stage with caching");
  add_config_args(run, run_cfg);
  run->get_option("--config")->required();

  ConfigArgs sweep_cfg;
  std::vector<std::string> vary;
  auto* sweep = app.add_subcommand("sweep", "Run the cartesian product of --vary values");
  add_config_args(sweep, sweep_cfg);
  sweep->get_option("--config")->required();
  sweep->add_option("--vary", vary, "key=v1,v2,... (repeatable)")->required()->take_all();

  ConfigArgs val_cfg;
  bool val_print = false;
  auto* val = app.add_subcommand("validate", "Check a configuration and print diagnostics");
  add_config_args(val, val_cfg);
  val->add_flag("--print", val_print, "Print the effective configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");

  try {
    if (*prep) {
      std::vector<std::pair<std::string, json>> extra;
      if (!prep_raw.empty()) extra.emplace_back("dataset.raw", fs::absolute(prep_raw).string());
      if (!prep_tag.empty()) extra.emplace_back("dataset.tag", prep_tag);
      if (!prep_format.empty()) {
        extra.emplace_back("dataset.format", prep_format);
      } else if (!prep_tag.empty()) {
        extra.emplace_back("dataset.format", prep_tag);
      }
      if (prep->count("--seed")) extra.emplace_back("seed", prep_seed);
      if (prep->count("--k-core")) extra.emplace_back("dataset.k_core", prep_kcore);
      const auto cfg = load(prep_cfg, extra);
      if (cfg.dataset.raw.empty() || !fs::exists(cfg.dataset.raw)) check({"dataset.raw: path not found"});
      fs::create_directories(prep_out);
      pl::stages::prepare(cfg.dataset, cfg.seed, prep_out);
      std::cout << std::ifstream(recrank::data::PreparedPaths{prep_out}.stats()).rdbuf();
      return kExitOk;
    }
    if (*train) {
      std::vector<std::pair<std::string, json>> extra;
      if (!train_model.empty()) extra.emplace_back("recommender.model", train_model);
      const auto cfg = load(train_cfg, extra);
      check(cfg.recommender.train.validate(cfg.recommender.model));
      fs::create_directories(train_out);
      pl::stages::train(cfg.recommender, train_data, train_out);
      return kExitOk;
    }
    if (*sample) {
      std::vector<std::pair<std::string, json>> extra;
      if (!sample_strategy.empty()) extra.emplace_back("sampling.strategy", sample_strategy);
      if (sample->count("--n")) extra.emplace_back("sampling.n", sample_n);
      const auto cfg = load(sample_cfg, extra);
      check(cfg.sampling.plan.validate());
      if (cfg.sampling.embeddings == "model" && sample_model.empty() &&
          (cfg.sampling.plan.strategy != recrank::sampling::Strategy::kImportance &&
           cfg.sampling.plan.strategy != recrank::sampling::Strategy::kRandom &&
           cfg.sampling.plan.strategy != recrank::sampling::Strategy::kAll)) {
        check({"sampling.embeddings: clustering strategies need --model-dir or an embeddings path"});
      }
      fs::create_directories(sample_out);
      pl::stages::sample(cfg.sampling, sample_data, sample_model, sample_out);
      return kExitOk;
    }
    if (*blists) {
      const auto cfg = load(lists_cfg);
      fs::create_directories(lists_out);
      pl::stages::build_lists(cfg.lists, lists_data, lists_model, lists_samples, lists_out);
      return kExitOk;
    }
    if (*gprompts) {
      const auto cfg = load(prompts_cfg);
      check(cfg.prompts.prompts.validate());
      fs::create_directories(prompts_out);
      pl::stages::gen_prompts(cfg.prompts, prompts_data, prompts_lists, prompts_out);
      return kExitOk;
    }
    if (*cmpl) {
      const auto cfg = load(complete_cfg);
      auto diags = cfg.complete.backend.validate();
      const auto g = cfg.complete.generation.validate();
      diags.insert(diags.end(), g.begin(), g.end());
      check(diags);
      fs::create_directories(complete_out);
      pl::stages::complete(cfg.complete, complete_data, complete_prompts, complete_out, complete_transcript);
      return kExitOk;
    }
    if (*prs) {
      fs::create_directories(parse_out);
      pl::stages::parse(parse_data, parse_prompts, parse_completions, parse_out);
      return kExitOk;
    }
    if (*rnk) {
      const auto cfg = load(rank_cfg);
      check(cfg.rank.weights.validate());
      fs::create_directories(rank_out);
      pl::stages::rank(cfg.rank, rank_lists, rank_prompts, rank_parsed, rank_out);
      return kExitOk;
    }
    if (*evl) {
      const auto cfg = load(eval_cfg);
      fs::create_directories(eval_out);
      pl::stages::evaluate(cfg.eval, pl::config_hash(cfg), cfg.seed, eval_data, eval_rank, eval_out);
      std::cout << std::ifstream(fs::path(eval_out) / pl::artifacts::kTable).rdbuf();
      return kExitOk;
    }
    if (*val) {
      const auto cfg = load(val_cfg, {}, true);
      if (val_print) std::cout << pl::to_json(cfg).dump(2) << "\n";
      std::cout << "ok\n";
      return kExitOk;
    }
    if (*run) {
      const auto cfg = load(run_cfg, {}, true);
      return print_run(pl::run_pipeline(cfg));
    }
    if (*sweep) {
      // Expand the grid first so that every variant is validated before any
      // stage runs.
      std::vector<std::vector<std::pair<std::string, json>>> grid = {{}};
      for (const auto& v : vary) {
        const auto [key, list] = split_assignment(v);
        std::vector<std::vector<std::pair<std::string, json>>> next;
        for (const auto& base : grid) {
          for (const auto& item : split_list(list)) {
            auto g = base;
            g.emplace_back(key, parse_value(item));
            next.push_back(std::move(g));
          }
        }
        grid = std::move(next);
      }
      std::vector<pl::RunConfig> cfgs;
      std::vector<std::string> diags;
      for (const auto& g : grid) {
        std::string label;
        for (const auto& [k, val_json] : g) label += (label.empty() ? "" : ",") + k + "=" + val_json.dump();
        try {
          auto cfg = load(sweep_cfg, g, true);
          cfg.name = (cfg.name.empty() ? "" : cfg.name + " ") + "[" + label + "]";
          cfgs.push_back(std::move(cfg));
        } catch (const ValidationFailure& e) {
          for (const auto& d : e.diagnostics()) diags.push_back(label + ": " + d);
        }
      }
      check(diags);
      for (const auto& cfg : cfgs) {
        std::cout << "== " << cfg.name << "\n";
        print_run(pl::run_pipeline(cfg));
      }
      return kExitOk;
    }
  } catch (const ValidationFailure& e) {
    for (const auto& d : e.diagnostics()) std::cerr << "error: " << d << "\n";
    return kExitValidation;
  } catch (const recrank::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const pl::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return kExitOk;
}
