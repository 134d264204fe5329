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


#include "support/fixture.h"

#include <fstream>
#include <set>
#include <unistd.h>

#include "recrank/rng.h"

namespace recrank::testing {

std::string fixture_title(size_t item) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "Item %03zu", item);
  return buf;
}

fs::path write_block_fixture(const fs::path& dir, const BlockFixture& spec) {
  fs::create_directories(dir);
  Rng rng(spec.seed);
  const size_t n_items = spec.blocks * spec.items_per_block;
  std::ofstream out(dir / "interactions.tsv");
  out << "user_id\titem_id\trating\ttimestamp\n";
  int64_t clock = 1'000'000;
  for (size_t u = 0; u < spec.users; ++u) {
    const size_t block = u % spec.blocks;
    std::vector<size_t> own;
    for (size_t k = 0; k < spec.items_per_block; ++k) own.push_back(block * spec.items_per_block + k);
    rng.shuffle(own);
    std::vector<size_t> picks(own.begin(), own.begin() + static_cast<std::ptrdiff_t>(spec.per_user));
    std::set<size_t> used(picks.begin(), picks.end());
    // Off-block items go first so the held-out item stays in-block.
    std::vector<size_t> extra;
    while (extra.size() < spec.off_block) {
      const size_t i = rng.below(n_items);
      if (i / spec.items_per_block == block || used.count(i)) continue;
      used.insert(i);
      extra.push_back(i);
    }
    picks.insert(picks.begin(), extra.begin(), extra.end());
    for (size_t i : picks) {
      const bool liked = rng.uniform() < spec.liked_share;
      const int rating = liked ? 4 + static_cast<int>(rng.below(2)) : 1 + static_cast<int>(rng.below(3));
      out << "u" << u << '\t' << "i" << i << '\t' << rating << '\t' << clock++ << '\n';
    }
  }
  std::ofstream titles(dir / "items.tsv");
  for (size_t i = 0; i < n_items; ++i) titles << "i" << i << '\t' << fixture_title(i) << '\n';
  return dir;
}

pipeline::RunConfig fixture_config(const fs::path& raw, const fs::path& work, llm::BackendKind backend,
                                   uint64_t seed) {
  pipeline::RunConfig c;
  c.name = "fixture";
  c.seed = seed;
  c.work_dir = work;
  c.dataset.tag = "block-fixture";
  c.dataset.raw = raw;
  c.dataset.format = data::Format::kGenericTsv;
  c.sampling.plan.strategy = sampling::Strategy::kAll;
  c.sampling.plan.seed = seed;
  c.recommender.model = models::ModelKind::kMf;
  c.recommender.train.epochs = 30;
  c.recommender.train.batch_size = 256;
  c.recommender.train.learning_rate = 5e-3;
  c.recommender.train.seed = seed;
  c.lists.n = 10;
  c.lists.train.seed = seed;
  c.prompts.prompts.seed = seed;
  c.complete.backend.kind = backend;
  c.complete.backend.seed = seed;
  return c;
}

fs::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  const fs::path p = fs::temp_directory_path() /
                     ("recrank-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace recrank::testing
