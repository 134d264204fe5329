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

#include <cstdint>
#include <filesystem>
#include <string>

#include "recrank/pipeline.h"

// Synthetic data and configs shared by the unit and acceptance suites.
namespace recrank::testing {

namespace fs = std::filesystem;

// Block-structured implicit feedback: users prefer the items of their
// own block, so a briefly trained model puts most held-out items inside
// its top-10 without always ranking them first.
struct BlockFixture {
  size_t users = 200;
  size_t blocks = 5;
  size_t items_per_block = 20;
  size_t per_user = 9;     // in-block interactions per user, last one held out
  size_t off_block = 1;    // extra interactions drawn from other blocks
  double liked_share = 0.6;
  uint64_t seed = 11;
};

// Writes interactions.tsv and items.tsv (generic-tsv layout) into dir and
// returns dir.
fs::path write_block_fixture(const fs::path& dir, const BlockFixture& spec);

// Item titles are "Item NNN"; fixed width keeps them substring-free.
std::string fixture_title(size_t item);

// Run config over a fixture: all users, MF for a few epochs, every prompt
// kind, the given backend.
pipeline::RunConfig fixture_config(const fs::path& raw, const fs::path& work, llm::BackendKind backend,
                                   uint64_t seed = 3);

// Fresh empty directory under the system temp dir.
fs::path scratch_dir(const std::string& tag);

}  // namespace recrank::testing
