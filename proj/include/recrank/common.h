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
#include <stdexcept>
#include <string>
#include <string_view>

namespace recrank {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Preconditions on arguments or configuration.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Numerical failure during training (non-finite loss etc).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Natural ordering for opaque ids: all-digit ids compare numerically,
// everything else lexicographically; digits sort before non-digits.
bool id_less(std::string_view a, std::string_view b);

struct IdLess {
  bool operator()(std::string_view a, std::string_view b) const { return id_less(a, b); }
};

std::string trim(std::string_view s);

// Converts ISO-8859-1 bytes to UTF-8. Valid UTF-8 input is returned as is.
std::string latin1_to_utf8(std::string_view s);

// Round-trippable shortest decimal rendering ("%.17g" trimmed).
std::string format_double(double v);

// Fixed one-decimal rendering used for scores ("4.0").
std::string format_score(double v);

// 64-bit FNV-1a; stable across platforms, used to derive per-key seeds.
constexpr uint64_t stable_hash64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace recrank
