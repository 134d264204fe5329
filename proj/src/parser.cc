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


#include "recrank/parser.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace recrank::parse {

namespace fs = std::filesystem;
using nlohmann::json;
using prompts::Kind;

std::string_view status_tag(Status s) {
  switch (s) {
    case Status::kOk:
      return "ok";
    case Status::kPartial:
      return "partial";
    case Status::kFailed:
      return "failed";
  }
  return "failed";
}

Status parse_status(std::string_view tag) {
  if (tag == "ok") return Status::kOk;
  if (tag == "partial") return Status::kPartial;
  if (tag == "failed") return Status::kFailed;
  throw InvalidArgument("unknown parse status '" + std::string(tag) + "'");
}

std::string normalize_title(std::string_view s) {
  std::string out;
  bool space = true;
  for (unsigned char c : s) {
    const bool word = std::isalnum(c) || c >= 0x80;
    if (word) {
      out += static_cast<char>(std::tolower(c));
      space = false;
    } else if (!space) {
      out += ' ';
      space = true;
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

namespace {

std::set<std::string> tokens(std::string_view s) {
  std::set<std::string> t;
  std::istringstream in{normalize_title(s)};
  std::string w;
  while (in >> w) t.insert(w);
  return t;
}

// Strips list bullets, emphasis markers and quotes around a title.
std::string clean_segment(std::string_view s) {
  std::string t = trim(s.substr(0, s.find('\n')));
  auto strip = [&t](std::string_view chars) {
    while (!t.empty() && chars.find(t.front()) != std::string_view::npos) t.erase(t.begin());
    while (!t.empty() && chars.find(t.back()) != std::string_view::npos) t.pop_back();
  };
  strip("*_\"'`-• \t\r,;");
  return t;
}

std::vector<std::string> split_segments(std::string_view raw) {
  static const std::regex marker(R"((^|\s)\d{1,2}[.)]\s+)");
  const std::string text(raw);
  std::vector<std::pair<size_t, size_t>> marks;  // (match start, content start)
  for (auto it = std::sregex_iterator(text.begin(), text.end(), marker); it != std::sregex_iterator(); ++it) {
    marks.emplace_back(static_cast<size_t>(it->position()), static_cast<size_t>(it->position() + it->length()));
  }
  std::vector<std::string> segs;
  if (!marks.empty()) {
    for (size_t i = 0; i < marks.size(); ++i) {
      const size_t end = i + 1 < marks.size() ? marks[i + 1].first : text.size();
      segs.push_back(clean_segment(std::string_view(text).substr(marks[i].second, end - marks[i].second)));
    }
  } else {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      std::string c = clean_segment(line);
      if (!c.empty()) segs.push_back(std::move(c));
    }
  }
  return segs;
}

}  // namespace

double token_set_similarity(std::string_view a, std::string_view b) {
  const auto ta = tokens(a), tb = tokens(b);
  if (ta.empty() && tb.empty()) return 1.0;
  size_t inter = 0;
  for (const auto& t : ta) inter += tb.count(t);
  return static_cast<double>(inter) / static_cast<double>(ta.size() + tb.size() - inter);
}

ParsedResult parse_listwise(std::string_view raw, const std::vector<std::string>& candidates,
                            const std::vector<std::string>& hint_order, const data::Catalog& catalog) {
  ParsedResult r;
  r.kind = Kind::kListwise;
  const size_t n = candidates.size();
  std::vector<std::string> title(n), norm(n);
  for (size_t i = 0; i < n; ++i) {
    title[i] = catalog.title(candidates[i]);
    norm[i] = normalize_title(title[i]);
  }
  std::vector<char> used(n, 0);
  std::vector<size_t> order;
  size_t unmatched = 0, duplicates = 0;

  // Picks the first unused candidate among equally titled matches.
  auto take = [&](const std::vector<size_t>& hits) {
    for (size_t h : hits) {
      if (!used[h]) {
        used[h] = 1;
        order.push_back(h);
        return;
      }
    }
    ++duplicates;
  };
  auto matching = [&](auto pred) {
    std::vector<size_t> hits;
    for (size_t i = 0; i < n; ++i) {
      if (pred(i)) hits.push_back(i);
    }
    return hits;
  };

  for (const auto& seg : split_segments(raw)) {
    const std::string ns = normalize_title(seg);
    if (ns.empty()) continue;
    auto hits = matching([&](size_t i) { return title[i] == seg; });
    if (hits.empty()) hits = matching([&](size_t i) { return norm[i] == ns; });
    if (hits.empty()) {
      double best = 0.0;
      for (size_t i = 0; i < n; ++i) best = std::max(best, token_set_similarity(seg, title[i]));
      if (best >= kFuzzyThreshold) {
        hits = matching([&](size_t i) { return token_set_similarity(seg, title[i]) == best; });
        // Distinct titles tied at the top score are ambiguous.
        for (size_t h : hits) {
          if (norm[h] != norm[hits.front()]) {
            hits.clear();
            break;
          }
        }
      }
    }
    if (!hits.empty()) {
      take(hits);
      continue;
    }
    // Delimited lines naming several titles: take them in textual order.
    const std::string padded = " " + ns + " ";
    std::vector<std::pair<size_t, size_t>> found;  // (position, candidate)
    for (size_t i = 0; i < n; ++i) {
      if (norm[i].empty()) continue;
      const size_t pos = padded.find(" " + norm[i] + " ");
      if (pos != std::string::npos) found.emplace_back(pos, i);
    }
    if (found.empty()) {
      ++unmatched;
      continue;
    }
    std::sort(found.begin(), found.end());
    for (const auto& [pos, i] : found) {
      take(matching([&](size_t j) { return norm[j] == norm[i]; }));
    }
  }

  if (order.empty()) {
    r.status = Status::kFailed;
    r.note = "no candidate title recognised";
    return r;
  }
  const size_t resolved = order.size();
  for (size_t i : order) r.items.push_back(candidates[i]);
  std::set<std::string> have(r.items.begin(), r.items.end());
  for (const auto& h : hint_order) {
    if (have.insert(h).second && std::find(candidates.begin(), candidates.end(), h) != candidates.end()) {
      r.items.push_back(h);
    }
  }
  for (const auto& c : candidates) {
    if (have.insert(c).second) r.items.push_back(c);
  }
  // The prompt asks for five titles; fewer counts as a repair.
  const size_t wanted = std::min<size_t>(5, n);
  if (unmatched == 0 && duplicates == 0 && resolved >= wanted) {
    r.status = Status::kOk;
  } else {
    r.status = Status::kPartial;
    r.note = std::to_string(resolved) + " resolved, " + std::to_string(unmatched) + " unmatched, " +
             std::to_string(duplicates) + " duplicate";
  }
  return r;
}

ParsedResult parse_pointwise(std::string_view raw) {
  static const std::regex number(R"([-+]?\d+(?:\.\d+)?)");
  ParsedResult r;
  r.kind = Kind::kPointwise;
  const std::string text(raw);
  std::smatch m;
  if (!std::regex_search(text, m, number)) {
    r.status = Status::kFailed;
    r.note = "no numeric literal";
    return r;
  }
  const double v = std::stod(m.str());
  const double clamped = std::clamp(v, 1.0, 5.0);
  r.score = clamped;
  r.status = clamped == v ? Status::kOk : Status::kPartial;
  if (clamped != v) r.note = "clamped " + m.str();
  return r;
}

ParsedResult parse_pairwise(std::string_view raw) {
  ParsedResult r;
  r.kind = Kind::kPairwise;
  r.status = Status::kFailed;
  std::string s = trim(raw);
  size_t i = 0;
  while (i < s.size() && std::string_view("*_\"'`([ \t\r\n").find(s[i]) != std::string_view::npos) ++i;
  auto word_at = [&s](size_t& k) {
    std::string w;
    while (k < s.size() && std::isalpha(static_cast<unsigned char>(s[k]))) {
      w += static_cast<char>(std::tolower(static_cast<unsigned char>(s[k])));
      ++k;
    }
    return w;
  };
  const std::string first = word_at(i);
  if (first != "yes" && first != "no") {
    r.note = "answer does not start with yes or no";
    return r;
  }
  // Ambiguous when the opposite word appears in the same sentence.
  const std::string opposite = first == "yes" ? "no" : "yes";
  while (i < s.size() && std::string_view(".!?\n").find(s[i]) == std::string_view::npos) {
    if (std::isalpha(static_cast<unsigned char>(s[i]))) {
      if (word_at(i) == opposite) {
        r.note = "both yes and no";
        return r;
      }
    } else {
      ++i;
    }
  }
  r.verdict = first == "yes" ? Verdict::kYes : Verdict::kNo;
  r.status = Status::kOk;
  return r;
}

ParsedResult parse_completion(const prompts::PromptInstance& prompt, const llm::Completion& completion,
                              const data::Catalog& catalog) {
  ParsedResult r;
  if (!completion.ok) {
    r.kind = prompt.kind;
    r.status = Status::kFailed;
    r.note = "completion failed: " + completion.error;
  } else {
    switch (prompt.kind) {
      case Kind::kListwise:
        r = parse_listwise(completion.text, prompt.payload, prompt.hint_items, catalog);
        break;
      case Kind::kPointwise:
      case Kind::kPointwiseFix:
        r = parse_pointwise(completion.text);
        break;
      case Kind::kPairwise:
        r = parse_pairwise(completion.text);
        break;
    }
  }
  r.kind = prompt.kind;
  r.prompt_id = prompt.id;
  r.user_id = prompt.user_id;
  r.payload = prompt.payload;
  r.hint_rank = prompt.hint_rank;
  return r;
}

void apply_fallback(ParsedResult& r, const prompts::PromptInstance& prompt) {
  if (r.status != Status::kFailed) return;
  switch (prompt.kind) {
    case Kind::kListwise:
      r.items = prompt.hint_items.empty() ? prompt.payload : prompt.hint_items;
      break;
    case Kind::kPointwise:
    case Kind::kPointwiseFix:
      r.score = prompt.hint_score.value_or(kNeutralScore);
      break;
    case Kind::kPairwise:
      r.verdict = !prompt.hint_items.empty() && prompt.hint_items.front() == prompt.payload.at(0) ? Verdict::kYes
                                                                                                   : Verdict::kNo;
      break;
  }
  r.fallback_applied = true;
}

json to_json(const ParsedResult& r) {
  json j = {{"prompt_id", r.prompt_id},
            {"user_id", r.user_id},
            {"kind", prompts::kind_tag(r.kind)},
            {"payload", r.payload},
            {"status", status_tag(r.status)},
            {"fallback_applied", r.fallback_applied},
            {"hint_rank", r.hint_rank}};
  if (!r.items.empty()) j["items"] = r.items;
  if (r.score) j["score"] = *r.score;
  if (r.verdict) j["verdict"] = *r.verdict == Verdict::kYes ? "yes" : "no";
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

ParsedResult parsed_from_json(const json& j) {
  ParsedResult r;
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.user_id = j.at("user_id").get<std::string>();
  r.kind = prompts::parse_kind(j.at("kind").get<std::string>());
  r.payload = j.at("payload").get<std::vector<std::string>>();
  r.status = parse_status(j.at("status").get<std::string>());
  r.fallback_applied = j.value("fallback_applied", false);
  r.hint_rank = j.value("hint_rank", size_t{0});
  if (j.contains("items")) r.items = j["items"].get<std::vector<std::string>>();
  if (j.contains("score")) r.score = j["score"].get<double>();
  if (j.contains("verdict")) r.verdict = j["verdict"].get<std::string>() == "yes" ? Verdict::kYes : Verdict::kNo;
  r.note = j.value("note", std::string{});
  return r;
}

void write_parsed(const fs::path& path, const std::vector<ParsedResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : results) out << to_json(r).dump() << '\n';
}

std::vector<ParsedResult> read_parsed(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<ParsedResult> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parsed_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace recrank::parse
