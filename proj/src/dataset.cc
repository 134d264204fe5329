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

#include "recrank/dataset.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_set>

#include "recrank/rng.h"

namespace recrank::data {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string& Catalog::title(const std::string& item_id) const {
  auto it = titles.find(item_id);
  if (it == titles.end()) throw DataError("no title for item " + item_id);
  return it->second;
}

Format parse_format(std::string_view tag) {
  if (tag == "ml-100k") return Format::kMl100k;
  if (tag == "ml-1m") return Format::kMl1m;
  if (tag == "bookcrossing") return Format::kBookCrossing;
  if (tag == "amazon-music") return Format::kAmazonMusic;
  if (tag == "generic-tsv") return Format::kGenericTsv;
  throw InvalidArgument("unknown dataset format '" + std::string(tag) + "'");
}

std::string_view format_tag(Format f) {
  switch (f) {
    case Format::kMl100k:
      return "ml-100k";
    case Format::kMl1m:
      return "ml-1m";
    case Format::kBookCrossing:
      return "bookcrossing";
    case Format::kAmazonMusic:
      return "amazon-music";
    case Format::kGenericTsv:
      return "generic-tsv";
  }
  return "generic-tsv";
}

RatingScale RatingScale::for_format(Format f) {
  return f == Format::kBookCrossing ? ten_point() : five_point();
}

namespace {

std::vector<std::string> split_on(std::string_view line, std::string_view sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
  return out;
}

std::string unquote(std::string_view s) {
  std::string t = trim(s);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
  return t;
}

bool parse_double(std::string_view s, double& out) {
  std::string t = trim(s);
  if (t.empty()) return false;
  char* end = nullptr;
  out = std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size() && std::isfinite(out);
}

bool parse_int64(std::string_view s, int64_t& out) {
  std::string t = trim(s);
  if (t.empty()) return false;
  // Some dumps store integral timestamps as floats ("881250949.0").
  double d = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec == std::errc() && p == t.data() + t.size()) return true;
  if (!parse_double(t, d) || d != std::floor(d)) return false;
  out = static_cast<int64_t>(d);
  return true;
}

struct RowSink {
  LoadResult& result;
  RatingScale scale;
  bool require_timestamp;
  std::unordered_map<std::string, size_t> index;  // user \x1f item -> position

  void reject(size_t line_no, const std::string& why) {
    result.diagnostics.push_back("line " + std::to_string(line_no) + ": " + why);
  }

  void add(size_t line_no, std::string user, std::string item, double rating, int64_t ts) {
    user = trim(user);
    item = trim(item);
    if (user.empty() || item.empty()) return reject(line_no, "empty user or item id");
    if (rating < scale.min || rating > scale.max) {
      return reject(line_no, "rating " + format_double(rating) + " outside scale");
    }
    if (require_timestamp && ts <= 0) return reject(line_no, "non-positive timestamp");
    std::string key = user + '\x1f' + item;
    auto it = index.find(key);
    if (it != index.end()) {
      Interaction& prev = result.interactions[it->second];
      ++result.duplicates_collapsed;
      if (ts >= prev.timestamp) {
        prev.rating = rating;
        prev.timestamp = ts;
      }
      return;
    }
    index.emplace(std::move(key), result.interactions.size());
    result.interactions.push_back(Interaction{std::move(user), std::move(item), rating, ts, false});
  }
};

std::ifstream open_or_throw(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  return in;
}

fs::path resolve(const fs::path& path, std::string_view default_name) {
  if (fs::is_directory(path)) return path / std::string(default_name);
  return path;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

void load_title_sidecar(const fs::path& p, Catalog& cat) {
  auto in = open_or_throw(p);
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    std::string id = trim(line.substr(0, tab));
    std::string title = trim(latin1_to_utf8(line.substr(tab + 1)));
    if (id == "item_id") continue;
    if (!id.empty() && !title.empty()) cat.titles[id] = title;
  }
}

void load_ml100k(const fs::path& path, RowSink& sink) {
  const fs::path ratings = resolve(path, "u.data");
  auto in = open_or_throw(ratings);
  std::string line;
  size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    strip_cr(line);
    if (trim(line).empty()) continue;
    auto f = split_on(line, "\t");
    double r = 0;
    int64_t ts = 0;
    if (f.size() != 4 || !parse_double(f[2], r) || !parse_int64(f[3], ts)) {
      sink.reject(no, "expected user<TAB>item<TAB>rating<TAB>timestamp");
      continue;
    }
    sink.add(no, f[0], f[1], r, ts);
  }
  const fs::path items = ratings.parent_path() / "u.item";
  if (fs::exists(items)) {
    auto it = open_or_throw(items);
    size_t n = 0;
    while (std::getline(it, line)) {
      strip_cr(line);
      auto f = split_on(line, "|");
      if (f.size() < 2) continue;
      sink.result.catalog.titles[trim(f[0])] = trim(latin1_to_utf8(f[1]));
      ++n;
    }
    sink.result.item_universe = n;
  }
}

void load_ml1m(const fs::path& path, RowSink& sink) {
  const fs::path ratings = resolve(path, "ratings.dat");
  auto in = open_or_throw(ratings);
  std::string line;
  size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    strip_cr(line);
    if (trim(line).empty()) continue;
    auto f = split_on(line, "::");
    double r = 0;
    int64_t ts = 0;
    if (f.size() != 4 || !parse_double(f[2], r) || !parse_int64(f[3], ts)) {
      sink.reject(no, "expected user::item::rating::timestamp");
      continue;
    }
    sink.add(no, f[0], f[1], r, ts);
  }
  const fs::path movies = ratings.parent_path() / "movies.dat";
  if (fs::exists(movies)) {
    auto it = open_or_throw(movies);
    size_t max_id = 0;
    while (std::getline(it, line)) {
      strip_cr(line);
      auto f = split_on(line, "::");
      if (f.size() < 2) continue;
      std::string id = trim(f[0]);
      sink.result.catalog.titles[id] = trim(latin1_to_utf8(f[1]));
      size_t v = 0;
      auto [p, ec] = std::from_chars(id.data(), id.data() + id.size(), v);
      if (ec == std::errc()) max_id = std::max(max_id, v);
    }
    sink.result.item_universe = max_id;
  }
}

void load_bookcrossing(const fs::path& path, RowSink& sink) {
  const fs::path ratings = resolve(path, "BX-Book-Ratings.csv");
  auto in = open_or_throw(ratings);
  std::string line;
  size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    strip_cr(line);
    if (trim(line).empty()) continue;
    auto f = split_on(line, ";");
    if (no == 1 && !f.empty() && unquote(f[0]) == "User-ID") continue;
    double r = 0;
    if (f.size() != 3 || !parse_double(unquote(f[2]), r)) {
      sink.reject(no, "expected \"user\";\"isbn\";\"rating\"");
      continue;
    }
    // Rating 0 marks implicit feedback; only explicit 1-10 ratings are kept.
    if (r == 0.0) continue;
    sink.add(no, unquote(f[0]), unquote(f[1]), r, 0);
  }
  const fs::path books = ratings.parent_path() / "BX-Books.csv";
  if (fs::exists(books)) {
    auto it = open_or_throw(books);
    bool first = true;
    while (std::getline(it, line)) {
      strip_cr(line);
      if (first) {
        first = false;
        if (line.find("ISBN") != std::string::npos) continue;
      }
      auto f = split_on(line, "\";\"");
      if (f.size() < 2) continue;
      sink.result.catalog.titles[unquote(f[0] + "\"")] = trim(latin1_to_utf8(unquote("\"" + f[1] + "\"")));
    }
  }
}

void load_amazon(const fs::path& path, RowSink& sink) {
  auto in = open_or_throw(path);
  std::string line;
  size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    strip_cr(line);
    std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '{') {
      // Review dump: reviewerID / asin / overall / unixReviewTime.
      try {
        json j = json::parse(t);
        sink.add(no, j.at("reviewerID").get<std::string>(), j.at("asin").get<std::string>(),
                 j.at("overall").get<double>(), j.at("unixReviewTime").get<int64_t>());
        if (j.contains("title") && j["title"].is_string()) {
          sink.result.catalog.titles.emplace(trim(j["asin"].get<std::string>()), trim(j["title"].get<std::string>()));
        }
      } catch (const json::exception& e) {
        sink.reject(no, std::string("bad review record: ") + e.what());
      }
      continue;
    }
    auto f = split_on(t, ",");
    double r = 0;
    int64_t ts = 0;
    if (f.size() != 4 || !parse_double(f[2], r) || !parse_int64(f[3], ts)) {
      sink.reject(no, "expected user,item,rating,unix-time");
      continue;
    }
    sink.add(no, f[0], f[1], r, ts);
  }
}

void load_generic(const fs::path& path, RowSink& sink) {
  auto in = open_or_throw(path);
  std::string line;
  size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    strip_cr(line);
    if (trim(line).empty()) continue;
    auto f = split_on(line, "\t");
    if (no == 1 && !f.empty() && trim(f[0]) == "user_id") continue;
    double r = 0;
    int64_t ts = 0;
    if (f.size() < 4 || !parse_double(f[2], r) || !parse_int64(f[3], ts)) {
      sink.reject(no, "expected user<TAB>item<TAB>rating<TAB>timestamp");
      continue;
    }
    sink.add(no, f[0], f[1], r, ts);
  }
}

}  // namespace

LoadResult load_raw(const fs::path& path, Format format, const LoadOptions& opts) {
  if (!fs::exists(path)) throw DataError("raw dataset not found: " + path.string());
  LoadResult result;
  RowSink sink{result, RatingScale::for_format(format), format != Format::kBookCrossing, {}};
  switch (format) {
    case Format::kMl100k:
      load_ml100k(path, sink);
      break;
    case Format::kMl1m:
      load_ml1m(path, sink);
      break;
    case Format::kBookCrossing:
      load_bookcrossing(path, sink);
      break;
    case Format::kAmazonMusic:
      load_amazon(resolve(path, "ratings.csv"), sink);
      break;
    case Format::kGenericTsv:
      load_generic(resolve(path, "interactions.tsv"), sink);
      break;
  }
  if (result.diagnostics.size() > opts.max_malformed) {
    std::ostringstream msg;
    msg << result.diagnostics.size() << " malformed rows in " << path.string() << " (threshold "
        << opts.max_malformed << ")";
    for (size_t i = 0; i < std::min<size_t>(5, result.diagnostics.size()); ++i) msg << "; " << result.diagnostics[i];
    throw DataError(msg.str());
  }
  std::optional<fs::path> sidecar = opts.catalog_path;
  if (!sidecar && (format == Format::kGenericTsv || format == Format::kAmazonMusic)) {
    fs::path dir = fs::is_directory(path) ? path : path.parent_path();
    for (const char* name : {"items.tsv", "titles.tsv"}) {
      if (fs::exists(dir / name) && fs::absolute(dir / name) != fs::absolute(path)) {
        sidecar = dir / name;
        break;
      }
    }
  }
  if (sidecar) load_title_sidecar(*sidecar, result.catalog);
  size_t untitled = 0;
  for (const auto& x : result.interactions) {
    auto it = result.catalog.titles.find(x.item_id);
    if (it == result.catalog.titles.end() || it->second.empty()) {
      result.catalog.titles[x.item_id] = x.item_id;
      ++untitled;
    }
  }
  if (untitled > 0) spdlog::warn("{} items have no title; using item ids as titles", untitled);
  if (result.duplicates_collapsed > 0) {
    spdlog::info("collapsed {} duplicate (user,item) rows keeping the latest", result.duplicates_collapsed);
  }
  return result;
}

Interactions k_core_filter(const Interactions& interactions, size_t k) {
  if (k == 0) throw InvalidArgument("k-core requires k >= 1");
  std::unordered_map<std::string, std::vector<size_t>> by_user;
  std::unordered_map<std::string, std::vector<size_t>> by_item;
  for (size_t i = 0; i < interactions.size(); ++i) {
    by_user[interactions[i].user_id].push_back(i);
    by_item[interactions[i].item_id].push_back(i);
  }
  std::vector<char> alive(interactions.size(), 1);
  std::unordered_map<std::string, size_t> user_deg;
  std::unordered_map<std::string, size_t> item_deg;
  for (const auto& [u, rows] : by_user) user_deg[u] = rows.size();
  for (const auto& [it, rows] : by_item) item_deg[it] = rows.size();

  // Peeling: a node leaves the queue once, removing all its live edges.
  std::vector<std::pair<bool, std::string>> queue;  // (is_user, id)
  std::unordered_set<std::string> removed_users;
  std::unordered_set<std::string> removed_items;
  for (const auto& [u, d] : user_deg) {
    if (d < k) {
      queue.emplace_back(true, u);
      removed_users.insert(u);
    }
  }
  for (const auto& [it, d] : item_deg) {
    if (d < k) {
      queue.emplace_back(false, it);
      removed_items.insert(it);
    }
  }
  while (!queue.empty()) {
    auto [is_user, id] = std::move(queue.back());
    queue.pop_back();
    const auto& rows = is_user ? by_user[id] : by_item[id];
    for (size_t r : rows) {
      if (!alive[r]) continue;
      alive[r] = 0;
      const auto& other = is_user ? interactions[r].item_id : interactions[r].user_id;
      auto& deg = is_user ? item_deg[other] : user_deg[other];
      auto& removed = is_user ? removed_items : removed_users;
      --deg;
      if (deg < k && removed.insert(other).second) queue.emplace_back(!is_user, other);
    }
  }
  Interactions out;
  for (size_t i = 0; i < interactions.size(); ++i) {
    if (alive[i]) out.push_back(interactions[i]);
  }
  return out;
}

bool has_real_timestamps(const Interactions& interactions) {
  return std::any_of(interactions.begin(), interactions.end(),
                     [](const Interaction& x) { return x.timestamp > 0 && !x.simulated_ts; });
}

Interactions simulate_timestamps(const Interactions& interactions, uint64_t seed, bool force) {
  if (!force && has_real_timestamps(interactions)) {
    throw InvalidArgument("refusing to overwrite real timestamps (pass force to override)");
  }
  // Uniform without replacement over [1, 2^40]; the range dwarfs any
  // dataset so rejection of repeats terminates quickly.
  constexpr uint64_t kRange = uint64_t{1} << 40;
  Rng rng(seed);
  std::unordered_set<int64_t> used;
  used.reserve(interactions.size() * 2);
  Interactions out = interactions;
  for (auto& x : out) {
    int64_t ts;
    do {
      ts = static_cast<int64_t>(rng.below(kRange)) + 1;
    } while (!used.insert(ts).second);
    x.timestamp = ts;
    x.simulated_ts = true;
  }
  return out;
}

DatasetSplit temporal_split(const Interactions& interactions) {
  for (const auto& x : interactions) {
    if (x.timestamp <= 0) throw InvalidArgument("temporal split requires timestamps (user " + x.user_id + ")");
  }
  std::map<std::string, std::vector<size_t>, IdLess> by_user;
  for (size_t i = 0; i < interactions.size(); ++i) by_user[interactions[i].user_id].push_back(i);
  std::vector<char> is_test(interactions.size(), 0);
  DatasetSplit split;
  for (const auto& [user, rows] : by_user) {
    if (rows.size() < 2) {
      split.train_only_users.push_back(user);
      continue;
    }
    size_t last = rows.front();
    for (size_t r : rows) {
      if (interactions[r].timestamp >= interactions[last].timestamp) last = r;
    }
    is_test[last] = 1;
    split.per_user_test_item[user] = interactions[last].item_id;
  }
  for (size_t i = 0; i < interactions.size(); ++i) {
    (is_test[i] ? split.test : split.train).push_back(interactions[i]);
  }
  if (!split.train_only_users.empty()) {
    spdlog::info("{} single-interaction users kept train-only", split.train_only_users.size());
  }
  if (split.test.empty() && !interactions.empty()) spdlog::warn("temporal split produced an empty test set");
  return split;
}

Preference label_preference(double rating, const RatingScale& scale) {
  if (!(rating >= scale.min && rating <= scale.max)) {
    throw InvalidArgument("rating " + format_double(rating) + " outside scale [" + format_double(scale.min) + ", " +
                          format_double(scale.max) + "]");
  }
  if (rating >= scale.liked_min) return Preference::kLiked;
  if (rating <= scale.disliked_max) return Preference::kDisliked;
  return Preference::kNeutral;
}

std::vector<Preference> label_preferences(const Interactions& interactions, const RatingScale& scale) {
  std::vector<Preference> out;
  out.reserve(interactions.size());
  for (const auto& x : interactions) out.push_back(label_preference(x.rating, scale));
  return out;
}

DatasetStats compute_stats(const Interactions& interactions, std::optional<size_t> item_universe) {
  std::unordered_set<std::string> users;
  std::unordered_set<std::string> items;
  for (const auto& x : interactions) {
    users.insert(x.user_id);
    items.insert(x.item_id);
  }
  DatasetStats s;
  s.n_users = users.size();
  s.n_items = item_universe ? std::max(*item_universe, items.size()) : items.size();
  s.n_interactions = interactions.size();
  if (s.n_users > 0 && s.n_items > 0) {
    s.density = static_cast<double>(s.n_interactions) / (static_cast<double>(s.n_users) * static_cast<double>(s.n_items));
  }
  return s;
}

void write_interactions(const fs::path& path, const Interactions& interactions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "user_id\titem_id\trating\ttimestamp\tsimulated_ts\n";
  for (const auto& x : interactions) {
    out << x.user_id << '\t' << x.item_id << '\t' << format_double(x.rating) << '\t' << x.timestamp << '\t'
        << (x.simulated_ts ? 1 : 0) << '\n';
  }
}

Interactions read_interactions(const fs::path& path) {
  auto in = open_or_throw(path);
  std::string line;
  Interactions out;
  size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    strip_cr(line);
    if (line.empty() || (no == 1 && line.rfind("user_id", 0) == 0)) continue;
    auto f = split_on(line, "\t");
    Interaction x;
    if (f.size() != 5 || !parse_double(f[2], x.rating) || !parse_int64(f[3], x.timestamp)) {
      throw DataError(path.string() + ": line " + std::to_string(no) + ": malformed canonical row");
    }
    x.user_id = f[0];
    x.item_id = f[1];
    x.simulated_ts = f[4] == "1";
    out.push_back(std::move(x));
  }
  return out;
}

void write_catalog(const fs::path& path, const Catalog& catalog) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "item_id\ttitle\n";
  for (const auto& [id, title] : catalog.titles) out << id << '\t' << title << '\n';
}

Catalog read_catalog(const fs::path& path) {
  Catalog c;
  load_title_sidecar(path, c);
  return c;
}

namespace {

// Six decimals, truncated: the published statistics tables truncate.
std::string density_6dp(double d) {
  double t = std::floor(d * 1e6 + 1e-9) / 1e6;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", t);
  return buf;
}

}  // namespace

void write_stats(const fs::path& path, const DatasetStats& s) {
  json j{{"n_users", s.n_users},
         {"n_items", s.n_items},
         {"n_interactions", s.n_interactions},
         {"density", s.density},
         {"density_6dp", density_6dp(s.density)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

DatasetStats read_stats(const fs::path& path) {
  auto in = open_or_throw(path);
  json j = json::parse(in);
  return DatasetStats{j.at("n_users").get<size_t>(), j.at("n_items").get<size_t>(),
                      j.at("n_interactions").get<size_t>(), j.at("density").get<double>()};
}

PreparedDataset prepare(const fs::path& raw, const PrepareOptions& opts) {
  LoadResult loaded = load_raw(raw, opts.format, opts.load);
  PreparedDataset ds;
  ds.format = opts.format;
  ds.scale = RatingScale::for_format(opts.format);
  ds.interactions = std::move(loaded.interactions);
  std::optional<size_t> universe = loaded.item_universe;
  if (opts.k_core > 1) {
    ds.interactions = k_core_filter(ds.interactions, opts.k_core);
    universe.reset();
  }
  if (!ds.interactions.empty() && (!has_real_timestamps(ds.interactions) || opts.force_simulated_timestamps)) {
    ds.interactions = simulate_timestamps(ds.interactions, opts.seed, opts.force_simulated_timestamps);
  }
  for (const auto& x : ds.interactions) ds.catalog.titles[x.item_id] = loaded.catalog.title(x.item_id);
  ds.stats = compute_stats(ds.interactions, universe);
  ds.split = temporal_split(ds.interactions);
  return ds;
}

void write_prepared(const PreparedPaths& out, const PreparedDataset& ds) {
  fs::create_directories(out.dir);
  write_interactions(out.interactions(), ds.interactions);
  write_catalog(out.catalog(), ds.catalog);
  write_stats(out.stats(), ds.stats);
  write_interactions(out.train(), ds.split.train);
  write_interactions(out.test(), ds.split.test);
  json info{{"format", std::string(format_tag(ds.format))},
            {"scale", {{"min", ds.scale.min}, {"max", ds.scale.max}, {"liked_min", ds.scale.liked_min},
                       {"disliked_max", ds.scale.disliked_max}}}};
  std::ofstream f(out.info(), std::ios::binary);
  f << info.dump(2) << '\n';
}

DatasetSplit read_split(const PreparedPaths& in) {
  DatasetSplit split;
  split.train = read_interactions(in.train());
  split.test = read_interactions(in.test());
  for (const auto& x : split.test) split.per_user_test_item[x.user_id] = x.item_id;
  return split;
}

PreparedDataset read_prepared(const PreparedPaths& in) {
  PreparedDataset ds;
  ds.interactions = read_interactions(in.interactions());
  ds.catalog = read_catalog(in.catalog());
  ds.stats = read_stats(in.stats());
  ds.split = read_split(in);
  if (fs::exists(in.info())) {
    auto f = open_or_throw(in.info());
    json info = json::parse(f);
    ds.format = parse_format(info.at("format").get<std::string>());
    const auto& sc = info.at("scale");
    ds.scale = RatingScale{sc.at("min").get<double>(), sc.at("max").get<double>(), sc.at("liked_min").get<double>(),
                           sc.at("disliked_max").get<double>()};
  } else {
    ds.scale = RatingScale::five_point();
  }
  return ds;
}

}  // namespace recrank::data
