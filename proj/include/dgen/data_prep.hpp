#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgen/error.hpp"
#include "dgen/text.hpp"

namespace dgen {

struct CaptionGroup {
  std::string image_id;
  std::vector<std::string> captions;
};

struct ParallelPair {
  Tokens source;
  Tokens target;

  bool operator==(const ParallelPair&) const = default;
};

struct ParallelCorpus {
  std::string split;
  std::vector<ParallelPair> pairs;
};

struct CorpusSplits {
  ParallelCorpus train{"train", {}};
  ParallelCorpus valid{"valid", {}};
  ParallelCorpus test{"test", {}};
  std::size_t skipped = 0;  // groups with too few captions, or records filtered out
};

struct MscocoConfig {
  std::size_t test_size = 20000;
  std::size_t valid_size = 10000;
  std::size_t max_len = 15;
  std::size_t retained = 4;  // captions kept per image
};

struct QuoraConfig {
  std::size_t train_size = 145000;
  std::size_t valid_size = 5000;
  std::size_t test_size = 4000;
  std::size_t max_len = 30;
};

inline Tokens truncate(Tokens toks, std::size_t max_len) {
  if (toks.size() > max_len) toks.resize(max_len);
  return toks;
}

/// Accepts a JSON array of {image_id, caption}, or a COCO annotation object
/// whose "annotations" member is such an array. Groups keep first-seen order.
inline std::vector<CaptionGroup> parse_caption_groups(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::MalformedRecord, std::string("caption file: ") + ex.what());
  }
  const nlohmann::json& arr = j.is_object() && j.contains("annotations") ? j.at("annotations") : j;
  if (!arr.is_array()) throw Error(ErrorCode::MalformedRecord, "caption file must be an array of {image_id, caption}");
  std::vector<CaptionGroup> groups;
  std::map<std::string, std::size_t> where;
  for (const auto& rec : arr) {
    if (!rec.is_object() || !rec.contains("image_id") || !rec.contains("caption") || !rec.at("caption").is_string())
      throw Error(ErrorCode::MalformedRecord, "caption record needs image_id and caption: " + rec.dump());
    const auto& idv = rec.at("image_id");
    const std::string id = idv.is_string() ? idv.get<std::string>() : idv.dump();
    auto [it, inserted] = where.emplace(id, groups.size());
    if (inserted) groups.push_back({id, {}});
    groups[it->second].captions.push_back(rec.at("caption").get<std::string>());
  }
  return groups;
}

/// Per image: keep `retained` captions chosen uniformly at random when there
/// are more, truncate each to max_len tokens and form every ordered pair.
/// Images are shuffled and assigned whole to test, then valid, then train;
/// the image that crosses a split boundary contributes only the pairs needed
/// to fill that split exactly, and its remaining pairs are dropped.
inline CorpusSplits make_mscoco_pairs(const std::vector<CaptionGroup>& groups, std::uint64_t seed,
                                      const MscocoConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  CorpusSplits out;
  std::vector<std::vector<ParallelPair>> per_group;
  for (const auto& g : groups) {
    if (g.captions.size() < 2) {
      ++out.skipped;
      continue;
    }
    std::vector<Tokens> caps;
    for (const auto& c : g.captions) caps.push_back(truncate(tokenize(c), cfg.max_len));
    while (caps.size() > cfg.retained) {
      std::uniform_int_distribution<std::size_t> pick(0, caps.size() - 1);
      caps.erase(caps.begin() + static_cast<std::ptrdiff_t>(pick(rng)));
    }
    std::vector<ParallelPair> pairs;
    for (std::size_t i = 0; i < caps.size(); ++i)
      for (std::size_t j = 0; j < caps.size(); ++j)
        if (i != j) pairs.push_back({caps[i], caps[j]});
    per_group.push_back(std::move(pairs));
  }
  std::vector<std::size_t> order(per_group.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  for (auto gi : order) {
    auto& pairs = per_group[gi];
    ParallelCorpus* dest = &out.train;
    std::size_t room = pairs.size();
    if (out.test.pairs.size() < cfg.test_size) {
      dest = &out.test;
      room = cfg.test_size - out.test.pairs.size();
    } else if (out.valid.pairs.size() < cfg.valid_size) {
      dest = &out.valid;
      room = cfg.valid_size - out.valid.pairs.size();
    }
    const std::size_t n = std::min(room, pairs.size());
    dest->pairs.insert(dest->pairs.end(), pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

struct QuoraRecord {
  std::string question1;
  std::string question2;
  bool is_duplicate = false;
};

/// Tab-separated text whose header names question1, question2 and
/// is_duplicate columns. Rows with the wrong field count are skipped.
inline std::vector<QuoraRecord> parse_quora_records(const std::vector<std::string>& lines,
                                                    std::size_t* skipped = nullptr) {
  if (lines.empty()) throw Error(ErrorCode::MalformedRecord, "quora file is empty");
  auto header = split_on(lines[0], "\t");
  auto col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::MalformedRecord, "quora header lacks column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c1 = col("question1"), c2 = col("question2"), cd = col("is_duplicate");
  std::vector<QuoraRecord> out;
  std::size_t bad = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_on(lines[i], "\t");
    if (f.size() != header.size()) {
      ++bad;
      continue;
    }
    const auto d = trim(f[cd]);
    out.push_back({f[c1], f[c2], d == "1" || to_lower(d) == "true"});
  }
  if (skipped) *skipped = bad;
  return out;
}

/// Shuffles and splits into exact train/valid/test counts. When the data is
/// smaller than the requested total, counts shrink proportionally.
inline CorpusSplits split_pairs(std::vector<ParallelPair> pairs, std::uint64_t seed, std::size_t train_size,
                                std::size_t valid_size, std::size_t test_size) {
  std::mt19937_64 rng(seed);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  const std::size_t total = train_size + valid_size + test_size;
  if (pairs.size() < total && total > 0) {
    const double f = static_cast<double>(pairs.size()) / static_cast<double>(total);
    test_size = static_cast<std::size_t>(std::floor(static_cast<double>(test_size) * f));
    valid_size = static_cast<std::size_t>(std::floor(static_cast<double>(valid_size) * f));
    train_size = pairs.size() - test_size - valid_size;
  }
  CorpusSplits out;
  auto take = [&](ParallelCorpus& dest, std::size_t begin, std::size_t n) {
    dest.pairs.assign(pairs.begin() + static_cast<std::ptrdiff_t>(begin),
                      pairs.begin() + static_cast<std::ptrdiff_t>(begin + n));
  };
  take(out.test, 0, test_size);
  take(out.valid, test_size, valid_size);
  take(out.train, test_size + valid_size, train_size);
  return out;
}

/// Keeps duplicate pairs whose sides are both within max_len tokens.
inline CorpusSplits make_quora_pairs(const std::vector<QuoraRecord>& records, std::uint64_t seed,
                                     const QuoraConfig& cfg = {}) {
  std::vector<ParallelPair> kept;
  std::size_t dropped = 0;
  for (const auto& r : records) {
    if (!r.is_duplicate) {
      ++dropped;
      continue;
    }
    auto a = tokenize(r.question1), b = tokenize(r.question2);
    if (a.empty() || b.empty() || a.size() > cfg.max_len || b.size() > cfg.max_len) {
      ++dropped;
      continue;
    }
    kept.push_back({std::move(a), std::move(b)});
  }
  auto out = split_pairs(std::move(kept), seed, cfg.train_size, cfg.valid_size, cfg.test_size);
  out.skipped = dropped;
  return out;
}

/// Raw "source<TAB>target" lines, tokenized.
inline std::vector<ParallelPair> parse_raw_pairs(const std::vector<std::string>& lines) {
  std::vector<ParallelPair> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto f = split_on(lines[i], "\t");
    if (f.size() != 2)
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(i + 1) + ": expected source<TAB>target");
    out.push_back({tokenize(f[0]), tokenize(f[1])});
  }
  return out;
}

/// One pair per line, tokens space-joined, sides tab-separated.
inline std::string pairs_to_text(const ParallelCorpus& corpus) {
  std::string out;
  for (const auto& p : corpus.pairs) out += join(p.source) + '\t' + join(p.target) + '\n';
  return out;
}

inline ParallelCorpus read_pair_file(const std::string& path, std::string split = "") {
  ParallelCorpus c{std::move(split), {}};
  auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_on(lines[i], "\t");
    if (f.size() != 2)
      throw Error(ErrorCode::MalformedRecord, path + ":" + std::to_string(i + 1) + ": expected source<TAB>target");
    c.pairs.push_back({split_whitespace(f[0]), split_whitespace(f[1])});
  }
  return c;
}

}  // namespace dgen
