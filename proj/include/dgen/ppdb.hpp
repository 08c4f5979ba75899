#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dgen/error.hpp"
#include "dgen/text.hpp"

namespace dgen {

enum class Entailment {
  Equivalence,
  ForwardEntailment,
  ReverseEntailment,
  Exclusion,
  Independent,
  OtherRelated,
};

inline const char* to_string(Entailment e) {
  switch (e) {
    case Entailment::Equivalence: return "Equivalence";
    case Entailment::ForwardEntailment: return "ForwardEntailment";
    case Entailment::ReverseEntailment: return "ReverseEntailment";
    case Entailment::Exclusion: return "Exclusion";
    case Entailment::Independent: return "Independent";
    case Entailment::OtherRelated: return "OtherRelated";
  }
  return "OtherRelated";
}

inline std::optional<Entailment> parse_entailment(std::string_view label) {
  static const std::pair<const char*, Entailment> table[] = {
      {"Equivalence", Entailment::Equivalence},
      {"ForwardEntailment", Entailment::ForwardEntailment},
      {"ReverseEntailment", Entailment::ReverseEntailment},
      {"Exclusion", Entailment::Exclusion},
      {"Independent", Entailment::Independent},
      {"OtherRelated", Entailment::OtherRelated},
  };
  for (const auto& [name, value] : table)
    if (label == name) return value;
  return std::nullopt;
}

/// One line of a PPDB release, fields in file order.
struct RawPpdbRecord {
  std::string lhs_label;
  Tokens source_phrase;
  Tokens target_phrase;
  std::map<std::string, double> features;
  std::string alignment;
  Entailment entailment = Entailment::Equivalence;

  bool operator==(const RawPpdbRecord&) const = default;
};

struct DictionaryEntry {
  std::int64_t id = 0;
  Tokens source_tokens;
  Tokens target_tokens;
  double ppdb_score = 0.0;
  Entailment entailment = Entailment::Equivalence;

  bool operator==(const DictionaryEntry&) const = default;
};

struct IngestConfig {
  std::size_t max_phrase_len = 7;
  std::string score_feature = "PPDB2.0Score";
  bool strict = false;
};

struct ParaphraseDictionary {
  std::vector<DictionaryEntry> entries;
  std::string source_digest;
  IngestConfig filter;

  std::size_t size() const { return entries.size(); }
};

inline constexpr std::string_view kPpdbDelimiter = " ||| ";

/// Parses one record. Tokens are split on single spaces and lowercased.
inline RawPpdbRecord parse_record(std::string_view line) {
  auto fields = split_on(line, kPpdbDelimiter);
  if (fields.size() != 6)
    throw Error(ErrorCode::MalformedRecord,
                "expected 6 fields, got " + std::to_string(fields.size()) + ": " + std::string(line));

  RawPpdbRecord rec;
  rec.lhs_label = fields[0];
  auto phrase = [&](const std::string& s) {
    Tokens out;
    for (auto& t : split_on(s, " "))
      if (!t.empty()) out.push_back(to_lower(t));
    if (out.empty()) throw Error(ErrorCode::MalformedRecord, "empty phrase: " + std::string(line));
    return out;
  };
  rec.source_phrase = phrase(fields[1]);
  rec.target_phrase = phrase(fields[2]);

  for (const auto& kv : split_whitespace(fields[3])) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(ErrorCode::MalformedRecord, "bad feature '" + kv + "'");
    std::string value = kv.substr(eq + 1);
    char* end = nullptr;
    double v = std::strtod(value.c_str(), &end);
    if (value.empty() || end != value.c_str() + value.size())
      throw Error(ErrorCode::MalformedRecord, "unparseable feature value '" + kv + "'");
    rec.features[kv.substr(0, eq)] = v;
  }
  rec.alignment = fields[4];
  auto ent = parse_entailment(trim(fields[5]));
  if (!ent) throw Error(ErrorCode::MalformedRecord, "unknown entailment label '" + fields[5] + "'");
  rec.entailment = *ent;
  return rec;
}

/// Inverse of parse_record for lowercase records.
inline std::string serialize_record(const RawPpdbRecord& rec) {
  std::ostringstream feats;
  feats.precision(17);
  bool first = true;
  for (const auto& [name, value] : rec.features) {
    if (!first) feats << ' ';
    first = false;
    feats << name << '=' << value;
  }
  std::string out;
  out += rec.lhs_label;
  out += kPpdbDelimiter;
  out += join(rec.source_phrase);
  out += kPpdbDelimiter;
  out += join(rec.target_phrase);
  out += kPpdbDelimiter;
  out += feats.str();
  out += kPpdbDelimiter;
  out += rec.alignment;
  out += kPpdbDelimiter;
  out += to_string(rec.entailment);
  return out;
}

/// Keeps Equivalence pairs whose phrases both fit in max_phrase_len. A record
/// without the confidence feature is dropped.
inline std::optional<DictionaryEntry> filter_record(const RawPpdbRecord& rec, const IngestConfig& cfg) {
  if (rec.entailment != Entailment::Equivalence) return std::nullopt;
  if (rec.source_phrase.empty() || rec.target_phrase.empty()) return std::nullopt;
  if (rec.source_phrase.size() > cfg.max_phrase_len || rec.target_phrase.size() > cfg.max_phrase_len)
    return std::nullopt;
  auto it = rec.features.find(cfg.score_feature);
  if (it == rec.features.end() || !std::isfinite(it->second)) return std::nullopt;
  DictionaryEntry e;
  e.source_tokens = rec.source_phrase;
  e.target_tokens = rec.target_phrase;
  e.ppdb_score = it->second;
  e.entailment = rec.entailment;
  return e;
}

/// Builds D from a line stream. Duplicate (source, target) pairs keep the
/// highest score; ids follow first-seen order. In non-strict mode malformed
/// lines are skipped and counted in `skipped`.
inline ParaphraseDictionary build_dictionary(std::istream& lines, const IngestConfig& cfg,
                                             std::size_t* skipped = nullptr) {
  ParaphraseDictionary dict;
  dict.filter = cfg;
  std::unordered_map<std::string, std::size_t> seen;
  std::uint64_t digest = fnv1a64("");
  std::size_t bad = 0;
  std::string line;
  while (std::getline(lines, line)) {
    digest = fnv1a64(line, digest);
    digest = fnv1a64("\n", digest);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    RawPpdbRecord rec;
    try {
      rec = parse_record(line);
    } catch (const Error&) {
      if (cfg.strict) throw;
      ++bad;
      continue;
    }
    auto entry = filter_record(rec, cfg);
    if (!entry) continue;
    std::string key = join(entry->source_tokens) + '\t' + join(entry->target_tokens);
    auto [it, inserted] = seen.emplace(key, dict.entries.size());
    if (inserted) {
      entry->id = static_cast<std::int64_t>(dict.entries.size());
      dict.entries.push_back(std::move(*entry));
    } else {
      auto& kept = dict.entries[it->second];
      kept.ppdb_score = std::max(kept.ppdb_score, entry->ppdb_score);
    }
  }
  if (skipped) *skipped = bad;
  if (dict.entries.empty()) throw Error(ErrorCode::EmptyDictionary, "no entries survived filtering");
  dict.source_digest = hex_digest(digest);
  return dict;
}

inline ParaphraseDictionary build_dictionary(const std::vector<std::string>& lines, const IngestConfig& cfg,
                                             std::size_t* skipped = nullptr) {
  std::ostringstream joined;
  for (const auto& l : lines) joined << l << '\n';
  std::istringstream in(joined.str());
  return build_dictionary(in, cfg, skipped);
}

// Dictionary snapshot: JSON lines. The first line is a header
//   {"format":"dgen-dictionary","version":1,"count":N,"source_digest":...,"filter":{...}}
// followed by one entry per line
//   {"id":0,"source":["overcome"],"target":["get","rid","of"],"score":3.5,"entailment":"Equivalence"}
inline constexpr int kDictionarySnapshotVersion = 1;

inline nlohmann::json entry_to_json(const DictionaryEntry& e) {
  return {{"id", e.id},
          {"source", e.source_tokens},
          {"target", e.target_tokens},
          {"score", e.ppdb_score},
          {"entailment", to_string(e.entailment)}};
}

inline DictionaryEntry entry_from_json(const nlohmann::json& j) {
  DictionaryEntry e;
  e.id = j.at("id").get<std::int64_t>();
  e.source_tokens = j.at("source").get<Tokens>();
  e.target_tokens = j.at("target").get<Tokens>();
  e.ppdb_score = j.at("score").get<double>();
  auto ent = parse_entailment(j.at("entailment").get<std::string>());
  if (!ent) throw Error(ErrorCode::BadSnapshot, "bad entailment in dictionary entry");
  e.entailment = *ent;
  return e;
}

inline nlohmann::json filter_to_json(const IngestConfig& cfg) {
  return {{"max_phrase_len", cfg.max_phrase_len}, {"score_feature", cfg.score_feature}, {"strict", cfg.strict}};
}

inline std::string dictionary_to_snapshot(const ParaphraseDictionary& dict) {
  std::string out;
  nlohmann::json header = {{"format", "dgen-dictionary"},
                           {"version", kDictionarySnapshotVersion},
                           {"count", dict.entries.size()},
                           {"source_digest", dict.source_digest},
                           {"filter", filter_to_json(dict.filter)}};
  out += header.dump() + '\n';
  for (const auto& e : dict.entries) out += entry_to_json(e).dump() + '\n';
  return out;
}

inline ParaphraseDictionary dictionary_from_snapshot(std::string_view text) {
  auto lines = split_on(text, "\n");
  if (lines.empty() || lines[0].empty()) throw Error(ErrorCode::BadSnapshot, "empty dictionary snapshot");
  ParaphraseDictionary dict;
  try {
    auto header = nlohmann::json::parse(lines[0]);
    if (header.at("format") != "dgen-dictionary")
      throw Error(ErrorCode::BadSnapshot, "not a dictionary snapshot");
    if (header.at("version").get<int>() != kDictionarySnapshotVersion)
      throw Error(ErrorCode::BadSnapshot, "unsupported dictionary snapshot version");
    dict.source_digest = header.at("source_digest").get<std::string>();
    const auto& f = header.at("filter");
    dict.filter.max_phrase_len = f.at("max_phrase_len").get<std::size_t>();
    dict.filter.score_feature = f.at("score_feature").get<std::string>();
    dict.filter.strict = f.at("strict").get<bool>();
    auto count = header.at("count").get<std::size_t>();
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      dict.entries.push_back(entry_from_json(nlohmann::json::parse(lines[i])));
    }
    if (dict.entries.size() != count) throw Error(ErrorCode::BadSnapshot, "entry count mismatch");
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::BadSnapshot, ex.what());
  }
  for (std::size_t i = 0; i < dict.entries.size(); ++i)
    if (dict.entries[i].id != static_cast<std::int64_t>(i)) throw Error(ErrorCode::BadSnapshot, "ids not dense");
  return dict;
}

}  // namespace dgen
