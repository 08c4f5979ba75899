#pragma once

#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dgen/error.hpp"
#include "dgen/model.hpp"
#include "dgen/text.hpp"

namespace dgen {

// Trace file: JSON lines. Each sentence starts with a header record
//   {"sentence": i, "source": [tokens], "dictionary": [{"source": "...", "target": "..."}], "m": M}
// followed by one record per emitted token
//   {"sentence": i, "step": t, "token": "...", "a": [M], "a_prime": [M], "src": [T_src]}
// Dictionary entries are in retrieval rank order; rows past them are padding.

struct TracedPair {
  std::string source;
  std::string target;
};

struct SentenceTrace {
  std::size_t sentence = 0;
  Tokens source;
  std::vector<TracedPair> dictionary;
  std::size_t m = 0;
  Tokens tokens;
  std::vector<TraceRecord> steps;
};

inline std::string trace_to_jsonl(const SentenceTrace& s) {
  nlohmann::json dict = nlohmann::json::array();
  for (const auto& p : s.dictionary) dict.push_back({{"source", p.source}, {"target", p.target}});
  std::string out = nlohmann::json{{"sentence", s.sentence}, {"source", s.source}, {"dictionary", dict}, {"m", s.m}}
                        .dump() + '\n';
  for (std::size_t t = 0; t < s.steps.size(); ++t) {
    const auto& r = s.steps[t];
    out += nlohmann::json{{"sentence", s.sentence}, {"step", r.step},           {"token", s.tokens.at(t)},
                          {"a", r.delete_weights},  {"a_prime", r.insert_weights}, {"src", r.source_weights}}
               .dump() + '\n';
  }
  return out;
}

inline std::vector<SentenceTrace> parse_trace(const std::vector<std::string>& lines) {
  std::vector<SentenceTrace> out;
  std::map<std::size_t, std::size_t> where;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const std::string at = "trace line " + std::to_string(i + 1) + ": ";
    try {
      auto j = nlohmann::json::parse(lines[i]);
      const auto sentence = j.at("sentence").get<std::size_t>();
      if (!j.contains("step")) {
        SentenceTrace s;
        s.sentence = sentence;
        s.source = j.at("source").get<Tokens>();
        s.m = j.at("m").get<std::size_t>();
        for (const auto& p : j.at("dictionary"))
          s.dictionary.push_back({p.at("source").get<std::string>(), p.at("target").get<std::string>()});
        if (s.dictionary.size() > s.m) throw Error(ErrorCode::MalformedTrace, at + "more dictionary pairs than m");
        if (!where.emplace(sentence, out.size()).second)
          throw Error(ErrorCode::MalformedTrace, at + "duplicate sentence header");
        out.push_back(std::move(s));
        continue;
      }
      auto it = where.find(sentence);
      if (it == where.end()) throw Error(ErrorCode::MalformedTrace, at + "step before its sentence header");
      auto& s = out[it->second];
      TraceRecord r;
      r.step = j.at("step").get<std::size_t>();
      r.delete_weights = j.at("a").get<std::vector<double>>();
      r.insert_weights = j.at("a_prime").get<std::vector<double>>();
      r.source_weights = j.at("src").get<std::vector<double>>();
      if (r.step != s.steps.size()) throw Error(ErrorCode::MalformedTrace, at + "steps out of order");
      if (r.delete_weights.size() != s.m || r.insert_weights.size() != s.m)
        throw Error(ErrorCode::MalformedTrace, at + "attention vector length differs from m");
      if (r.source_weights.size() != s.source.size())
        throw Error(ErrorCode::MalformedTrace, at + "source attention length differs from source length");
      s.tokens.push_back(j.at("token").get<std::string>());
      s.steps.push_back(std::move(r));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::MalformedTrace, at + ex.what());
    }
  }
  return out;
}

struct AttentionMatrices {
  std::size_t sentence = 0;
  std::string delete_tsv;  // M rows x T columns
  std::string insert_tsv;
};

/// Tab-separated matrices: the first row holds the emitted tokens, each
/// following row starts with "o_i → p_i" (or "<pad>") and holds that pair's
/// weight at every step.
inline std::vector<AttentionMatrices> attention_export(const std::vector<SentenceTrace>& traces) {
  std::vector<AttentionMatrices> out;
  auto render = [](const SentenceTrace& s, bool insert) {
    std::string text = "pair";
    for (const auto& tok : s.tokens) text += '\t' + tok;
    text += '\n';
    char buf[32];
    for (std::size_t i = 0; i < s.m; ++i) {
      text += i < s.dictionary.size() ? s.dictionary[i].source + " → " + s.dictionary[i].target : std::string("<pad>");
      for (const auto& r : s.steps) {
        std::snprintf(buf, sizeof buf, "\t%.6g", insert ? r.insert_weights[i] : r.delete_weights[i]);
        text += buf;
      }
      text += '\n';
    }
    return text;
  };
  for (const auto& s : traces) out.push_back({s.sentence, render(s, false), render(s, true)});
  return out;
}

}  // namespace dgen
