#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "dgen/error.hpp"
#include "dgen/ppdb.hpp"
#include "dgen/text.hpp"

namespace dgen {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Inverted index over the dictionary's source phrases, one document per entry.
struct InvertedIndex {
  std::map<std::string, std::vector<std::int64_t>> postings;  // ascending ids
  std::map<std::string, std::int64_t> doc_freq;
  std::vector<std::int64_t> entry_lengths;
  std::int64_t corpus_size = 0;
  double avg_length = 0.0;
  Bm25Params bm25;

  std::int64_t df(const std::string& token) const {
    auto it = doc_freq.find(token);
    return it == doc_freq.end() ? 0 : it->second;
  }
};

struct RankedPair {
  DictionaryEntry entry;
  double overlap_score = 0.0;
  double score_r = 0.0;
  double first_stage_score = 0.0;
};

struct RetrievedDictionary {
  std::vector<RankedPair> pairs;
  Tokens source_sentence;
};

struct Candidate {
  std::int64_t id = 0;
  double first_stage_score = 0.0;
};

inline constexpr std::size_t kDefaultDictionarySize = 10;
inline constexpr std::size_t kCandidateMultiplier = 10;

inline InvertedIndex build_index(const ParaphraseDictionary& dict, Bm25Params bm25 = {}) {
  if (dict.entries.empty()) throw Error(ErrorCode::EmptyDictionary, "cannot index an empty dictionary");
  InvertedIndex index;
  index.bm25 = bm25;
  index.corpus_size = static_cast<std::int64_t>(dict.entries.size());
  index.entry_lengths.reserve(dict.entries.size());
  std::int64_t total = 0;
  for (const auto& e : dict.entries) {
    index.entry_lengths.push_back(static_cast<std::int64_t>(e.source_tokens.size()));
    total += static_cast<std::int64_t>(e.source_tokens.size());
    std::unordered_set<std::string> distinct(e.source_tokens.begin(), e.source_tokens.end());
    for (const auto& t : distinct) {
      index.postings[t].push_back(e.id);
      ++index.doc_freq[t];
    }
  }
  index.avg_length = static_cast<double>(total) / static_cast<double>(index.corpus_size);
  return index;
}

/// Smoothed idf used by the re-ranking score: ln((N+1)/(df+1)) + 1.
inline double rerank_idf(std::int64_t corpus_size, std::int64_t df) {
  return std::log(static_cast<double>(corpus_size + 1) / static_cast<double>(df + 1)) + 1.0;
}

/// Lucene-style BM25 idf, always positive.
inline double bm25_idf(std::int64_t corpus_size, std::int64_t df) {
  const double n = static_cast<double>(corpus_size), f = static_cast<double>(df);
  return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

namespace detail {

// Distinct tokens in first-occurrence order.
inline Tokens distinct_in_order(const Tokens& toks) {
  Tokens out;
  std::unordered_set<std::string> seen;
  for (const auto& t : toks)
    if (seen.insert(t).second) out.push_back(t);
  return out;
}

inline bool ranks_before(double score_a, std::int64_t id_a, double score_b, std::int64_t id_b) {
  if (score_a != score_b) return score_a > score_b;
  return id_a < id_b;
}

}  // namespace detail

/// First stage: BM25 over source phrases, restricted to entries sharing at
/// least one token with the sentence. Distinct query tokens each contribute once.
inline std::vector<Candidate> candidate_fetch(const InvertedIndex& index, const ParaphraseDictionary& dict,
                                              const Tokens& sentence, std::size_t k) {
  std::unordered_map<std::int64_t, double> acc;
  const auto& p = index.bm25;
  for (const auto& q : detail::distinct_in_order(sentence)) {
    auto it = index.postings.find(q);
    if (it == index.postings.end()) continue;
    const double idf = bm25_idf(index.corpus_size, index.df(q));
    for (auto id : it->second) {
      const auto& src = dict.entries[static_cast<std::size_t>(id)].source_tokens;
      const double tf = static_cast<double>(std::count(src.begin(), src.end(), q));
      const double len = static_cast<double>(index.entry_lengths[static_cast<std::size_t>(id)]);
      const double norm = p.k1 * (1.0 - p.b + p.b * len / index.avg_length);
      acc[id] += idf * tf * (p.k1 + 1.0) / (tf + norm);
    }
  }
  std::vector<Candidate> out;
  out.reserve(acc.size());
  for (const auto& [id, s] : acc) out.push_back({id, s});
  auto cmp = [](const Candidate& a, const Candidate& b) {
    return detail::ranks_before(a.first_stage_score, a.id, b.first_stage_score, b.id);
  };
  if (out.size() > k) {
    std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(k), out.end(), cmp);
    out.resize(k);
  } else {
    std::sort(out.begin(), out.end(), cmp);
  }
  return out;
}

/// Sum over distinct tokens w of (o ∩ x) of tf_w(o) * idf_w.
inline double overlap_score(const InvertedIndex& index, const Tokens& phrase, const Tokens& sentence) {
  std::unordered_set<std::string> in_sentence(sentence.begin(), sentence.end());
  double total = 0.0;
  for (const auto& w : detail::distinct_in_order(phrase)) {
    if (!in_sentence.count(w)) continue;
    const double tf = static_cast<double>(std::count(phrase.begin(), phrase.end(), w));
    total += tf * rerank_idf(index.corpus_size, index.df(w));
  }
  return total;
}

/// Re-ranks candidates by overlap + PPDB score, keeping the top m.
inline RetrievedDictionary rank_pairs(const std::vector<Candidate>& candidates, const InvertedIndex& index,
                                      const ParaphraseDictionary& dict, const Tokens& sentence, std::size_t m) {
  RetrievedDictionary out;
  out.source_sentence = sentence;
  out.pairs.reserve(candidates.size());
  for (const auto& c : candidates) {
    RankedPair rp;
    rp.entry = dict.entries[static_cast<std::size_t>(c.id)];
    rp.first_stage_score = c.first_stage_score;
    rp.overlap_score = overlap_score(index, rp.entry.source_tokens, sentence);
    rp.score_r = rp.overlap_score + rp.entry.ppdb_score;
    out.pairs.push_back(std::move(rp));
  }
  std::sort(out.pairs.begin(), out.pairs.end(), [](const RankedPair& a, const RankedPair& b) {
    return detail::ranks_before(a.score_r, a.entry.id, b.score_r, b.entry.id);
  });
  if (out.pairs.size() > m) out.pairs.resize(m);
  return out;
}

/// Candidate fetch with k = 10*m (unless overridden), then re-ranking.
inline RetrievedDictionary retrieve(const InvertedIndex& index, const ParaphraseDictionary& dict,
                                    const Tokens& sentence, std::size_t m = kDefaultDictionarySize,
                                    std::size_t k = 0) {
  if (k == 0) k = kCandidateMultiplier * m;
  return rank_pairs(candidate_fetch(index, dict, sentence, k), index, dict, sentence, m);
}

/// A loaded index snapshot: the dictionary plus its inverted index.
struct RetrievalStore {
  ParaphraseDictionary dictionary;
  InvertedIndex index;

  RetrievedDictionary retrieve(const Tokens& sentence, std::size_t m = kDefaultDictionarySize,
                               std::size_t k = 0) const {
    return dgen::retrieve(index, dictionary, sentence, m, k);
  }
};

// Index snapshot: a single JSON document
//   {"format":"dgen-index","version":1,"bm25":{"k1":..,"b":..},
//    "dictionary":"<embedded dictionary snapshot text>",
//    "postings":{"token":[ids...]}, "doc_freq":{...}, "entry_lengths":[...],
//    "corpus_size":N, "avg_length":x}
// Postings are rebuilt from the dictionary on load and checked against the stored copy.
inline constexpr int kIndexSnapshotVersion = 1;

inline std::string index_to_snapshot(const RetrievalStore& store) {
  nlohmann::json j;
  j["format"] = "dgen-index";
  j["version"] = kIndexSnapshotVersion;
  j["bm25"] = {{"k1", store.index.bm25.k1}, {"b", store.index.bm25.b}};
  j["dictionary"] = dictionary_to_snapshot(store.dictionary);
  j["postings"] = store.index.postings;
  j["doc_freq"] = store.index.doc_freq;
  j["entry_lengths"] = store.index.entry_lengths;
  j["corpus_size"] = store.index.corpus_size;
  j["avg_length"] = store.index.avg_length;
  return j.dump() + '\n';
}

inline RetrievalStore index_from_snapshot(std::string_view text) {
  RetrievalStore store;
  try {
    auto j = nlohmann::json::parse(text);
    if (j.at("format") != "dgen-index") throw Error(ErrorCode::BadSnapshot, "not an index snapshot");
    if (j.at("version").get<int>() != kIndexSnapshotVersion)
      throw Error(ErrorCode::BadSnapshot, "unsupported index snapshot version");
    store.dictionary = dictionary_from_snapshot(j.at("dictionary").get<std::string>());
    Bm25Params bm25{j.at("bm25").at("k1").get<double>(), j.at("bm25").at("b").get<double>()};
    store.index = build_index(store.dictionary, bm25);
    if (j.at("postings").get<decltype(store.index.postings)>() != store.index.postings ||
        j.at("corpus_size").get<std::int64_t>() != store.index.corpus_size)
      throw Error(ErrorCode::BadSnapshot, "index postings do not match embedded dictionary");
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::BadSnapshot, ex.what());
  }
  return store;
}

inline nlohmann::json ranked_pair_to_json(const RankedPair& rp, std::size_t rank) {
  return {{"rank", rank},
          {"id", rp.entry.id},
          {"source", join(rp.entry.source_tokens)},
          {"target", join(rp.entry.target_tokens)},
          {"overlap_score", rp.overlap_score},
          {"ppdb_score", rp.entry.ppdb_score},
          {"score_r", rp.score_r},
          {"first_stage_score", rp.first_stage_score}};
}

}  // namespace dgen
