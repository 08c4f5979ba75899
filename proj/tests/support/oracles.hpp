#pragma once

// Reference implementations written from the metric and ranking definitions,
// sharing no code with the library paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dgen/decoding.hpp"
#include "dgen/evaluation.hpp"
#include "dgen/model.hpp"
#include "dgen/ppdb.hpp"

namespace dgen::testing {

// ---- BLEU ----------------------------------------------------------------

inline std::unordered_map<std::string, long> oracle_ngrams(const Tokens& s, std::size_t n) {
  std::unordered_map<std::string, long> m;
  if (s.size() < n) return m;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key;
    for (std::size_t j = i; j < i + n; ++j) key += s[j] + '\x1f';
    m[key] += 1;
  }
  return m;
}

/// Corpus BLEU from first principles, in long double.
inline double oracle_bleu(const std::vector<EvalRecord>& records, std::size_t max_n = 4) {
  std::vector<long> clipped(max_n + 1, 0), total(max_n + 1, 0);
  long c = 0, r = 0;
  for (const auto& rec : records) {
    const long hl = static_cast<long>(rec.hypothesis.size());
    c += hl;
    long best_len = static_cast<long>(rec.references[0].size());
    for (const auto& ref : rec.references) {
      const long rl = static_cast<long>(ref.size());
      const long d_new = rl > hl ? rl - hl : hl - rl;
      const long d_old = best_len > hl ? best_len - hl : hl - best_len;
      if (d_new < d_old || (d_new == d_old && rl < best_len)) best_len = rl;
    }
    r += best_len;
    for (std::size_t n = 1; n <= max_n; ++n) {
      for (const auto& [g, k] : oracle_ngrams(rec.hypothesis, n)) {
        long cap = 0;
        for (const auto& ref : rec.references) {
          auto rc = oracle_ngrams(ref, n);
          auto it = rc.find(g);
          if (it != rc.end()) cap = std::max(cap, it->second);
        }
        clipped[n] += std::min(k, cap);
        total[n] += k;
      }
    }
  }
  if (c == 0) return 0.0;
  long double log_sum = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (clipped[n] == 0) return 0.0;
    log_sum += std::log(static_cast<long double>(clipped[n]) / static_cast<long double>(total[n]));
  }
  long double bp = c > r ? 1.0L : std::exp(1.0L - static_cast<long double>(r) / static_cast<long double>(c));
  return static_cast<double>(100.0L * bp * std::exp(log_sum / static_cast<long double>(max_n)));
}

// ---- retrieval -------------------------------------------------------------

struct OracleScore {
  std::int64_t id;
  double score;
};

/// Scores every entry whose source phrase shares a token with the sentence:
/// Σ over distinct shared w of count(w in o) * (ln((N+1)/(df+1)) + 1), plus
/// the PPDB score; df is recounted from the raw entries.
inline std::vector<OracleScore> oracle_rank(const ParaphraseDictionary& dict, const Tokens& sentence) {
  const std::set<std::string> x(sentence.begin(), sentence.end());
  const double n = static_cast<double>(dict.entries.size());
  std::vector<OracleScore> out;
  for (const auto& e : dict.entries) {
    const std::set<std::string> o(e.source_tokens.begin(), e.source_tokens.end());
    double overlap = 0.0;
    bool shares = false;
    for (const auto& w : o) {
      if (!x.count(w)) continue;
      shares = true;
      long df = 0;
      for (const auto& other : dict.entries)
        if (std::find(other.source_tokens.begin(), other.source_tokens.end(), w) != other.source_tokens.end()) ++df;
      const auto tf = std::count(e.source_tokens.begin(), e.source_tokens.end(), w);
      overlap += static_cast<double>(tf) * (std::log((n + 1.0) / (static_cast<double>(df) + 1.0)) + 1.0);
    }
    if (shares) out.push_back({e.id, overlap + e.ppdb_score});
  }
  std::stable_sort(out.begin(), out.end(), [](const OracleScore& a, const OracleScore& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  });
  return out;
}

// ---- decoding --------------------------------------------------------------

struct Enumerated {
  TokenIds tokens;
  double log_prob;
};

/// Every output of length <= max_len (ending at EOS or the cap), scored by
/// chaining single decoder steps, best first.
template <typename Scalar>
std::vector<Enumerated> enumerate_outputs(const ModelParameters<Scalar>& params, const TokenIds& source,
                                          const std::vector<DictionaryPairIds>& dictionary, std::size_t max_len,
                                          TokenId bos, TokenId eos) {
  auto enc = encode_source(source, params);
  auto ed = encode_pairs(dictionary, params.embedding, params.config.dict_size);
  std::vector<Enumerated> out;
  struct Node {
    TokenIds tokens;
    double lp;
    DecoderCarry<Scalar> carry;
  };
  std::vector<Node> frontier{{{}, 0.0, initial_carry(enc, params)}};
  for (std::size_t t = 0; t < max_len; ++t) {
    std::vector<Node> next;
    for (const auto& node : frontier) {
      const TokenId prev = node.tokens.empty() ? bos : node.tokens.back();
      auto step = decoder_step(node.carry, prev, enc, ed, params, t);
      for (Eigen::Index v = 0; v < step.distribution.size(); ++v) {
        Node child{node.tokens, node.lp + std::log(static_cast<double>(step.distribution(v))), step.carry};
        child.tokens.push_back(static_cast<TokenId>(v));
        if (v == eos || t + 1 == max_len)
          out.push_back({child.tokens, child.lp});
        else
          next.push_back(std::move(child));
      }
    }
    frontier = std::move(next);
  }
  std::stable_sort(out.begin(), out.end(), [](const Enumerated& a, const Enumerated& b) { return a.log_prob > b.log_prob; });
  return out;
}

// ---- fixtures --------------------------------------------------------------

inline ModelConfig tiny_config(std::size_t vocab = 20, std::size_t embed = 8, std::size_t hidden = 12,
                               std::size_t dict_size = 3) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = embed;
  c.hidden_dim = hidden;
  c.attn_dim = hidden;
  c.num_layers = 2;
  c.dict_size = dict_size;
  return c;
}

inline TokenIds random_ids(std::mt19937_64& rng, std::size_t len, std::size_t vocab, TokenId lo = 0) {
  std::uniform_int_distribution<TokenId> d(lo, static_cast<TokenId>(vocab - 1));
  TokenIds out(len);
  for (auto& t : out) t = d(rng);
  return out;
}

/// Between 0 and m random pairs of 1..3 tokens each.
inline std::vector<DictionaryPairIds> random_dictionary(std::mt19937_64& rng, std::size_t m, std::size_t vocab,
                                                        std::size_t min_pairs = 0) {
  std::uniform_int_distribution<std::size_t> count(min_pairs, m), len(1, 3);
  std::vector<DictionaryPairIds> out(count(rng));
  for (auto& p : out) {
    p.source = random_ids(rng, len(rng), vocab);
    p.target = random_ids(rng, len(rng), vocab);
  }
  return out;
}

/// Random source/target ids above the special tokens, with at least one dictionary pair.
inline TrainingExample random_example(std::mt19937_64& rng, const ModelConfig& cfg, std::size_t src_len,
                                      std::size_t tgt_len) {
  TrainingExample ex;
  ex.source = random_ids(rng, src_len, cfg.vocab_size, 4);
  ex.target.push_back(kBos);
  for (auto t : random_ids(rng, tgt_len, cfg.vocab_size, 4)) ex.target.push_back(t);
  ex.target.push_back(kEos);
  ex.dictionary = random_dictionary(rng, cfg.dict_size, cfg.vocab_size, 1);
  return ex;
}

}  // namespace dgen::testing
