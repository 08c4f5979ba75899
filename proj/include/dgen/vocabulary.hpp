#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dgen/error.hpp"
#include "dgen/text.hpp"

namespace dgen {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;

class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<unk>", "<s>", "</s>"} {
    for (TokenId i = 0; i < static_cast<TokenId>(tokens_.size()); ++i) ids_[tokens_[i]] = i;
  }

  /// Token list in id order; the first four must be the reserved symbols.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens, std::int64_t min_count) {
    Vocabulary v;
    if (tokens.size() < 4 || !std::equal(v.tokens_.begin(), v.tokens_.end(), tokens.begin()))
      throw Error(ErrorCode::BadSnapshot, "vocabulary does not start with reserved symbols");
    v.tokens_ = tokens;
    v.ids_.clear();
    for (TokenId i = 0; i < static_cast<TokenId>(tokens.size()); ++i) v.ids_[tokens[i]] = i;
    v.min_count_ = min_count;
    return v;
  }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  std::int64_t min_count() const { return min_count_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenIds encode(const Tokens& toks) const {
    TokenIds out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  /// Drops BOS/EOS/PAD; stops at the first EOS.
  Tokens decode(const TokenIds& ids) const {
    Tokens out;
    for (auto i : ids) {
      if (i == kEos) break;
      if (i == kBos || i == kPad) continue;
      out.push_back(token(i));
    }
    return out;
  }

 private:
  friend Vocabulary build_vocab(const std::vector<Tokens>&, std::int64_t);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  std::int64_t min_count_ = 0;
};

/// Keeps tokens seen strictly more than min_count times. Ids after the
/// reserved four follow descending frequency, ties broken lexicographically.
/// Pass training sentences only.
inline Vocabulary build_vocab(const std::vector<Tokens>& corpus, std::int64_t min_count = 10) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::int64_t> counts;
  for (const auto& sent : corpus)
    for (const auto& t : sent) ++counts[t];
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (const auto& [tok, c] : counts) {
    if (c <= min_count) continue;
    if (tok == "<pad>" || tok == "<unk>" || tok == "<s>" || tok == "</s>") continue;
    kept.emplace_back(tok, c);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  v.min_count_ = min_count;
  for (const auto& [tok, c] : kept) {
    v.ids_[tok] = static_cast<TokenId>(v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

inline nlohmann::json vocab_to_json(const Vocabulary& v) {
  return {{"min_count", v.min_count()}, {"tokens", v.tokens()}};
}

inline Vocabulary vocab_from_json(const nlohmann::json& j) {
  return Vocabulary::from_tokens(j.at("tokens").get<std::vector<std::string>>(), j.at("min_count").get<std::int64_t>());
}

}  // namespace dgen
