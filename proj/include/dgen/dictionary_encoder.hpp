#pragma once

#include <vector>

#include "dgen/retrieval.hpp"
#include "dgen/tensor.hpp"
#include "dgen/vocabulary.hpp"

namespace dgen {

/// A retrieved pair as vocabulary ids; out-of-vocabulary tokens become UNK.
struct DictionaryPairIds {
  TokenIds source;
  TokenIds target;

  bool operator==(const DictionaryPairIds&) const = default;
};

/// M bag-of-embedding pairs. Row i of o_vectors / p_vectors encodes the
/// source / target phrase of pair i; rows past the retrieved count are zero
/// with mask false. The id lists route gradients back into the embedding table.
template <typename Scalar>
struct EncodedDictionary {
  Matrix<Scalar> o_vectors;
  Matrix<Scalar> p_vectors;
  std::vector<bool> mask;
  std::vector<TokenIds> o_ids;
  std::vector<TokenIds> p_ids;

  std::size_t rows() const { return mask.size(); }
  std::size_t valid_rows() const {
    std::size_t n = 0;
    for (bool b : mask) n += b;
    return n;
  }
};

/// Sum of the embedding columns of `ids`. `embedding` is embed_dim x vocab.
template <typename Scalar>
Vector<Scalar> encode_phrase(const TokenIds& ids, const Matrix<Scalar>& embedding) {
  Vector<Scalar> out = Vector<Scalar>::Zero(embedding.rows());
  for (auto id : ids) out += embedding.col(id);
  return out;
}

template <typename Scalar>
Vector<Scalar> encode_phrase(const Tokens& tokens, const Vocabulary& vocab, const Matrix<Scalar>& embedding) {
  return encode_phrase(vocab.encode(tokens), embedding);
}

inline std::vector<DictionaryPairIds> dictionary_ids(const RetrievedDictionary& ret, const Vocabulary& vocab) {
  std::vector<DictionaryPairIds> out;
  out.reserve(ret.pairs.size());
  for (const auto& rp : ret.pairs)
    out.push_back({vocab.encode(rp.entry.source_tokens), vocab.encode(rp.entry.target_tokens)});
  return out;
}

/// Encodes up to m pairs; extra pairs beyond m are ignored.
template <typename Scalar>
EncodedDictionary<Scalar> encode_pairs(const std::vector<DictionaryPairIds>& pairs, const Matrix<Scalar>& embedding,
                                       std::size_t m) {
  const auto dim = embedding.rows();
  EncodedDictionary<Scalar> ed;
  ed.o_vectors = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(m), dim);
  ed.p_vectors = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(m), dim);
  ed.mask.assign(m, false);
  ed.o_ids.assign(m, {});
  ed.p_ids.assign(m, {});
  const std::size_t n = std::min(m, pairs.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    ed.o_vectors.row(r) = encode_phrase(pairs[i].source, embedding).transpose();
    ed.p_vectors.row(r) = encode_phrase(pairs[i].target, embedding).transpose();
    ed.mask[i] = true;
    ed.o_ids[i] = pairs[i].source;
    ed.p_ids[i] = pairs[i].target;
  }
  return ed;
}

template <typename Scalar>
EncodedDictionary<Scalar> encode_retrieved(const RetrievedDictionary& ret, const Vocabulary& vocab,
                                           const Matrix<Scalar>& embedding, std::size_t m) {
  return encode_pairs(dictionary_ids(ret, vocab), embedding, m);
}

}  // namespace dgen
