#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dgen/model.hpp"

namespace dgen {

/// A (partial) output. `tokens` ends with EOS when the model emitted it;
/// `log_prob` is the sum of the per-step log-probabilities of `tokens`.
struct Hypothesis {
  TokenIds tokens;
  double log_prob = 0.0;
  bool finished = false;
  std::vector<TraceRecord> trace;
};

struct DecodeOptions {
  std::size_t beam = 10;
  std::size_t max_len = 0;  // max emitted tokens including EOS; 0 means default_max_len
  TokenId bos = kBos;
  TokenId eos = kEos;
  bool keep_trace = true;
};

/// 2 * source length + 5, capped by the corpus length cap.
inline std::size_t default_max_len(std::size_t source_len, std::size_t cap) {
  return std::min(2 * source_len + 5, cap);
}

namespace detail {

template <typename Scalar>
Vector<double> log_probs(const StepCache<Scalar>& s) {
  Vector<double> lg = s.logits.template cast<double>();
  return (lg.array() - log_sum_exp<double>(lg)).matrix();
}

inline std::size_t resolve_max_len(const DecodeOptions& opts, std::size_t source_len) {
  return opts.max_len ? opts.max_len : default_max_len(source_len, 30);
}

}  // namespace detail

/// Argmax at every step, lowest token id on ties.
template <typename Scalar>
Hypothesis greedy_decode(const ModelParameters<Scalar>& params, const EncoderOutput<Scalar>& enc,
                         const EncodedDictionary<Scalar>& ed, DecodeOptions opts = {}) {
  const std::size_t max_len = detail::resolve_max_len(opts, enc.tokens.size());
  DecodeContext<Scalar> ctx(enc, ed, params);
  DecoderCarry<Scalar> carry = initial_carry(enc, params);
  Hypothesis hyp;
  TokenId prev = opts.bos;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto s = decoder_step_forward(params, ctx, carry, prev);
    Vector<double> lp = detail::log_probs(s);
    Eigen::Index best = 0;
    lp.maxCoeff(&best);
    const auto tok = static_cast<TokenId>(best);
    hyp.tokens.push_back(tok);
    hyp.log_prob += lp(best);
    if (opts.keep_trace) hyp.trace.push_back(make_trace_record(s, t, tok));
    prev = tok;
    if (tok == opts.eos) break;
  }
  hyp.finished = true;
  return hyp;
}

/// Beam search over summed log-probabilities without length normalization.
/// Each step keeps the top `beam` expansions; those ending in EOS (or hitting
/// max_len) are set aside as finished. Returns finished hypotheses best first.
template <typename Scalar>
std::vector<Hypothesis> beam_decode(const ModelParameters<Scalar>& params, const EncoderOutput<Scalar>& enc,
                                    const EncodedDictionary<Scalar>& ed, DecodeOptions opts = {}) {
  const std::size_t beam = std::max<std::size_t>(1, opts.beam);
  const std::size_t max_len = detail::resolve_max_len(opts, enc.tokens.size());
  DecodeContext<Scalar> ctx(enc, ed, params);

  struct Live {
    Hypothesis hyp;
    DecoderCarry<Scalar> carry;
  };
  struct Expansion {
    double score;
    TokenId token;
    std::size_t parent;
  };
  struct Done {
    Hypothesis hyp;
    std::size_t order;
  };

  std::vector<Live> live{{Hypothesis{}, initial_carry(enc, params)}};
  std::vector<Done> finished;
  std::size_t order = 0;

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<Expansion> cand;
    std::vector<StepCache<Scalar>> caches;
    std::vector<DecoderCarry<Scalar>> carries;
    caches.reserve(live.size());
    for (std::size_t h = 0; h < live.size(); ++h) {
      DecoderCarry<Scalar> carry = live[h].carry;
      const TokenId prev = live[h].hyp.tokens.empty() ? opts.bos : live[h].hyp.tokens.back();
      caches.push_back(decoder_step_forward(params, ctx, carry, prev));
      carries.push_back(std::move(carry));
      Vector<double> lp = detail::log_probs(caches.back());
      for (Eigen::Index v = 0; v < lp.size(); ++v)
        cand.push_back({live[h].hyp.log_prob + lp(v), static_cast<TokenId>(v), h});
    }
    const std::size_t keep = std::min(beam, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const Expansion& a, const Expansion& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.parent < b.parent;
                      });
    std::vector<Live> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& e = cand[k];
      Live child{live[e.parent].hyp, carries[e.parent]};
      child.hyp.tokens.push_back(e.token);
      child.hyp.log_prob = e.score;
      if (opts.keep_trace) child.hyp.trace.push_back(make_trace_record(caches[e.parent], t, e.token));
      if (e.token == opts.eos || t + 1 == max_len) {
        child.hyp.finished = true;
        finished.push_back({std::move(child.hyp), order++});
      } else {
        next.push_back(std::move(child));
      }
    }
    live = std::move(next);
  }

  std::stable_sort(finished.begin(), finished.end(), [](const Done& a, const Done& b) {
    if (a.hyp.log_prob != b.hyp.log_prob) return a.hyp.log_prob > b.hyp.log_prob;
    return a.order < b.order;
  });
  std::vector<Hypothesis> out;
  for (std::size_t i = 0; i < finished.size() && i < beam; ++i) out.push_back(std::move(finished[i].hyp));
  return out;
}

/// Convenience: encode, then decode with the requested beam (1 = greedy).
template <typename Scalar>
Hypothesis generate(const ModelParameters<Scalar>& params, const TokenIds& source,
                    const std::vector<DictionaryPairIds>& dictionary, DecodeOptions opts = {}) {
  auto enc = encode_source(source, params);
  auto ed = encode_pairs(dictionary, params.embedding, params.config.dict_size);
  if (opts.beam <= 1) return greedy_decode(params, enc, ed, opts);
  auto hyps = beam_decode(params, enc, ed, opts);
  return hyps.empty() ? Hypothesis{} : hyps.front();
}

}  // namespace dgen
