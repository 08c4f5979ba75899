#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dgen/data_prep.hpp"
#include "dgen/decoding.hpp"
#include "dgen/evaluation.hpp"
#include "dgen/retrieval.hpp"
#include "dgen/trace.hpp"
#include "dgen/training.hpp"
#include "dgen/vocabulary.hpp"

namespace dgen {

/// Truncates both sides, retrieves the dictionary for the source and maps
/// everything to ids. Returns nothing for pairs with an empty side.
inline std::optional<TrainingExample> make_training_example(const ParallelPair& pair, const RetrievalStore& store,
                                                            const Vocabulary& vocab, const TrainingConfig& cfg) {
  const auto src = truncate(pair.source, cfg.max_src_len);
  const auto tgt = truncate(pair.target, cfg.max_tgt_len);
  if (src.empty() || tgt.empty()) return std::nullopt;
  TrainingExample ex;
  ex.source = vocab.encode(src);
  ex.target.push_back(kBos);
  for (auto id : vocab.encode(tgt)) ex.target.push_back(id);
  ex.target.push_back(kEos);
  ex.dictionary = dictionary_ids(store.retrieve(src, cfg.dict_size), vocab);
  return ex;
}

inline std::vector<TrainingExample> make_training_examples(const ParallelCorpus& corpus, const RetrievalStore& store,
                                                           const Vocabulary& vocab, const TrainingConfig& cfg) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.pairs.size());
  for (const auto& p : corpus.pairs)
    if (auto ex = make_training_example(p, store, vocab, cfg)) out.push_back(std::move(*ex));
  return out;
}

/// Vocabulary over both sides of the training pairs.
inline Vocabulary corpus_vocab(const ParallelCorpus& train, std::int64_t min_count) {
  std::vector<Tokens> sents;
  sents.reserve(2 * train.pairs.size());
  for (const auto& p : train.pairs) {
    sents.push_back(p.source);
    sents.push_back(p.target);
  }
  return build_vocab(sents, min_count);
}

struct Paraphrase {
  Tokens tokens;  // without EOS
  Hypothesis hypothesis;
  RetrievedDictionary dictionary;
};

/// Retrieves, encodes and decodes one tokenized sentence. The length cap is
/// 2·|source| + 5 emitted tokens, at most max_tgt_len words plus EOS.
template <typename Scalar>
Paraphrase paraphrase(const ModelParameters<Scalar>& params, const Vocabulary& vocab, const RetrievalStore& store,
                      const Tokens& sentence, std::size_t beam, const TrainingConfig& cfg, bool keep_trace = false) {
  Paraphrase out;
  const auto src = truncate(sentence, cfg.max_src_len);
  if (src.empty()) throw Error(ErrorCode::EmptySource, "cannot paraphrase an empty sentence");
  out.dictionary = store.retrieve(src, params.config.dict_size);
  DecodeOptions opts;
  opts.beam = beam;
  opts.max_len = default_max_len(src.size(), cfg.max_tgt_len + 1);
  opts.keep_trace = keep_trace;
  out.hypothesis = generate(params, vocab.encode(src), dictionary_ids(out.dictionary, vocab), opts);
  out.tokens = vocab.decode(out.hypothesis.tokens);
  return out;
}

inline SentenceTrace make_sentence_trace(const Paraphrase& p, const Vocabulary& vocab, const Tokens& source,
                                         std::size_t sentence, std::size_t m) {
  SentenceTrace s;
  s.sentence = sentence;
  s.source = source;
  s.m = m;
  for (const auto& rp : p.dictionary.pairs)
    s.dictionary.push_back({join(rp.entry.source_tokens), join(rp.entry.target_tokens)});
  s.steps = p.hypothesis.trace;
  for (auto id : p.hypothesis.tokens) s.tokens.push_back(vocab.token(id));
  return s;
}

/// Test pairs sharing a source collapse into one record whose references
/// are all their targets, in first-seen order.
inline std::vector<std::pair<Tokens, std::vector<Tokens>>> group_references(const ParallelCorpus& test) {
  std::vector<std::pair<Tokens, std::vector<Tokens>>> out;
  std::map<Tokens, std::size_t> where;
  for (const auto& p : test.pairs) {
    auto [it, inserted] = where.emplace(p.source, out.size());
    if (inserted) out.push_back({p.source, {}});
    out[it->second].second.push_back(p.target);
  }
  return out;
}

struct EvalRow {
  std::string model;
  std::size_t beam_size = 1;
  double bleu = 0.0;
  std::optional<double> meteor;  // tool score ×100
  std::string meteor_error;
  std::vector<Tokens> hypotheses;  // aligned with the grouped sources
};

inline nlohmann::json eval_row_to_json(const EvalRow& r) {
  nlohmann::json j{{"model", r.model}, {"beam_size", r.beam_size}, {"bleu", r.bleu}};
  j["meteor"] = r.meteor ? nlohmann::json(*r.meteor) : nlohmann::json(nullptr);
  return j;
}

/// One row per beam size. METEOR is attempted only when a tool path is
/// given; a failure leaves it empty and records the message.
template <typename Scalar>
std::vector<EvalRow> evaluate_run(const ModelParameters<Scalar>& params, const Vocabulary& vocab,
                                  const RetrievalStore& store, const ParallelCorpus& test,
                                  const std::vector<std::size_t>& beams, const TrainingConfig& cfg,
                                  const std::string& model_name, const std::string& meteor_path = "") {
  const auto groups = group_references(test);
  if (groups.empty()) throw Error(ErrorCode::EmptyCorpus, "test corpus is empty");
  std::vector<EvalRow> rows;
  for (auto beam : beams) {
    EvalRow row;
    row.model = model_name;
    row.beam_size = beam;
    std::vector<EvalRecord> records;
    for (const auto& [src, refs] : groups) {
      auto p = paraphrase(params, vocab, store, src, beam, cfg);
      row.hypotheses.push_back(p.tokens);
      records.push_back({p.tokens, refs});
    }
    row.bleu = bleu(records);
    if (!meteor_path.empty()) {
      try {
        row.meteor = 100.0 * meteor(records, meteor_path);
      } catch (const Error& e) {
        row.meteor_error = e.what();
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dgen
