#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dgen/checkpoint.hpp"
#include "dgen/data_prep.hpp"
#include "dgen/evaluation.hpp"
#include "dgen/manifest.hpp"
#include "dgen/pipeline.hpp"
#include "dgen/ppdb.hpp"
#include "dgen/retrieval.hpp"
#include "dgen/trace.hpp"
#include "dgen/training.hpp"

namespace dgen::cli {

namespace fs = std::filesystem;

// Training and decoding run in single precision; checkpoints store float64.
using CliScalar = float;

struct Options {
  std::uint64_t seed = 1;
  std::string manifest;

  // ingest
  std::string ppdb, out;
  std::size_t max_phrase_len = 7;
  bool strict = false;
  // index / retrieve
  std::string dict, index, sentence;
  std::size_t m = kDefaultDictionarySize, k = 0;
  bool json = false;
  // preprocess
  std::string format = "pairs", input, out_dir;
  std::size_t train_size = 0, valid_size = 0, test_size = 0, max_len = 0;
  // train
  std::string config, train, valid;
  std::vector<std::string> sets;
  // generate / evaluate
  std::string checkpoint, trace, test, meteor, model = "dgen";
  std::size_t beam = 10;
  std::vector<std::size_t> beams{1, 10};
  // attention-export: trace + out_dir
};

inline std::string manifest_path(const Options& o, const std::string& fallback) {
  return o.manifest.empty() ? fallback : o.manifest;
}

inline void start_manifest(RunManifest& m, const std::string& path) {
  refresh_digests(m, false);
  write_manifest(path, m);
}

inline void finish_manifest(RunManifest& m, const std::string& path) {
  m.complete = true;
  refresh_digests(m, true);
  write_manifest(path, m);
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create directory " + dir + ": " + ec.message());
}

inline int run_ingest(const Options& o, std::ostream&, std::ostream& err) {
  IngestConfig cfg;
  cfg.max_phrase_len = o.max_phrase_len;
  cfg.strict = o.strict;
  auto m = make_manifest("ingest", o.seed, filter_to_json(cfg), {{"ppdb", o.ppdb}}, {{"dictionary", o.out}});
  const auto mpath = manifest_path(o, o.out + ".manifest.json");
  start_manifest(m, mpath);
  std::ifstream in(o.ppdb, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + o.ppdb);
  std::size_t skipped = 0;
  auto dict = build_dictionary(in, cfg, &skipped);
  write_file(o.out, dictionary_to_snapshot(dict));
  err << "ingest: " << dict.size() << " entries, " << skipped << " malformed lines skipped\n";
  finish_manifest(m, mpath);
  return 0;
}

inline int run_index(const Options& o, std::ostream&, std::ostream& err) {
  auto m = make_manifest("index", o.seed, {{"k1", Bm25Params{}.k1}, {"b", Bm25Params{}.b}}, {{"dictionary", o.dict}},
                {{"index", o.out}});
  const auto mpath = manifest_path(o, o.out + ".manifest.json");
  start_manifest(m, mpath);
  RetrievalStore store;
  store.dictionary = dictionary_from_snapshot(read_file(o.dict));
  store.index = build_index(store.dictionary);
  write_file(o.out, index_to_snapshot(store));
  err << "index: " << store.index.corpus_size << " entries, " << store.index.doc_freq.size() << " terms\n";
  finish_manifest(m, mpath);
  return 0;
}

inline int run_retrieve(const Options& o, std::ostream& out, std::ostream&) {
  auto m = make_manifest("retrieve", o.seed, {{"m", o.m}, {"k", o.k ? o.k : kCandidateMultiplier * o.m}, {"sentence", o.sentence}},
                {{"index", o.index}}, {});
  const auto mpath = manifest_path(o, "dgen-retrieve.manifest.json");
  start_manifest(m, mpath);
  auto store = index_from_snapshot(read_file(o.index));
  auto ret = store.retrieve(tokenize(o.sentence), o.m, o.k);
  for (std::size_t i = 0; i < ret.pairs.size(); ++i) {
    const auto& rp = ret.pairs[i];
    if (o.json) {
      out << ranked_pair_to_json(rp, i + 1).dump() << '\n';
    } else {
      out << i + 1 << '\t' << join(rp.entry.source_tokens) << " → " << join(rp.entry.target_tokens)
          << "\tscore_r=" << rp.score_r << "\toverlap=" << rp.overlap_score << "\tppdb=" << rp.entry.ppdb_score
          << '\n';
    }
  }
  finish_manifest(m, mpath);
  return 0;
}

inline int run_preprocess(const Options& o, std::ostream&, std::ostream& err) {
  nlohmann::json cfg{{"format", o.format}};
  const auto train_path = (fs::path(o.out_dir) / "train.tsv").string();
  const auto valid_path = (fs::path(o.out_dir) / "valid.tsv").string();
  const auto test_path = (fs::path(o.out_dir) / "test.tsv").string();
  CorpusSplits splits;
  auto pick = [](std::size_t flag, std::size_t dflt) { return flag ? flag : dflt; };
  MscocoConfig mc;
  QuoraConfig qc;
  if (o.format == "mscoco") {
    mc.test_size = pick(o.test_size, mc.test_size);
    mc.valid_size = pick(o.valid_size, mc.valid_size);
    mc.max_len = pick(o.max_len, mc.max_len);
    cfg.update({{"test_size", mc.test_size}, {"valid_size", mc.valid_size}, {"max_len", mc.max_len},
                {"retained", mc.retained}});
  } else if (o.format == "quora") {
    qc.train_size = pick(o.train_size, qc.train_size);
    qc.valid_size = pick(o.valid_size, qc.valid_size);
    qc.test_size = pick(o.test_size, qc.test_size);
    qc.max_len = pick(o.max_len, qc.max_len);
    cfg.update({{"train_size", qc.train_size}, {"valid_size", qc.valid_size}, {"test_size", qc.test_size},
                {"max_len", qc.max_len}});
  } else {
    cfg.update({{"valid_size", o.valid_size}, {"test_size", o.test_size}, {"max_len", pick(o.max_len, 30)}});
  }
  auto m = make_manifest("preprocess", o.seed, cfg, {{"input", o.input}},
                {{"train", train_path}, {"valid", valid_path}, {"test", test_path}});
  ensure_dir(o.out_dir);
  const auto mpath = manifest_path(o, (fs::path(o.out_dir) / "preprocess.manifest.json").string());
  start_manifest(m, mpath);

  if (o.format == "mscoco") {
    splits = make_mscoco_pairs(parse_caption_groups(read_file(o.input)), o.seed, mc);
    err << "preprocess: " << splits.skipped << " caption groups with fewer than 2 captions skipped\n";
  } else if (o.format == "quora") {
    std::size_t bad = 0;
    auto records = parse_quora_records(read_lines(o.input), &bad);
    splits = make_quora_pairs(records, o.seed, qc);
    err << "preprocess: " << bad << " malformed rows, " << splits.skipped << " records filtered\n";
  } else {
    auto pairs = parse_raw_pairs(read_lines(o.input));
    const auto cap = pick(o.max_len, 30);
    for (auto& p : pairs) p = {truncate(p.source, cap), truncate(p.target, cap)};
    const auto held = o.valid_size + o.test_size;
    if (held > pairs.size()) throw Error(ErrorCode::BadConfig, "valid + test sizes exceed the number of pairs");
    const auto rest = pairs.size() - held;
    splits = split_pairs(std::move(pairs), o.seed, rest, o.valid_size, o.test_size);
  }
  write_file(train_path, pairs_to_text(splits.train));
  write_file(valid_path, pairs_to_text(splits.valid));
  write_file(test_path, pairs_to_text(splits.test));
  err << "preprocess: train " << splits.train.pairs.size() << ", valid " << splits.valid.pairs.size() << ", test "
      << splits.test.pairs.size() << '\n';
  finish_manifest(m, mpath);
  return 0;
}

inline TrainingConfig resolve_training_config(const Options& o, bool seed_given) {
  TrainingConfig cfg;
  if (!o.config.empty()) cfg = parse_config(read_file(o.config));
  for (const auto& kv : o.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::BadConfig, "--set expects key=value, got " + kv);
    set_config_value(cfg, trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (seed_given) cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

inline int run_train(const Options& o, bool seed_given, std::ostream&, std::ostream& err) {
  const auto cfg = resolve_training_config(o, seed_given);
  const auto metrics_path = (fs::path(o.out_dir) / "metrics.jsonl").string();
  const auto best_path = (fs::path(o.out_dir) / "best.ckpt").string();
  auto m = make_manifest("train", cfg.seed, config_to_json(cfg),
                {{"config", o.config}, {"train", o.train}, {"valid", o.valid}, {"index", o.index}},
                {{"metrics", metrics_path}, {"checkpoint", best_path}});
  ensure_dir(o.out_dir);
  const auto mpath = manifest_path(o, (fs::path(o.out_dir) / "train.manifest.json").string());
  start_manifest(m, mpath);

  const auto train_corpus = read_pair_file(o.train, "train");
  const auto valid_corpus = o.valid.empty() ? ParallelCorpus{"valid", {}} : read_pair_file(o.valid, "valid");
  const auto store = index_from_snapshot(read_file(o.index));
  const auto vocab = corpus_vocab(train_corpus, cfg.min_count);
  const auto train_set = make_training_examples(train_corpus, store, vocab, cfg);
  const auto valid_set = make_training_examples(valid_corpus, store, vocab, cfg);
  err << "train: vocabulary " << vocab.size() << ", " << train_set.size() << " train / " << valid_set.size()
      << " valid examples\n";

  const auto model_cfg = cfg.model_config(vocab.size());
  model_cfg.validate();
  auto params = initialize_parameters<CliScalar>(model_cfg, cfg.seed, cfg.init_scale);
  std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw Error(ErrorCode::Io, "cannot write " + metrics_path);
  TrainCallbacks<CliScalar> cb;
  cb.on_metrics = [&](const EpochMetrics& em) {
    metrics << metrics_to_json(em).dump() << '\n' << std::flush;
    err << "epoch " << em.epoch << ' ' << em.split << " loss " << em.loss << " acc " << em.token_accuracy << '\n';
  };
  cb.on_best = [&](const ModelParameters<CliScalar>& p, std::size_t) { save_checkpoint(best_path, p, vocab, cfg); };
  auto result = train(cfg, train_set, valid_set, std::move(params), cb);
  metrics.close();
  err << "train: best epoch " << result.best_epoch << ", valid loss " << result.best_valid_loss << '\n';
  finish_manifest(m, mpath);
  return 0;
}

inline int run_generate(const Options& o, std::ostream& out, std::ostream& err) {
  auto m = make_manifest("generate", o.seed, {{"beam", o.beam}},
                {{"checkpoint", o.checkpoint}, {"index", o.index}, {"input", o.input}},
                {{"output", o.out}, {"trace", o.trace}});
  const auto mpath = manifest_path(o, (o.out.empty() ? o.input : o.out) + ".manifest.json");
  start_manifest(m, mpath);
  const auto ck = load_checkpoint<CliScalar>(o.checkpoint);
  const auto store = index_from_snapshot(read_file(o.index));
  std::ostringstream hyps, trace;
  std::size_t i = 0;
  for (const auto& line : read_lines(o.input)) {
    const auto src = tokenize(line);
    if (!src.empty()) {
      auto p = paraphrase(ck.params, ck.vocab, store, src, o.beam, ck.training, !o.trace.empty());
      hyps << join(p.tokens);
      if (!o.trace.empty())
        trace << trace_to_jsonl(make_sentence_trace(p, ck.vocab, truncate(src, ck.training.max_src_len), i,
                                                    ck.params.config.dict_size));
    }
    hyps << '\n';
    ++i;
  }
  if (o.out.empty())
    out << hyps.str();
  else
    write_file(o.out, hyps.str());
  if (!o.trace.empty()) write_file(o.trace, trace.str());
  err << "generate: " << i << " sentences\n";
  finish_manifest(m, mpath);
  return 0;
}

inline int run_evaluate(const Options& o, std::ostream& out, std::ostream& err) {
  const auto report_path = (fs::path(o.out_dir) / "report.jsonl").string();
  auto m = make_manifest("evaluate", o.seed, {{"beams", o.beams}, {"model", o.model}, {"meteor", o.meteor}},
                {{"checkpoint", o.checkpoint}, {"index", o.index}, {"test", o.test}}, {{"report", report_path}});
  for (auto b : o.beams)
    m.outputs["hypotheses.beam" + std::to_string(b)] =
        (fs::path(o.out_dir) / ("hypotheses.beam" + std::to_string(b) + ".txt")).string();
  ensure_dir(o.out_dir);
  const auto mpath = manifest_path(o, (fs::path(o.out_dir) / "evaluate.manifest.json").string());
  start_manifest(m, mpath);
  const auto ck = load_checkpoint<CliScalar>(o.checkpoint);
  const auto store = index_from_snapshot(read_file(o.index));
  const auto test = read_pair_file(o.test, "test");
  auto rows = evaluate_run(ck.params, ck.vocab, store, test, o.beams, ck.training, o.model, o.meteor);
  std::string report;
  for (const auto& r : rows) {
    report += eval_row_to_json(r).dump() + '\n';
    std::string text;
    for (const auto& h : r.hypotheses) text += join(h) + '\n';
    write_file(m.outputs.at("hypotheses.beam" + std::to_string(r.beam_size)), text);
    out << r.model << "\tbeam " << r.beam_size << "\tBLEU " << r.bleu << "\tMETEOR "
        << (r.meteor ? std::to_string(*r.meteor) : std::string("n/a")) << '\n';
    if (!r.meteor_error.empty()) err << "evaluate: METEOR unavailable: " << r.meteor_error << '\n';
  }
  write_file(report_path, report);
  finish_manifest(m, mpath);
  return 0;
}

inline int run_attention_export(const Options& o, std::ostream&, std::ostream& err) {
  auto m = make_manifest("attention-export", o.seed, nlohmann::json::object(), {{"trace", o.trace}}, {});
  ensure_dir(o.out_dir);
  const auto mpath = manifest_path(o, (fs::path(o.out_dir) / "attention-export.manifest.json").string());
  start_manifest(m, mpath);
  auto traces = parse_trace(read_lines(o.trace));
  for (const auto& mat : attention_export(traces)) {
    const auto stem = "sentence" + std::to_string(mat.sentence);
    const auto del = (fs::path(o.out_dir) / (stem + ".delete.tsv")).string();
    const auto ins = (fs::path(o.out_dir) / (stem + ".insert.tsv")).string();
    write_file(del, mat.delete_tsv);
    write_file(ins, mat.insert_tsv);
    m.outputs[stem + ".delete"] = del;
    m.outputs[stem + ".insert"] = ins;
  }
  err << "attention-export: " << traces.size() << " sentences\n";
  finish_manifest(m, mpath);
  return 0;
}

/// Exit status: 0 success, 1 domain error, 2 usage error.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Dictionary-guided paraphrase generation"};
  app.name("dgen");
  app.require_subcommand(1, 1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "Random seed")->capture_default_str();
    sub->add_option("--manifest", o.manifest, "Run manifest path");
  };

  auto* ingest = app.add_subcommand("ingest", "Filter a PPDB file into a dictionary snapshot");
  ingest->add_option("--ppdb", o.ppdb, "PPDB text file")->required();
  ingest->add_option("--out", o.out, "Dictionary snapshot to write")->required();
  ingest->add_option("--max-phrase-len", o.max_phrase_len, "Longest phrase kept, in tokens")->capture_default_str();
  ingest->add_flag("--strict", o.strict, "Fail on malformed lines instead of skipping them");
  common(ingest);

  auto* index = app.add_subcommand("index", "Build the retrieval index for a dictionary");
  index->add_option("--dict", o.dict, "Dictionary snapshot")->required();
  index->add_option("--out", o.out, "Index snapshot to write")->required();
  common(index);

  auto* retrieve = app.add_subcommand("retrieve", "Retrieve dictionary pairs for a sentence");
  retrieve->add_option("--index", o.index, "Index snapshot")->required();
  retrieve->add_option("--sentence", o.sentence, "Input sentence")->required();
  retrieve->add_option("--m", o.m, "Pairs to return")->capture_default_str();
  retrieve->add_option("--k", o.k, "First-stage candidates (default 10*m)");
  retrieve->add_flag("--json", o.json, "One JSON record per pair");
  common(retrieve);

  auto* pre = app.add_subcommand("preprocess", "Build train/valid/test pair files");
  pre->add_option("--format", o.format, "mscoco | quora | pairs")
      ->check(CLI::IsMember({"mscoco", "quora", "pairs"}))
      ->capture_default_str();
  pre->add_option("--input", o.input, "Caption JSON, Quora TSV or source<TAB>target file")->required();
  pre->add_option("--out-dir", o.out_dir, "Directory for train.tsv, valid.tsv, test.tsv")->required();
  pre->add_option("--train-size", o.train_size, "Training pairs (quora)");
  pre->add_option("--valid-size", o.valid_size, "Validation pairs");
  pre->add_option("--test-size", o.test_size, "Test pairs");
  pre->add_option("--max-len", o.max_len, "Token cap (mscoco truncates, quora filters)");
  common(pre);

  auto* tr = app.add_subcommand("train", "Train the editing network");
  tr->add_option("--config", o.config, "key=value config file");
  tr->add_option("--set", o.sets, "Override one config key (key=value)");
  tr->add_option("--train", o.train, "Training pair file")->required();
  tr->add_option("--valid", o.valid, "Validation pair file");
  tr->add_option("--index", o.index, "Index snapshot")->required();
  tr->add_option("--out-dir", o.out_dir, "Directory for metrics.jsonl and best.ckpt")->required();
  common(tr);

  auto* gen = app.add_subcommand("generate", "Paraphrase one sentence per input line");
  gen->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  gen->add_option("--index", o.index, "Index snapshot")->required();
  gen->add_option("--input", o.input, "One sentence per line")->required();
  gen->add_option("--out", o.out, "Output file (default: standard output)");
  gen->add_option("--beam", o.beam, "Beam size; 1 is greedy")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--trace", o.trace, "Attention trace to write");
  common(gen);

  auto* ev = app.add_subcommand("evaluate", "BLEU/METEOR on a test pair file");
  ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  ev->add_option("--index", o.index, "Index snapshot")->required();
  ev->add_option("--test", o.test, "Test pair file")->required();
  ev->add_option("--out-dir", o.out_dir, "Directory for report.jsonl and hypotheses")->required();
  ev->add_option("--beam", o.beams, "Beam sizes")->capture_default_str()->check(CLI::PositiveNumber);
  ev->add_option("--meteor", o.meteor, "METEOR jar or executable");
  ev->add_option("--model", o.model, "Model label in the report")->capture_default_str();
  common(ev);

  auto* ax = app.add_subcommand("attention-export", "Write delete/insert attention matrices from a trace");
  ax->add_option("--trace", o.trace, "Trace file from generate")->required();
  ax->add_option("--out-dir", o.out_dir, "Directory for the matrices")->required();
  common(ax);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "dgen: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (ingest->parsed()) return run_ingest(o, out, err);
    if (index->parsed()) return run_index(o, out, err);
    if (retrieve->parsed()) return run_retrieve(o, out, err);
    if (pre->parsed()) return run_preprocess(o, out, err);
    if (tr->parsed()) return run_train(o, tr->count("--seed") > 0, out, err);
    if (gen->parsed()) return run_generate(o, out, err);
    if (ev->parsed()) return run_evaluate(o, out, err);
    if (ax->parsed()) return run_attention_export(o, out, err);
  } catch (const Error& e) {
    err << "dgen: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "dgen: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace dgen::cli
