#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

#include <sys/stat.h>

#include "dgen/data_prep.hpp"
#include "dgen/evaluation.hpp"
#include "dgen/trace.hpp"
#include "support/oracles.hpp"

using namespace dgen;
namespace fs = std::filesystem;

namespace {

std::vector<CaptionGroup> caption_groups(std::size_t n, std::size_t captions_each) {
  std::vector<CaptionGroup> g;
  for (std::size_t i = 0; i < n; ++i) {
    CaptionGroup grp{"img" + std::to_string(i), {}};
    for (std::size_t c = 0; c < captions_each; ++c)
      grp.captions.push_back("image " + std::to_string(i) + " caption number " + std::to_string(c));
    g.push_back(grp);
  }
  return g;
}

std::string image_of(const ParallelPair& p) { return p.source.at(1); }

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dgen-test-" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::string fake_tool(const std::string& name, const std::string& body) {
  auto path = temp_path(name);
  write_file(path.string(), "#!/bin/sh\n" + body + "\n");
  ::chmod(path.c_str(), 0755);
  return path.string();
}

}  // namespace

TEST(Mscoco, TwelveOrderedPairsFromFiveCaptions) {
  MscocoConfig cfg;
  cfg.test_size = 0;
  cfg.valid_size = 0;
  auto s = make_mscoco_pairs(caption_groups(1, 5), 1, cfg);
  ASSERT_EQ(s.train.pairs.size(), 12u);
  std::set<std::pair<Tokens, Tokens>> distinct;
  for (const auto& p : s.train.pairs) {
    EXPECT_NE(p.source, p.target);
    distinct.insert({p.source, p.target});
  }
  EXPECT_EQ(distinct.size(), 12u);
}

TEST(Mscoco, TruncatesToFifteenTokens) {
  std::string caption;
  for (int i = 0; i < 17; ++i) caption += "w" + std::to_string(i) + " ";
  MscocoConfig cfg;
  cfg.test_size = cfg.valid_size = 0;
  auto s = make_mscoco_pairs({{"x", {caption, caption + "extra"}}}, 1, cfg);
  ASSERT_EQ(s.train.pairs.size(), 2u);
  EXPECT_EQ(s.train.pairs[0].source.size(), 15u);
  EXPECT_EQ(s.train.pairs[0].source.back(), "w14");
}

TEST(Mscoco, SmallGroupsSkippedAndSplitsAreImageDisjoint) {
  auto groups = caption_groups(40, 5);
  groups.push_back({"lonely", {"just one caption"}});
  MscocoConfig cfg;
  cfg.test_size = 50;
  cfg.valid_size = 30;
  auto a = make_mscoco_pairs(groups, 7, cfg);
  auto b = make_mscoco_pairs(groups, 7, cfg);
  EXPECT_EQ(a.skipped, 1u);
  EXPECT_EQ(a.test.pairs.size(), 50u);
  EXPECT_EQ(a.valid.pairs.size(), 30u);
  EXPECT_EQ(pairs_to_text(a.train), pairs_to_text(b.train));
  EXPECT_EQ(pairs_to_text(a.test), pairs_to_text(b.test));
  std::set<std::string> train_imgs, other;
  for (const auto& p : a.train.pairs) train_imgs.insert(image_of(p));
  for (const auto& c : {&a.valid, &a.test})
    for (const auto& p : c->pairs) other.insert(image_of(p));
  for (const auto& img : other) EXPECT_FALSE(train_imgs.count(img)) << img;
  for (const auto& c : {&a.train, &a.valid, &a.test})
    for (const auto& p : c->pairs) EXPECT_LE(p.source.size(), 15u);
}

TEST(Mscoco, ParsesAnnotationJson) {
  auto g = parse_caption_groups(R"({"annotations":[{"image_id":3,"caption":"A dog."},{"image_id":3,"caption":"A hound."},
                                 {"image_id":"x","caption":"Cat."}]})");
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].image_id, "3");
  EXPECT_EQ(g[0].captions.size(), 2u);
  EXPECT_THROW(parse_caption_groups(R"([{"image_id":1}])"), Error);
}

TEST(Quora, FiltersAndSplitsExactly) {
  std::vector<std::string> lines{"id\tqid1\tqid2\tquestion1\tquestion2\tis_duplicate"};
  std::string long_q;
  for (int i = 0; i < 31; ++i) long_q += "w ";
  for (int i = 0; i < 200; ++i)
    lines.push_back(std::to_string(i) + "\t0\t0\tHow do I learn " + std::to_string(i) + "?\tWhat is the way to learn " +
                    std::to_string(i) + "?\t1");
  lines.push_back("900\t0\t0\tIs this a dup?\tIs that one?\t0");
  lines.push_back("901\t0\t0\t" + long_q + "\tshort one\t1");
  std::size_t bad = 0;
  auto recs = parse_quora_records(lines, &bad);
  EXPECT_EQ(bad, 0u);
  QuoraConfig cfg;
  cfg.train_size = 150;
  cfg.valid_size = 20;
  cfg.test_size = 30;
  auto s = make_quora_pairs(recs, 3, cfg);
  EXPECT_EQ(s.skipped, 2u);
  EXPECT_EQ(s.train.pairs.size(), 150u);
  EXPECT_EQ(s.valid.pairs.size(), 20u);
  EXPECT_EQ(s.test.pairs.size(), 30u);
  std::set<Tokens> seen;
  for (const auto& c : {&s.train, &s.valid, &s.test})
    for (const auto& p : c->pairs) {
      EXPECT_TRUE(seen.insert(p.source).second);
      EXPECT_LE(p.source.size(), 30u);
      EXPECT_LE(p.target.size(), 30u);
    }
  // Default sizes shrink proportionally on a small corpus.
  auto small = make_quora_pairs(recs, 3);
  EXPECT_EQ(small.train.pairs.size() + small.valid.pairs.size() + small.test.pairs.size(), 200u);
  EXPECT_EQ(small.test.pairs.size(), 200u * 4000 / 154000);
}

TEST(PairFiles, RoundTrip) {
  ParallelCorpus c{"train", {{{"a", "b"}, {"c"}}, {{"d"}, {"e", "f"}}}};
  auto path = temp_path("pairs.tsv").string();
  write_file(path, pairs_to_text(c));
  EXPECT_EQ(read_pair_file(path).pairs, c.pairs);
}

TEST(Bleu, PerfectAndDisjoint) {
  Tokens s{"the", "cat", "sat", "on", "the", "mat"};
  EXPECT_NEAR(bleu({{s, {s}}}), 100.0, 1e-9);
  EXPECT_EQ(bleu({{{"x", "y", "z", "w"}, {s}}}), 0.0);
}

TEST(Bleu, MultiReferenceClippingUsesSingleReferenceMax) {
  auto st = bleu_stats({{{"b", "b"}, {{"a", "b"}, {"b", "c"}}}}, 1);
  EXPECT_EQ(st.matches[0], 1);
  EXPECT_EQ(st.totals[0], 2);
  EXPECT_NEAR(bleu({{{"b", "b"}, {{"a", "b"}, {"b", "c"}}}}, 1), 50.0, 1e-9);
}

TEST(Bleu, HandSizedCorpusMatchesOracle) {
  std::vector<EvalRecord> recs{
      {tokenize("the cat is on the mat"), {tokenize("the cat sat on the mat"), tokenize("there is a cat on the mat")}},
      {tokenize("a man rides a horse on the beach"), {tokenize("a man riding a horse on a beach")}},
      {tokenize("two dogs are playing in snow"), {tokenize("two dogs are playing in the snow")}},
  };
  const double got = bleu(recs);
  EXPECT_NEAR(got, dgen::testing::oracle_bleu(recs), 1e-6);
  EXPECT_GT(got, 0.0);
  EXPECT_LT(got, 100.0);
}

TEST(Bleu, OrderInvariantAndDuplicatePerfectMatchMonotone) {
  std::vector<EvalRecord> recs{
      {tokenize("a b c d e"), {tokenize("a b c d f")}},
      {tokenize("a b x d e f"), {tokenize("a b c d e f")}},
  };
  const double base = bleu(recs);
  std::vector<EvalRecord> rev(recs.rbegin(), recs.rend());
  EXPECT_DOUBLE_EQ(bleu(rev), base);
  auto more = recs;
  more.push_back({tokenize("g h i j k"), {tokenize("g h i j k")}});
  EXPECT_GE(bleu(more), base);
}

TEST(Bleu, BrevityPenaltyUsesClosestShorterOnTie) {
  // Hypothesis of 4 tokens, references of 3 and 5: tie broken to 3, so no penalty.
  auto st = bleu_stats({{{"a", "b", "c", "d"}, {{"a", "b", "c"}, {"a", "b", "c", "d", "e"}}}});
  EXPECT_EQ(st.reference_length, 3);
}

TEST(Meteor, MissingToolIsUnavailable) {
  try {
    meteor({{{"a"}, {{"a"}}}}, "/nonexistent/meteor-1.5.jar");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ToolUnavailable);
  }
}

TEST(Meteor, ParsesFinalScorePassThrough) {
  auto tool = fake_tool("meteor_ok.sh", "echo 'Segment 1 score: 1.0'\necho 'Final score:            1.0'");
  EXPECT_DOUBLE_EQ(meteor({{{"a", "b"}, {{"a", "b"}}}}, tool), 1.0);
}

TEST(Meteor, PassesReferenceCountAndInterleavesReferences) {
  const auto side = temp_path("meteor_side.txt").string();
  auto tool = fake_tool("meteor_args.sh", "shift 2\necho \"$*\" > " + side + "\necho 'Final score: 0.25'");
  auto tool_refs = fake_tool("meteor_refs.sh", "cat \"$2\" > " + side + "\necho 'Final score: 0.5'");
  const std::vector<EvalRecord> recs{{{"x"}, {{"r1"}, {"r2"}}}, {{"y"}, {{"s1"}}}};
  EXPECT_DOUBLE_EQ(meteor(recs, tool), 0.25);
  EXPECT_EQ(read_file(side), "-l en -norm -r 2\n");
  EXPECT_DOUBLE_EQ(meteor(recs, tool_refs), 0.5);
  EXPECT_EQ(read_file(side), "r1\nr2\ns1\ns1\n");
}

TEST(Meteor, MalformedOutputIsUnparseable) {
  auto tool = fake_tool("meteor_bad.sh", "echo 'something went sideways'");
  try {
    meteor({{{"a"}, {{"a"}}}}, tool);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ToolOutputUnparseable);
    EXPECT_NE(std::string(e.what()).find("sideways"), std::string::npos);
  }
}

TEST(Trace, RoundTripAndExportShape) {
  SentenceTrace s;
  s.sentence = 0;
  s.source = {"how", "to", "overcome", "boredom"};
  s.m = 3;
  s.dictionary = {{"overcome", "get rid of"}, {"boredom", "tedium"}};
  s.tokens = {"how", "to", "</s>"};
  for (std::size_t t = 0; t < 3; ++t)
    s.steps.push_back({t, 0, {0.5, 0.5, 0.0}, {0.25, 0.75, 0.0}, {0.1, 0.2, 0.3, 0.4}});
  auto text = trace_to_jsonl(s);
  auto back = parse_trace(split_on(text, "\n"));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].tokens, s.tokens);
  EXPECT_EQ(back[0].steps.size(), 3u);
  auto mats = attention_export(back);
  ASSERT_EQ(mats.size(), 1u);
  auto rows = split_on(mats[0].insert_tsv, "\n");
  ASSERT_EQ(rows.size(), 5u);  // header + M rows + trailing empty
  EXPECT_EQ(split_on(rows[0], "\t").size(), 4u);
  EXPECT_EQ(rows[1].substr(0, rows[1].find('\t')), "overcome → get rid of");
  EXPECT_EQ(rows[3].substr(0, rows[3].find('\t')), "<pad>");
  EXPECT_EQ(split_on(rows[2], "\t")[1], "0.75");
}

TEST(Trace, MalformedInputRejected) {
  auto expect_malformed = [](std::vector<std::string> lines) {
    try {
      parse_trace(lines);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MalformedTrace);
    }
  };
  expect_malformed({"not json"});
  expect_malformed({R"({"sentence":0,"step":0,"token":"a","a":[1],"a_prime":[1],"src":[1]})"});
  expect_malformed({R"({"sentence":0,"source":["x"],"dictionary":[],"m":2})",
                    R"({"sentence":0,"step":0,"token":"a","a":[1],"a_prime":[1],"src":[1]})"});
}
