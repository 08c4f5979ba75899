#include <gtest/gtest.h>

#include <sstream>

#include "dgen/ppdb.hpp"
#include "dgen/text.hpp"

using namespace dgen;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no dgen::Error thrown";
  return ErrorCode::Io;
}

}  // namespace

TEST(Tokenize, QuestionMarkSplitOff) {
  EXPECT_EQ(tokenize("What are the best ways to overcome boredom?"),
            (Tokens{"what", "are", "the", "best", "ways", "to", "overcome", "boredom", "?"}));
}

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, FinalPeriod) { EXPECT_EQ(tokenize("a large tv."), (Tokens{"a", "large", "tv", "."})); }

TEST(Tokenize, CliticsAndQuotes) {
  EXPECT_EQ(tokenize("I can't believe it's \"free\", okay"),
            (Tokens{"i", "ca", "n't", "believe", "it", "'s", "``", "free", "''", ",", "okay"}));
  EXPECT_EQ(tokenize("cannot (really)"), (Tokens{"can", "not", "(", "really", ")"}));
}

TEST(Text, SplitOnKeepsEmptyFields) {
  EXPECT_EQ(split_on("a||b|", "|"), (std::vector<std::string>{"a", "", "b", ""}));
}

TEST(PpdbParse, WellFormedRecord) {
  auto rec = parse_record("[X] ||| overcome ||| get rid of ||| PPDB2.0Score=3.5 ||| 0-0 ||| Equivalence");
  EXPECT_EQ(rec.lhs_label, "[X]");
  EXPECT_EQ(rec.source_phrase, (Tokens{"overcome"}));
  EXPECT_EQ(rec.target_phrase, (Tokens{"get", "rid", "of"}));
  EXPECT_DOUBLE_EQ(rec.features.at("PPDB2.0Score"), 3.5);
  EXPECT_EQ(rec.entailment, Entailment::Equivalence);
}

TEST(PpdbParse, FiveFieldsIsMalformed) {
  EXPECT_EQ(code_of([] { parse_record("[X] ||| a ||| b ||| PPDB2.0Score=1.0 ||| 0-0"); }), ErrorCode::MalformedRecord);
}

TEST(PpdbParse, BadFeatureOrLabelIsMalformed) {
  EXPECT_EQ(code_of([] { parse_record("[X] ||| a ||| b ||| PPDB2.0Score=x ||| 0-0 ||| Equivalence"); }),
            ErrorCode::MalformedRecord);
  EXPECT_EQ(code_of([] { parse_record("[X] ||| a ||| b ||| PPDB2.0Score=1 ||| 0-0 ||| Synonym"); }),
            ErrorCode::MalformedRecord);
}

TEST(PpdbParse, Lowercases) {
  auto rec = parse_record("[X] ||| A TV ||| a television ||| PPDB2.0Score=2.0 ||| 0-0 0-1 ||| Equivalence");
  EXPECT_EQ(rec.source_phrase, (Tokens{"a", "tv"}));
}

TEST(PpdbParse, SerializeRoundTrip) {
  const char* lines[] = {
      "[X] ||| overcome ||| get rid of ||| PPDB2.0Score=3.5 ||| 0-0 ||| Equivalence",
      "[NN] ||| big dog ||| large hound ||| AGigaSim=0.25 PPDB2.0Score=-1.125 ||| 0-0 1-1 ||| ForwardEntailment",
      "[X] ||| x ||| y |||  ||| 0-0 ||| OtherRelated",
  };
  for (const char* l : lines) {
    auto rec = parse_record(l);
    EXPECT_EQ(parse_record(serialize_record(rec)), rec) << l;
  }
}

TEST(PpdbFilter, Rules) {
  IngestConfig cfg;
  auto fwd = parse_record("[X] ||| a ||| b ||| PPDB2.0Score=1 ||| 0-0 ||| ForwardEntailment");
  EXPECT_FALSE(filter_record(fwd, cfg));
  auto long_src = parse_record("[X] ||| a b c d e f g h ||| i j ||| PPDB2.0Score=1 ||| 0-0 ||| Equivalence");
  EXPECT_FALSE(filter_record(long_src, cfg));
  auto ok = parse_record("[X] ||| overcome ||| get rid of ||| PPDB2.0Score=3.5 ||| 0-0 ||| Equivalence");
  auto e = filter_record(ok, cfg);
  ASSERT_TRUE(e);
  EXPECT_DOUBLE_EQ(e->ppdb_score, 3.5);
  EXPECT_EQ(e->target_tokens.size(), 3u);
}

TEST(PpdbBuild, DuplicateKeepsMaxScore) {
  auto d = build_dictionary(std::vector<std::string>{
                                "[X] ||| a ||| b ||| PPDB2.0Score=1.0 ||| 0-0 ||| Equivalence",
                                "[X] ||| a ||| b ||| PPDB2.0Score=2.0 ||| 0-0 ||| Equivalence",
                            },
                            {});
  ASSERT_EQ(d.size(), 1u);
  EXPECT_DOUBLE_EQ(d.entries[0].ppdb_score, 2.0);
}

TEST(PpdbBuild, EmptyStreamThrows) {
  EXPECT_EQ(code_of([] { build_dictionary(std::vector<std::string>{}, {}); }), ErrorCode::EmptyDictionary);
}

TEST(PpdbBuild, DenseIdsAndStrictness) {
  std::vector<std::string> lines{
      "[X] ||| a ||| b ||| PPDB2.0Score=1 ||| 0-0 ||| Equivalence",
      "garbage line",
      "[X] ||| c ||| d ||| PPDB2.0Score=1 ||| 0-0 ||| Equivalence",
      "[X] ||| e ||| f ||| PPDB2.0Score=1 ||| 0-0 ||| Equivalence",
  };
  std::size_t skipped = 0;
  auto d = build_dictionary(lines, {}, &skipped);
  ASSERT_EQ(d.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(d.entries[i].id, static_cast<std::int64_t>(i));
  EXPECT_EQ(skipped, 1u);
  IngestConfig strict;
  strict.strict = true;
  EXPECT_EQ(code_of([&] { build_dictionary(lines, strict); }), ErrorCode::MalformedRecord);
}

TEST(PpdbSnapshot, RoundTripAndIdempotence) {
  std::vector<std::string> lines{
      "[X] ||| overcome ||| get rid of ||| PPDB2.0Score=3.5 ||| 0-0 ||| Equivalence",
      "[X] ||| the best ways ||| the most suitable ways ||| PPDB2.0Score=2 ||| 0-0 ||| Equivalence",
  };
  auto a = build_dictionary(lines, {});
  auto b = build_dictionary(lines, {});
  const auto snap = dictionary_to_snapshot(a);
  EXPECT_EQ(snap, dictionary_to_snapshot(b));
  auto back = dictionary_from_snapshot(snap);
  EXPECT_EQ(back.entries, a.entries);
  EXPECT_EQ(back.source_digest, a.source_digest);
  EXPECT_EQ(dictionary_to_snapshot(back), snap);
}

TEST(PpdbSnapshot, RejectsWrongVersion) {
  auto d = build_dictionary(std::vector<std::string>{"[X] ||| a ||| b ||| PPDB2.0Score=1 ||| 0-0 ||| Equivalence"}, {});
  auto snap = dictionary_to_snapshot(d);
  auto pos = snap.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  snap.replace(pos, 11, "\"version\":9");
  EXPECT_EQ(code_of([&] { dictionary_from_snapshot(snap); }), ErrorCode::BadSnapshot);
}
