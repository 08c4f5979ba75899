#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dgen/checkpoint.hpp"
#include "dgen/model.hpp"
#include "dgen/training.hpp"
#include "support/oracles.hpp"

using namespace dgen;
using dgen::testing::random_dictionary;
using dgen::testing::random_example;
using dgen::testing::random_ids;
using dgen::testing::tiny_config;

TEST(Encoder, ShapesMatchSourceLength) {
  auto cfg = tiny_config();
  auto p = initialize_parameters<double>(cfg, 1);
  for (std::size_t len : {1u, 15u}) {
    auto enc = encode_source(TokenIds(len, 5), p);
    EXPECT_EQ(enc.states.rows(), static_cast<Eigen::Index>(cfg.hidden_dim));
    EXPECT_EQ(enc.states.cols(), static_cast<Eigen::Index>(len));
    EXPECT_TRUE(enc.states.allFinite());
  }
}

TEST(Encoder, FullSizeStatesAre512Wide) {
  ModelConfig cfg;
  cfg.vocab_size = 30;
  auto p = initialize_parameters<float>(cfg, 1);
  auto enc = encode_source(TokenIds(15, 7), p);
  EXPECT_EQ(enc.states.rows(), 512);
  EXPECT_EQ(enc.states.cols(), 15);
}

TEST(Encoder, InferenceIsBitwiseDeterministic) {
  auto p = initialize_parameters<double>(tiny_config(), 2);
  TokenIds src{4, 9, 11, 5};
  auto a = encode_source(src, p), b = encode_source(src, p);
  EXPECT_TRUE((a.states.array() == b.states.array()).all());
}

TEST(Encoder, EmptySourceThrows) {
  auto p = initialize_parameters<double>(tiny_config(), 2);
  try {
    encode_source({}, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySource);
  }
}

TEST(Attention, WeightsAreADistributionOverUnmaskedRows) {
  auto cfg = tiny_config(20, 8, 12, 5);
  auto p = initialize_parameters<double>(cfg, 3, 0.5);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto ed = encode_pairs(random_dictionary(rng, 5, 20, 1), p.embedding, 5);
    Vector<double> h = Vector<double>::Random(12);
    for (const auto& r : {delete_attention(h, ed, p), insert_attention(h, ed, p)}) {
      double sum = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        const double w = r.weights(static_cast<Eigen::Index>(i));
        if (ed.mask[i]) {
          EXPECT_GE(w, 0.0);
          sum += w;
        } else {
          EXPECT_EQ(w, 0.0);
        }
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Attention, AllMaskedGivesZeroContext) {
  auto cfg = tiny_config(20, 8, 12, 4);
  auto p = initialize_parameters<double>(cfg, 3);
  auto ed = encode_pairs<double>({}, p.embedding, 4);
  auto r = delete_attention<double>(Vector<double>::Ones(12), ed, p);
  EXPECT_TRUE(r.weights.isZero(0));
  EXPECT_TRUE(r.context.isZero(0));
  EXPECT_TRUE(r.context.allFinite());
}

TEST(Attention, RowPermutationPermutesWeights) {
  auto cfg = tiny_config(20, 8, 12, 4);
  auto p = initialize_parameters<double>(cfg, 5, 0.5);
  std::mt19937_64 rng(6);
  auto pairs = random_dictionary(rng, 4, 20, 4);
  auto ed = encode_pairs(pairs, p.embedding, 4);
  std::vector<DictionaryPairIds> rev(pairs.rbegin(), pairs.rend());
  auto ed_rev = encode_pairs(rev, p.embedding, 4);
  Vector<double> h = Vector<double>::Random(12);
  auto a = insert_attention(h, ed, p), b = insert_attention(h, ed_rev, p);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(a.weights(i), b.weights(3 - i), 1e-12);
  EXPECT_TRUE(a.context.isApprox(b.context, 1e-12));
}

TEST(Combine, OutputBoundedAndDistributionNormalized) {
  auto cfg = tiny_config();
  auto p = initialize_parameters<double>(cfg, 7, 2.0);
  Vector<double> h = Vector<double>::Random(12) * 10, c = Vector<double>::Random(16) * 10,
                 s = Vector<double>::Random(12) * 10;
  auto ht = combine(h, c, s, p);
  EXPECT_EQ(ht.size(), 12);
  EXPECT_LE(ht.cwiseAbs().maxCoeff(), 1.0);
  auto dist = output_distribution<double>(p.embedding.col(4), ht, c, s, p);
  EXPECT_EQ(dist.size(), 20);
  EXPECT_NEAR(dist.sum(), 1.0, 1e-12);
  EXPECT_GE(dist.minCoeff(), 0.0);
}

TEST(Combine, AblationZeroesDictionaryContext) {
  auto cfg = tiny_config();
  cfg.dictionary_guidance = false;
  auto p = initialize_parameters<double>(cfg, 8, 0.5);
  std::mt19937_64 rng(9);
  auto enc = encode_source(random_ids(rng, 4, 20, 4), p);
  auto ed = encode_pairs(random_dictionary(rng, 3, 20, 3), p.embedding, 3);
  DecodeContext<double> ctx(enc, ed, p);
  auto carry = initial_carry(enc, p);
  auto s = decoder_step_forward(p, ctx, carry, kBos);
  EXPECT_TRUE(s.dict_context.isZero(0));
  EXPECT_NEAR(s.probs.sum(), 1.0, 1e-12);
}

TEST(Loss, UniformDistributionClosedForm) {
  // Two sequences, four gold tokens in total, each with probability 1/20.
  std::vector<std::vector<Vector<double>>> dists(2);
  Vector<double> u = Vector<double>::Constant(20, 1.0 / 20);
  dists[0] = {u, u, u};
  dists[1] = {u, u};
  std::vector<TokenIds> targets{{5, 6, 7}, {8, kPad}};
  // (3 + 1) * ln 20 summed, divided by 2 sequences.
  EXPECT_NEAR(nll_loss(dists, targets), 4.0 * std::log(20.0) / 2.0, 1e-12);
}

TEST(Loss, SequenceLossMatchesStepDistributions) {
  auto cfg = tiny_config();
  auto p = initialize_parameters<double>(cfg, 10, 0.3);
  std::mt19937_64 rng(11);
  auto ex = random_example(rng, cfg, 5, 4);
  auto f = forward_sequence(p, ex);
  double manual = 0;
  for (std::size_t t = 0; t < f.steps.size(); ++t) manual -= std::log(f.steps[t].probs(ex.target[t + 1]));
  EXPECT_NEAR(static_cast<double>(f.loss), manual, 1e-10);
}

TEST(Vocabulary, ThresholdIsStrict) {
  std::vector<Tokens> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back({"ten"});
  for (int i = 0; i < 11; ++i) corpus.push_back({"eleven"});
  auto v = build_vocab(corpus, 10);
  EXPECT_FALSE(v.contains("ten"));
  EXPECT_TRUE(v.contains("eleven"));
  EXPECT_EQ(v.id("ten"), kUnk);
  EXPECT_EQ(v.decode({kBos, v.id("eleven"), kEos, v.id("eleven")}), (Tokens{"eleven"}));
}

TEST(Vocabulary, OrderAndRoundTrip) {
  std::vector<Tokens> corpus{{"b", "a", "c", "a"}, {"b", "a"}};
  auto v = build_vocab(corpus, 0);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<pad>", "<unk>", "<s>", "</s>", "a", "b", "c"}));
  auto back = vocab_from_json(vocab_to_json(v));
  EXPECT_EQ(back.tokens(), v.tokens());
  try {
    build_vocab({}, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCorpus);
  }
}

TEST(GradientCheck, TinyModelPassesAndDetectsFault) {
  auto cfg = tiny_config(12, 4, 6, 2);
  auto p = initialize_parameters<double>(cfg, 12, 0.5);
  std::mt19937_64 rng(13);
  std::vector<TrainingExample> batch{random_example(rng, cfg, 3, 2)};
  auto ok = gradient_check(p, batch);
  EXPECT_LT(ok.max_relative_error, 1e-4);
  EXPECT_LT(ok.max_absolute_error, 1e-8);
  GradientFaults fault;
  fault.corrupt_insert_attention = true;
  EXPECT_GT(gradient_check(p, batch, 1e-5, fault).max_relative_error, 1e-2);
}

TEST(Training, AdamReducesLossAndIsSeeded) {
  auto cfg = tiny_config(16, 6, 8, 2);
  std::mt19937_64 rng(14);
  std::vector<TrainingExample> data;
  for (int i = 0; i < 8; ++i) data.push_back(random_example(rng, cfg, 3, 3));
  TrainingConfig tc;
  tc.embed_dim = 6;
  tc.hidden_dim = 8;
  tc.attn_dim = 8;
  tc.dict_size = 2;
  tc.batch_size = 4;
  tc.max_epochs = 15;
  tc.learning_rate = 0.01;
  tc.dropout = 0.2;
  tc.log_wall_time = false;
  auto init = initialize_parameters<double>(cfg, 1);
  auto first = evaluate_set(init, data).loss;
  auto r1 = train(tc, data, data, init);
  auto r2 = train(tc, data, data, init);
  EXPECT_LT(r1.best_valid_loss, first);
  ASSERT_EQ(r1.log.size(), r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) EXPECT_EQ(r1.log[i].loss, r2.log[i].loss);
  EXPECT_EQ(r1.best.squared_norm(), r2.best.squared_norm());
}

TEST(Training, NonFiniteLossNamesTheBatch) {
  auto cfg = tiny_config(16, 6, 8, 2);
  std::mt19937_64 rng(15);
  std::vector<TrainingExample> data{random_example(rng, cfg, 3, 3)};
  auto p = initialize_parameters<double>(cfg, 1);
  p.output_bias(0, 0) = std::numeric_limits<double>::quiet_NaN();
  TrainingConfig tc;
  tc.embed_dim = 6;
  tc.hidden_dim = 8;
  tc.attn_dim = 8;
  tc.dict_size = 2;
  try {
    train(tc, data, data, p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("[0]"), std::string::npos);
  }
}

TEST(Training, GradientClippingBoundsNorm) {
  auto cfg = tiny_config(8, 2, 2, 1);
  auto g = ModelParameters<double>::zeros(cfg);
  g.output_bias.setConstant(10.0);
  const double before = clip_gradients(g, 5.0);
  EXPECT_NEAR(before, 10.0 * std::sqrt(8.0), 1e-12);
  EXPECT_NEAR(std::sqrt(g.squared_norm()), 5.0, 1e-12);
}

TEST(Config, ParseOverridesAndRejectsUnknownKeys) {
  auto c = parse_config("# comment\nhidden_dim = 64\ndropout=0.1  # inline\ndictionary_guidance=false\n");
  EXPECT_EQ(c.hidden_dim, 64u);
  EXPECT_DOUBLE_EQ(c.dropout, 0.1);
  EXPECT_FALSE(c.dictionary_guidance);
  EXPECT_EQ(c.embed_dim, 300u);
  auto back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  try {
    parse_config("hiden_dim=3");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadConfig);
  }
}

TEST(Checkpoint, RoundTripAndDimensionValidation) {
  auto cfg = tiny_config(8, 4, 6, 2);
  auto p = initialize_parameters<double>(cfg, 16);
  auto vocab = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>", "a", "b", "c", "d"}, 0);
  TrainingConfig tc;
  tc.seed = 99;
  auto bytes = checkpoint_to_bytes(p, vocab, tc);
  auto ck = checkpoint_from_bytes<double>(bytes);
  EXPECT_EQ(ck.params.config, cfg);
  EXPECT_EQ(ck.vocab.tokens(), vocab.tokens());
  EXPECT_EQ(ck.training.seed, 99u);
  auto a = p.tensors(), b = ck.params.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE((a[i].second->array() == b[i].second->array()).all());

  auto bad_vocab = Vocabulary::from_tokens({"<pad>", "<unk>", "<s>", "</s>"}, 0);
  EXPECT_THROW(checkpoint_to_bytes(p, bad_vocab, tc), Error);
  auto truncated = bytes.substr(0, bytes.size() - 8);
  EXPECT_THROW(checkpoint_from_bytes<double>(truncated), Error);
  // A header claiming a different hidden size no longer matches the tensor list.
  auto tampered = bytes;
  auto pos = tampered.find("\"hidden_dim\":6");
  ASSERT_NE(pos, std::string::npos);
  tampered.replace(pos, 14, "\"hidden_dim\":8");
  try {
    checkpoint_from_bytes<double>(tampered);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}
