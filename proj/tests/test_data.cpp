#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "metaqa/data.hpp"
#include "metaqa/errors.hpp"

using namespace metaqa;

namespace {

const char* kHeader = R"({"format":"metaqa-preds/1","agents":["a1","a2"]})";

std::string with_header(const std::string& body) { return std::string(kHeader) + "\n" + body + "\n"; }

std::string record(const std::string& cands) {
  return R"({"qid":"q1","question":"who won","dataset":"d","gold_answers":["rocky"],"candidates":)" + cands + "}";
}

}  // namespace

TEST(Tokenize, Rules) {
  EXPECT_EQ(tokenize("Tony Gazzo"), (std::vector<std::string>{"tony", "gazzo"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("Mr Chips, 2002"), (std::vector<std::string>{"mr", "chips", ",", "2002"}));
  EXPECT_EQ(tokenize("  a\tb\n"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(tokenize("(x)"), (std::vector<std::string>{"(", "x", ")"}));
}

TEST(Vocab, FrequencyOrder) {
  Vocab v = build_vocab({"a a b"}, 8);
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.id("a"), 5u);
  EXPECT_EQ(v.id("b"), 6u);
  EXPECT_EQ(v.id("zzz"), kUnkId);
}

TEST(Vocab, EmptyCorpusAndTieBreak) {
  Vocab empty = build_vocab({}, 50);
  EXPECT_EQ(empty.size(), kNumSpecials);
  EXPECT_EQ(empty.token(kClsId), "[CLS]");
  EXPECT_EQ(empty.token(kAnsId), "[ANS]");

  Vocab tie = build_vocab({"y x"}, 6);
  EXPECT_EQ(tie.size(), 6u);
  EXPECT_EQ(tie.id("x"), 5u);
  EXPECT_EQ(tie.id("y"), kUnkId);
  EXPECT_THROW(build_vocab({"x"}, 5), ConfigError);
}

TEST(Vocab, RebuildFromTokens) {
  Vocab v = build_vocab({"b c c a"}, 20);
  Vocab copy(v.tokens());
  EXPECT_EQ(copy, v);
  EXPECT_THROW(Vocab(std::vector<std::string>{"x"}), DataError);
}

TEST(Predictions, ParsesInHeaderOrder) {
  auto ds = parse_predictions(
      with_header(record(R"([{"agent":"a2","answer":"apollo","confidence":0.2},{"agent":"a1","answer":"rocky","confidence":0.9}])")));
  ASSERT_EQ(ds.size(), 1u);
  const auto& ex = ds.examples[0];
  ASSERT_EQ(ex.candidates.size(), 2u);
  EXPECT_EQ(ex.candidates[0].agent_id, "a1");
  EXPECT_EQ(ex.candidates[0].confidence, 0.9);
  EXPECT_EQ(ex.candidates[1].answer, "apollo");
  EXPECT_EQ(ds.registry.agents, (std::vector<std::string>{"a1", "a2"}));
}

TEST(Predictions, RejectsBadConfidenceNamingTheLine) {
  try {
    parse_predictions(
        with_header(record(R"([{"agent":"a1","answer":"x","confidence":1.2},{"agent":"a2","answer":"y","confidence":0.1}])")));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Predictions, ValidationFailures) {
  const std::string three = R"({"format":"metaqa-preds/1","agents":["a1","a2","a3"]})";
  const std::string two_cands = record(R"([{"agent":"a1","answer":"x","confidence":0.5},{"agent":"a2","answer":"y","confidence":0.1}])");
  EXPECT_THROW(parse_predictions(three + "\n" + two_cands + "\n"), DataError);
  EXPECT_THROW(parse_predictions(with_header(two_cands + "\n" + two_cands)), DataError);
  EXPECT_THROW(parse_predictions(with_header(record(R"([{"agent":"zz","answer":"x","confidence":0.5}])"))), DataError);
  EXPECT_THROW(parse_predictions(with_header("{not json")), DataError);
  EXPECT_THROW(parse_predictions(""), DataError);
  EXPECT_THROW(parse_predictions(R"({"format":"other","agents":["a"]})"), DataError);
}

TEST(Predictions, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset ds;
  ds.registry.agents = {"x", "y", "z"};
  ds.registry.home_domain = {{"x", "d0"}, {"y", "d1"}};
  for (int i = 0; i < 50; ++i) {
    Example ex;
    ex.qid = "q" + std::to_string(i);
    ex.question = "what is \"item\" " + std::to_string(i) + "?";
    ex.dataset_id = i % 2 ? "d1" : "d0";
    ex.gold_answers = {"g" + std::to_string(i), "alt \\ answer"};
    for (const auto& a : ds.registry.agents) ex.candidates.push_back({a, "ans " + a, u(rng), true});
    if (i % 7 == 0) ex.candidates[1] = {"y", "", 0.0, false};
    ds.examples.push_back(ex);
  }
  const std::string text = serialize_predictions(ds);
  Dataset back = parse_predictions(text);
  ASSERT_EQ(back, ds);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double a = ds.examples[i].candidates[j].confidence, b = back.examples[i].candidates[j].confidence;
      EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
    }
  EXPECT_EQ(serialize_predictions(back), text);
}

TEST(Registry, SlotsAndDomains) {
  AgentRegistry r{{"a", "b"}, {{"b", "news"}}};
  EXPECT_EQ(r.slot_of("b"), 1u);
  EXPECT_FALSE(r.slot_of("c"));
  EXPECT_EQ(r.home_of(1), "news");
  EXPECT_EQ(r.home_of(0), "");
}
