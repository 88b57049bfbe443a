#include <gtest/gtest.h>

#include <cstring>

#include "metaqa/errors.hpp"
#include "metaqa/harness.hpp"
#include "metaqa/simulator.hpp"

using namespace metaqa;

namespace {

// Two domains, two perfectly calibrated agents that are always right at home
// and always wrong away from it.
BenchmarkSpec separable_spec(std::size_t train) {
  BenchmarkSpec spec;
  spec.seed = 3;
  for (const char* id : {"left", "right"}) {
    DomainSpec d;
    d.id = id;
    d.wh_words = {std::string(id) == "left" ? "who" : "where"};
    d.train = train;
    d.dev = 10;
    d.test = 60;
    d.answer_max = 2;
    d.vocab_seed = id[0];
    spec.domains.push_back(d);
  }
  for (const char* home : {"left", "right"}) {
    AgentProfile a;
    a.id = std::string(home) + "_agent";
    a.home_domain = home;
    a.accuracy = {{"left", std::string(home) == "left" ? 1.0 : 0.0}, {"right", std::string(home) == "right" ? 1.0 : 0.0}};
    a.calibration = {4.0, 0.0, 0.0};
    spec.agents.push_back(a);
  }
  return spec;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.warmup_steps = 5;
  c.encoder.hidden = 16;
  c.encoder.heads = 2;
  c.encoder.ffn = 32;
  c.encoder.layers = 1;
  c.encoder.max_len = 32;
  c.encoder.dropout = 0.1;
  c.log_every = 10;
  c.seed = 7;
  return c;
}

struct Toy {
  Benchmark bench = generate_benchmark(separable_spec(150), 3);
};

const Toy& toy() {
  static const Toy t;
  return t;
}

bool same_bytes(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST(Schedule, WarmupThenLinearDecay) {
  EXPECT_EQ(scheduled_lr(1.0, 0, 10, 110), 0.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 5, 10, 110), 0.5);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 10, 10, 110), 1.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(1.0, 60, 10, 110), 0.5);
  EXPECT_EQ(scheduled_lr(1.0, 110, 10, 110), 0.0);
  EXPECT_DOUBLE_EQ(scheduled_lr(2.0, 3, 0, 5), 2.0 * 2.0 / 5.0);
}

TEST(TrainingOrder, SeededPrefix) {
  auto a = training_order(100, 10, 1);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_EQ(a, training_order(100, 10, 1));
  EXPECT_NE(a, training_order(100, 10, 2));
  auto full = training_order(100, 0, 1);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), full.begin()));
}

TEST(Train, LearnsSeparableToy) {
  const Dataset& tr = toy().bench.train;
  Checkpoint ckpt = train(tr, nullptr, toy_config());
  EXPECT_EQ(ckpt.meta.steps, 50u);
  RunReport r = evaluate(ckpt, tr);
  EXPECT_GE(r.selection_accuracy, 0.9);
  ASSERT_FALSE(r.loss_curve.empty());
  EXPECT_LT(r.loss_curve.back(), r.loss_curve.front());
}

TEST(Train, SameSeedSameCheckpoint) {
  const Dataset& tr = toy().bench.train;
  TrainConfig c = toy_config();
  c.max_train_examples = 60;
  const std::string a = serialize_checkpoint(train(tr, nullptr, c));
  EXPECT_EQ(a, serialize_checkpoint(train(tr, nullptr, c)));
  c.seed = 8;
  EXPECT_NE(a, serialize_checkpoint(train(tr, nullptr, c)));
}

TEST(Train, ZeroAgsenWeightFreezesAgsen) {
  const Dataset& tr = toy().bench.train;
  TrainConfig c = toy_config();
  c.max_train_examples = 60;
  c.alpha1 = 0.0;
  MetaQAModel before = initial_model(training_subset(tr, c), c);
  Checkpoint after = train(tr, nullptr, c);
  auto pb = before.heads.agsen_parameters();
  auto pa = after.model.heads.agsen_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(same_bytes(pa[i]->value, pb[i]->value)) << pa[i]->name;
  EXPECT_FALSE(same_bytes(after.model.heads.anssel_weight.value, before.heads.anssel_weight.value));
}

TEST(Train, ConfigErrors) {
  const Dataset& tr = toy().bench.train;
  TrainConfig c = toy_config();
  c.max_train_examples = tr.size() + 1;
  EXPECT_THROW(train(tr, nullptr, c), ConfigError);
  c = toy_config();
  c.batch_size = 0;
  EXPECT_THROW(train(tr, nullptr, c), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"lr", "fast"}}), ConfigError);
}

TEST(Train, NonFiniteLossIsReported) {
  Dataset tr = toy().bench.train;
  TrainConfig c = toy_config();
  c.max_train_examples = 12;
  c.lr = 1e200;
  c.warmup_steps = 0;
  try {
    train(tr, nullptr, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Train, ConfigJsonRoundTrip) {
  TrainConfig c = toy_config();
  c.disable_conf_emb = true;
  TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

class Trained : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    TrainConfig c = toy_config();
    c.max_train_examples = 120;
    ckpt_ = new Checkpoint(train(toy().bench.train, nullptr, c));
  }
  static void TearDownTestSuite() { delete ckpt_; }
  static Checkpoint* ckpt_;
};
Checkpoint* Trained::ckpt_ = nullptr;

TEST_F(Trained, CheckpointRoundTripIsByteExact) {
  const std::string bytes = serialize_checkpoint(*ckpt_);
  Checkpoint back = deserialize_checkpoint(bytes);
  auto a = ckpt_->model.parameters();
  auto b = back.model.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_bytes(a[i]->value, b[i]->value)) << a[i]->name;
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_EQ(back.model.vocab, ckpt_->model.vocab);
  EXPECT_EQ(back.model.registry, ckpt_->model.registry);
}

TEST_F(Trained, DamagedCheckpointsAreRejected) {
  const std::string bytes = serialize_checkpoint(*ckpt_);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 9)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 40)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(""), CheckpointError);
  std::string wrong = bytes;
  wrong.replace(wrong.find("metaqa-ckpt/1"), 13, "metaqa-ckpt/9");
  EXPECT_THROW(deserialize_checkpoint(wrong), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.bin"), CheckpointError);
}

TEST_F(Trained, EvaluationIsRepeatableAndThreadCountFree) {
  const Dataset& test = toy().bench.test;
  Checkpoint loaded = deserialize_checkpoint(serialize_checkpoint(*ckpt_));
  EvalOptions one, four;
  four.workers = 4;
  const auto a = to_json(evaluate(loaded, test, one)).dump();
  EXPECT_EQ(a, to_json(evaluate(loaded, test, one)).dump());
  EXPECT_EQ(a, to_json(evaluate(loaded, test, four)).dump());
}

TEST_F(Trained, AblationNeverSelectsTheAblatedAgent) {
  const Dataset& test = toy().bench.test;
  const std::string before = serialize_checkpoint(*ckpt_);
  RunReport full = evaluate(*ckpt_, test);
  EXPECT_TRUE(full.ablated.empty());
  for (const auto& agent : test.registry.agents) {
    EvalOptions o;
    o.ablated = {agent};
    RunReport r = evaluate(*ckpt_, test, o);
    for (const auto& s : r.selected_agents) EXPECT_NE(s, agent);
    EXPECT_EQ(r.agent_chosen_rate.at(agent), 0.0);
  }
  EXPECT_EQ(serialize_checkpoint(*ckpt_), before);
}

TEST_F(Trained, AblationErrors) {
  const Dataset& test = toy().bench.test;
  EvalOptions ghost;
  ghost.ablated = {"ghost_agent"};
  try {
    evaluate(*ckpt_, test, ghost);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost_agent"), std::string::npos);
  }
  EvalOptions all;
  all.ablated = {"left_agent", "right_agent"};
  EXPECT_THROW(evaluate(*ckpt_, test, all), ConfigError);
}

TEST_F(Trained, RouterOnlyFollowsAgsen) {
  const Dataset& test = toy().bench.test;
  RunReport r = run_baseline("router_only", test, {}, ckpt_);
  for (std::size_t i = 0; i < test.size(); ++i) {
    Tape tape;
    const Example& ex = test.examples[i];
    EncoderInput in = assemble(ex, ckpt_->model.vocab, ckpt_->model.encoder.config.max_len);
    ForwardResult f = forward(tape, ckpt_->model, in, Binding::kFrozen);
    const auto& p = f.agsen_probs.value();
    EXPECT_EQ(r.selected_agents[i], test.registry.agents[p[1] > p[0] ? 1 : 0]);
  }
}

TEST(Baselines, Definitions) {
  AgentRegistry reg{{"a", "b", "c"}, {}};
  Example ex{"q", "q", "d", {"rocky"}, {{"a", "x", 0.3, true}, {"b", "y", 0.9, true}, {"c", "rocky", 0.1, true}}};
  EXPECT_EQ(baseline_select("oracle", ex, reg), 2u);
  EXPECT_EQ(baseline_select("conf_argmax", ex, reg), 1u);
  EXPECT_EQ(baseline_select("fixed_agent:c", ex, reg), 2u);
  EXPECT_THROW(baseline_select("fixed_agent:z", ex, reg), ConfigError);
  EXPECT_THROW(baseline_select("router_only", ex, reg), ConfigError);
  EXPECT_THROW(baseline_select("vote", ex, reg), ConfigError);
  ex.candidates[1].present = false;
  EXPECT_EQ(baseline_select("conf_argmax", ex, reg), 0u);
  ex.candidates[2].answer = "nope";
  EXPECT_EQ(baseline_select("oracle", ex, reg), 0u);
}

TEST(Baselines, OracleAccuracyIsOneMinusUnsolvable) {
  Benchmark b = generate_benchmark(standard_benchmark(), 2022);
  RunReport r = run_baseline("oracle", b.test, {});
  EXPECT_EQ(r.selection_accuracy, 1.0 - describe_oracle(b.test).overall);
}

TEST(Sweep, RowsMatchDirectRuns) {
  const Toy& t = toy();
  TrainConfig c = toy_config();
  auto rows = efficiency_sweep(t.bench.train, t.bench.test, {30, 90}, c);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].train_size, 30u);
  c.max_train_examples = 90;
  Checkpoint direct = train(t.bench.train, nullptr, c);
  EXPECT_EQ(rows[1].selection_accuracy, evaluate(direct, t.bench.test).selection_accuracy);
  EXPECT_THROW(efficiency_sweep(t.bench.train, t.bench.test, {100000}, c), ConfigError);
}

TEST(Welch, OracleValues) {
  TTestResult r = compare_runs({2.1, 2.5, 2.3, 2.2}, {1.9, 2.0, 2.1, 1.8});
  // reference: scipy.stats.ttest_ind(..., equal_var=False)
  EXPECT_NEAR(r.t, 3.0361458822299396, 1e-4);
  EXPECT_NEAR(r.p, 0.025081308884364682, 1e-4);
  EXPECT_NEAR(r.df, 5.584615384615387, 1e-9);
  EXPECT_TRUE(r.significant);

  TTestResult five = compare_runs({0.81, 0.84, 0.83, 0.80, 0.85}, {0.79, 0.80, 0.78, 0.82, 0.77});
  EXPECT_NEAR(five.t, 2.6879360111431203, 1e-4);
  EXPECT_NEAR(five.p, 0.027723802616785326, 1e-4);
}

TEST(Welch, Limits) {
  TTestResult same = compare_runs({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0});
  EXPECT_EQ(same.t, 0.0);
  EXPECT_EQ(same.p, 1.0);
  EXPECT_FALSE(same.significant);
  TTestResult sep = compare_runs({10.0, 10.001, 9.999}, {0.0, 0.001, -0.001});
  EXPECT_LT(sep.p, 1e-6);
  EXPECT_TRUE(sep.significant);
  TTestResult flat = compare_runs({1.0, 1.0}, {1.0, 1.0});
  EXPECT_EQ(flat.p, 1.0);
  EXPECT_THROW(compare_runs({1.0}, {1.0, 2.0}), ContractError);
}
