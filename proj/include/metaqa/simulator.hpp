#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaqa/data.hpp"
#include "metaqa/metrics.hpp"

namespace metaqa {

struct DomainSpec {
  std::string id;
  std::vector<std::string> wh_words = {"what"};
  std::size_t style_words = 16;        // size of the domain's question-style pool
  std::size_t question_style_len = 4;  // style words per question
  std::size_t answer_vocab = 150;
  std::size_t answer_min = 1;
  std::size_t answer_max = 4;
  bool answer_clue = true;  // question mentions the first token of its answer
  std::size_t train = 0;
  std::size_t dev = 0;
  std::size_t test = 0;
  std::uint64_t vocab_seed = 0;
  MetricKind metric = MetricKind::kF1;
};

// confidence = clamp(sigmoid(slope * z + bias) + U(-jitter, jitter)), with
// z = +1 when the agent knew the answer and -1 otherwise.
struct Calibration {
  double slope = 2.0;
  double bias = 0.0;
  double jitter = 0.0;
};

struct AgentProfile {
  std::string id;
  std::string home_domain;
  std::map<std::string, double> accuracy;  // per domain id
  double boundary_noise = 0.0;
  Calibration calibration;
};

struct BenchmarkSpec {
  std::vector<DomainSpec> domains;
  std::vector<AgentProfile> agents;
  std::uint64_t seed = 0;

  void validate() const;
  AgentRegistry registry() const;
  EvalMetricConfig metric_config(double theta = 0.7) const;
  const DomainSpec& domain(std::string_view id) const;

  static BenchmarkSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static BenchmarkSpec load(const std::filesystem::path& path);
};

// Deterministic word pools of one domain.
struct DomainLexicon {
  std::vector<std::string> style;
  std::vector<std::string> answers;

  static DomainLexicon build(const DomainSpec& spec);
  std::string sample_answer(const DomainSpec& spec, std::mt19937_64& rng) const;
};

struct Benchmark {
  Dataset train;
  Dataset dev;
  Dataset test;
};

Benchmark generate_benchmark(const BenchmarkSpec& spec, std::uint64_t seed);

// One agent's prediction for one example. With probability accuracy[domain]
// the agent returns the gold answer (perturbed at one boundary with
// probability boundary_noise), otherwise a distractor from the domain.
AnswerCandidate simulate_agent(const AgentProfile& profile, const Example& example, const DomainSpec& domain,
                               const DomainLexicon& lexicon, std::mt19937_64& rng);

struct UnsolvableReport {
  std::map<std::string, double> per_dataset;
  std::map<std::string, std::size_t> counts;
  double overall = 0.0;
  std::size_t total = 0;
};

// Fraction of examples where no present candidate clears theta.
UnsolvableReport describe_oracle(const Dataset& dataset, double theta = 0.7);

// The four-domain benchmark used by the experiments: three domains served at
// 0.9 by their home agent and a minority domain whose home agent is weak but
// where an out-of-domain agent is strong and well calibrated.
BenchmarkSpec standard_benchmark(std::uint64_t seed = 2022);

}  // namespace metaqa
