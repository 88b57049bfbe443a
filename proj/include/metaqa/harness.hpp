#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "metaqa/data.hpp"
#include "metaqa/encoder.hpp"
#include "metaqa/heads.hpp"
#include "metaqa/metrics.hpp"
#include "metaqa/model.hpp"
#include "metaqa/tensor.hpp"

namespace metaqa {

struct TrainConfig {
  double lr = 5e-5;
  std::size_t batch_size = 6;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 500;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  double alpha1 = 0.5;
  double alpha2 = 1.0;
  double theta = 0.7;
  EncoderConfig encoder;
  bool disable_conf_emb = false;
  bool disable_agsen_loss = false;
  std::size_t max_train_examples = 0;  // 0 = use the whole training set
  std::size_t vocab_max = 5000;
  std::size_t eval_every = 0;  // steps between dev evaluations, 0 = never
  std::size_t log_every = 50;  // steps per loss-curve point
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
  nlohmann::json to_json() const;
};

struct DevPoint {
  std::size_t step = 0;
  double selection_accuracy = 0.0;
};

struct TrainMeta {
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::size_t examples = 0;
  std::string config_hash;
  nlohmann::json config;
  std::vector<double> loss_curve;
  std::vector<DevPoint> dev_curve;
};

struct Checkpoint {
  static constexpr std::string_view kFormat = "metaqa-ckpt/1";
  MetaQAModel model;
  TrainMeta meta;
  double theta = 0.7;
};

// Seeded permutation of the training set, cut to its first `limit` examples
// (all when limit is 0).
std::vector<std::size_t> training_order(std::size_t n, std::size_t limit, std::uint64_t seed);

// Learning rate at optimizer step `step` (0-based): linear warmup to the peak
// followed by linear decay to zero at `total`.
double scheduled_lr(double peak, std::size_t step, std::size_t warmup, std::size_t total);

// The examples a run trains on, in training order.
Dataset training_subset(const Dataset& train_set, const TrainConfig& cfg);

// Weights before the first optimizer step; the vocabulary comes from `subset`.
MetaQAModel initial_model(const Dataset& subset, const TrainConfig& cfg);

Checkpoint train(const Dataset& train_set, const Dataset* dev_set, const TrainConfig& cfg);

struct RunReport {
  MetricsReport metrics;
  double selection_accuracy = 0.0;
  double in_domain_selection_rate = 0.0;
  std::map<std::string, double> agent_chosen_rate;
  std::map<std::string, std::map<std::string, double>> agent_chosen_rate_per_dataset;
  std::vector<std::string> selected_agents;  // per example, dataset order
  std::vector<double> loss_curve;
  std::vector<std::string> ablated;
  std::string strategy = "metaqa";
  double wall_time_s = 0.0;
};

nlohmann::json to_json(const RunReport& r, bool include_timing = false);
nlohmann::json to_json(const MetricsReport& m);

struct EvalOptions {
  std::set<std::string> ablated;
  std::size_t workers = 1;
  EvalMetricConfig metrics;
};

// Marks the ablated agents' candidates absent; checks every id is registered
// and that at least one agent remains.
Dataset ablate(const Dataset& dataset, const std::set<std::string>& agents);

// Model selections for every example (slot indices).
std::vector<std::size_t> predict(Checkpoint& ckpt, const Dataset& dataset, std::size_t workers = 1);

RunReport evaluate(Checkpoint& ckpt, const Dataset& test_set, const EvalOptions& options = {});

// Builds a RunReport for an arbitrary selection vector.
RunReport summarize(const Dataset& dataset, const std::vector<std::size_t>& selections, const EvalMetricConfig& metrics,
                    const std::string& strategy);

// "oracle", "conf_argmax", "router_only" (needs a checkpoint) or
// "fixed_agent:<agent id>".
std::size_t baseline_select(const std::string& strategy, const Example& example, const AgentRegistry& registry,
                            double theta = 0.7, Checkpoint* router = nullptr);

RunReport run_baseline(const std::string& strategy, const Dataset& dataset, const EvalMetricConfig& metrics,
                       Checkpoint* router = nullptr);

struct SweepRow {
  std::size_t train_size = 0;
  double selection_accuracy = 0.0;
  double metric = 0.0;
  double f1 = 0.0;
};

std::vector<SweepRow> efficiency_sweep(const Dataset& train_set, const Dataset& test_set,
                                       const std::vector<std::size_t>& sizes, const TrainConfig& cfg,
                                       const EvalMetricConfig& metrics = {});

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  bool significant = false;
};

// Welch's two-tailed t-test; significant iff p < 0.05.
TTestResult compare_runs(const std::vector<double>& a, const std::vector<double>& b);

// Small random model and batch for checking the gradient of the full loss.
struct GradCheckConfig {
  EncoderConfig encoder;
  std::size_t agents = 3;
  std::size_t examples = 2;
  std::uint64_t seed = 0;
  GradCheckOptions options;

  GradCheckConfig();
  static GradCheckConfig from_json(const nlohmann::json& j);
};

GradReport model_gradcheck(const GradCheckConfig& cfg);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace metaqa
