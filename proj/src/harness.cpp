#include "metaqa/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <mutex>
#include <thread>

#include "metaqa/assembly.hpp"
#include "metaqa/errors.hpp"
#include "metaqa/rng.hpp"

namespace metaqa {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: learning rate must be positive");
  if (batch_size < 1) throw ConfigError("train: batch size must be at least 1");
  if (epochs < 1) throw ConfigError("train: at least one epoch is required");
  if (alpha1 < 0.0 || alpha2 < 0.0) throw ConfigError("train: loss weights must be nonnegative");
  if (!(theta > 0.0 && theta <= 1.0)) throw ConfigError("train: theta must lie in (0, 1]");
  if (weight_decay < 0.0) throw ConfigError("train: weight decay must be nonnegative");
  if (vocab_max <= kNumSpecials) throw ConfigError("train: vocab_max too small");
}

TrainConfig TrainConfig::from_json(const json& j, TrainConfig c) {
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.alpha1 = j.value("alpha1", c.alpha1);
    c.alpha2 = j.value("alpha2", c.alpha2);
    c.theta = j.value("theta", c.theta);
    c.disable_conf_emb = j.value("disable_conf_emb", c.disable_conf_emb);
    c.disable_agsen_loss = j.value("disable_agsen_loss", c.disable_agsen_loss);
    c.max_train_examples = j.value("max_train_examples", c.max_train_examples);
    c.vocab_max = j.value("vocab_max", c.vocab_max);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.log_every = j.value("log_every", c.log_every);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    if (j.contains("encoder")) {
      const json& e = j["encoder"];
      c.encoder.hidden = e.value("hidden", c.encoder.hidden);
      c.encoder.layers = e.value("layers", c.encoder.layers);
      c.encoder.heads = e.value("heads", c.encoder.heads);
      c.encoder.ffn = e.value("ffn", c.encoder.ffn);
      c.encoder.max_len = e.value("max_len", c.encoder.max_len);
      c.encoder.dropout = e.value("dropout", c.encoder.dropout);
      c.encoder.init_std = e.value("init_std", c.encoder.init_std);
      c.encoder.ln_eps = e.value("ln_eps", c.encoder.ln_eps);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"weight_decay", weight_decay},
          {"warmup_steps", warmup_steps},
          {"epochs", epochs},
          {"seed", seed},
          {"alpha1", alpha1},
          {"alpha2", alpha2},
          {"theta", theta},
          {"disable_conf_emb", disable_conf_emb},
          {"disable_agsen_loss", disable_agsen_loss},
          {"max_train_examples", max_train_examples},
          {"vocab_max", vocab_max},
          {"eval_every", eval_every},
          {"log_every", log_every},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"encoder",
           {{"hidden", encoder.hidden},
            {"layers", encoder.layers},
            {"heads", encoder.heads},
            {"ffn", encoder.ffn},
            {"max_len", encoder.max_len},
            {"dropout", encoder.dropout},
            {"init_std", encoder.init_std},
            {"ln_eps", encoder.ln_eps}}}};
}

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void check_registry(const AgentRegistry& expected, const AgentRegistry& got, const char* what) {
  if (expected.agents != got.agents) {
    throw DataError(std::string(what) + ": agent registry does not match the model's");
  }
}

// Decoupled weight decay (matrices only) followed by a bias-corrected Adam
// step. Parameters that are frozen are never touched.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (Parameter* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      if (!p.requires_grad) continue;
      const bool decay = p.value.rank() >= 2;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t e = 0; e < p.value.size(); ++e) {
        const double g = p.grad[e];
        if (decay) p.value[e] *= 1.0 - lr * cfg_.weight_decay;
        m[e] = cfg_.beta1 * m[e] + (1.0 - cfg_.beta1) * g;
        v[e] = cfg_.beta2 * v[e] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[e] / c1;
        const double vhat = v[e] / c2;
        p.value[e] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
      }
    }
  }

 private:
  std::vector<Parameter*> params_;
  const TrainConfig& cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

std::size_t selection_for(MetaQAModel& model, const EncoderInput& input) {
  Tape tape;
  ForwardResult r = forward(tape, model, trimmed(input, input.length), Binding::kFrozen);
  return select_answer(r.anssel_logits.value().data());
}

}  // namespace

std::vector<std::size_t> training_order(std::size_t n, std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, {"shuffle", "subset"}));
  std::shuffle(order.begin(), order.end(), rng);
  if (limit > 0 && limit < n) order.resize(limit);
  return order;
}

double scheduled_lr(double peak, std::size_t step, std::size_t warmup, std::size_t total) {
  if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(std::max<std::size_t>(1, warmup));
  if (total <= warmup) return peak;
  const double remaining = static_cast<double>(total > step ? total - step : 0);
  return peak * std::max(0.0, remaining / static_cast<double>(total - warmup));
}

// ---------------------------------------------------------------------------
// Training

Dataset training_subset(const Dataset& train_set, const TrainConfig& cfg) {
  if (cfg.max_train_examples > train_set.size()) {
    throw ConfigError("train: requested " + std::to_string(cfg.max_train_examples) + " examples but only " +
                      std::to_string(train_set.size()) + " are available");
  }
  Dataset subset;
  subset.registry = train_set.registry;
  subset.split = train_set.split;
  for (std::size_t i : training_order(train_set.size(), cfg.max_train_examples, cfg.seed)) {
    subset.examples.push_back(train_set.examples[i]);
  }
  return subset;
}

MetaQAModel initial_model(const Dataset& subset, const TrainConfig& cfg) {
  EncoderConfig enc = cfg.encoder;
  Vocab vocab = build_vocab(vocab_corpus(subset), cfg.vocab_max);
  enc.vocab_size = vocab.size();
  enc.seed = derive_seed(cfg.seed, {"init"});
  ModelFlags flags;
  flags.disable_conf_emb = cfg.disable_conf_emb;
  flags.detach_agsen = cfg.disable_agsen_loss || cfg.alpha1 == 0.0;
  std::mt19937_64 rng(enc.seed);
  return MetaQAModel::init(enc, std::move(vocab), subset.registry, flags, rng);
}

Checkpoint train(const Dataset& train_set, const Dataset* dev_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.examples.empty()) throw DataError("train: empty training set");
  if (dev_set != nullptr) check_registry(train_set.registry, dev_set->registry, "train: dev set");
  Dataset subset = training_subset(train_set, cfg);
  LossConfig loss_cfg{cfg.alpha1, cfg.alpha2};
  if (cfg.disable_agsen_loss) loss_cfg.alpha1 = 0.0;

  Checkpoint ckpt;
  ckpt.theta = cfg.theta;
  ckpt.model = initial_model(subset, cfg);
  MetaQAModel& model = ckpt.model;
  const EncoderConfig& enc = model.encoder.config;
  if (model.flags.detach_agsen) {
    for (Parameter* p : model.heads.agsen_parameters()) p->requires_grad = false;
  }

  std::vector<EncoderInput> inputs;
  std::vector<Labels> labels;
  inputs.reserve(subset.size());
  labels.reserve(subset.size());
  const LabelConfig label_cfg{cfg.theta};
  for (const auto& ex : subset.examples) {
    inputs.push_back(assemble(ex, model.vocab, enc.max_len));
    labels.push_back(make_labels(ex, model.registry, label_cfg));
  }

  std::vector<EncoderInput> dev_inputs;
  if (dev_set != nullptr && cfg.eval_every > 0) {
    for (const auto& ex : dev_set->examples) dev_inputs.push_back(assemble(ex, model.vocab, enc.max_len));
  }

  auto params = model.parameters();
  AdamW optimizer(params, cfg);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, {"shuffle", "epoch"}));
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, {"dropout"}));
  Dropout dropout{enc.dropout, &dropout_rng};

  const std::size_t n = subset.size();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  std::vector<std::size_t> epoch_order(n);
  std::iota(epoch_order.begin(), epoch_order.end(), std::size_t{0});

  std::size_t step = 0;
  double window_loss = 0.0;
  std::size_t window_steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch > 0) std::shuffle(epoch_order.begin(), epoch_order.end(), shuffle_rng);
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::size_t e = std::min(n, b + cfg.batch_size);
      for (Parameter* p : params) p->zero_grad();
      std::size_t len = 0;
      for (std::size_t i = b; i < e; ++i) len = std::max(len, inputs[epoch_order[i]].length);
      const double inv_batch = 1.0 / static_cast<double>(e - b);
      double batch_loss = 0.0;
      for (std::size_t i = b; i < e; ++i) {
        const std::size_t idx = epoch_order[i];
        Tape tape;
        LossBreakdown lb;
        try {
          ForwardResult fr = forward(tape, model, trimmed(inputs[idx], len), Binding::kTrainable, dropout);
          lb = total_loss(fr.agsen_probs, fr.anssel_logits, labels[idx], loss_cfg);
        } catch (const ContractError& e) {
          throw NumericError("train: forward pass failed at step " + std::to_string(step) + " on " +
                             subset.examples[idx].qid + ": " + e.what());
        }
        batch_loss += lb.total * inv_batch;
        tape.backward(scale(lb.total_var, inv_batch));
      }
      const double lr = scheduled_lr(cfg.lr, step, cfg.warmup_steps, total_steps);
      if (!std::isfinite(batch_loss)) {
        std::string qids;
        for (std::size_t i = b; i < e; ++i) qids += (i > b ? "," : "") + subset.examples[epoch_order[i]].qid;
        throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (lr " + std::to_string(lr) +
                           ", batch " + qids + ")");
      }
      optimizer.step(lr);
      for (const Parameter* p : params) {
        for (double v : p->value.data()) {
          if (!std::isfinite(v)) {
            throw NumericError("train: parameter " + p->name + " became non-finite at step " + std::to_string(step) +
                               " (lr " + std::to_string(lr) + ")");
          }
        }
      }
      ++step;
      window_loss += batch_loss;
      ++window_steps;
      if (cfg.log_every > 0 && window_steps == cfg.log_every) {
        ckpt.meta.loss_curve.push_back(window_loss / static_cast<double>(window_steps));
        window_loss = 0.0;
        window_steps = 0;
      }
      if (!dev_inputs.empty() && step % cfg.eval_every == 0) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < dev_inputs.size(); ++i) {
          const std::size_t sel = selection_for(model, dev_inputs[i]);
          const auto& ex = dev_set->examples[i];
          if (max_over_golds(token_f1, ex.candidates[sel].answer, ex.gold_answers) > cfg.theta) ++correct;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(dev_inputs.size());
        ckpt.meta.dev_curve.push_back({step, acc});
        std::fprintf(stderr, "[train] step %zu/%zu dev selection accuracy %.4f\n", step, total_steps, acc);
      }
    }
  }
  if (window_steps > 0) ckpt.meta.loss_curve.push_back(window_loss / static_cast<double>(window_steps));
  for (Parameter* p : params) p->zero_grad();

  ckpt.meta.seed = cfg.seed;
  ckpt.meta.steps = step;
  ckpt.meta.examples = n;
  ckpt.meta.config = cfg.to_json();
  ckpt.meta.config_hash = hex64(fnv1a(ckpt.meta.config.dump()));
  return ckpt;
}

// ---------------------------------------------------------------------------
// Evaluation

Dataset ablate(const Dataset& dataset, const std::set<std::string>& agents) {
  for (const auto& a : agents) {
    if (!dataset.registry.slot_of(a)) throw ConfigError("ablate: agent '" + a + "' is not registered");
  }
  if (!agents.empty() && agents.size() >= dataset.registry.size()) {
    throw ConfigError("ablate: every agent would be switched off");
  }
  Dataset out = dataset;
  for (auto& ex : out.examples) {
    for (auto& c : ex.candidates) {
      if (agents.contains(c.agent_id)) {
        c.present = false;
        c.answer.clear();
        c.confidence = 0.0;
      }
    }
  }
  return out;
}

std::vector<std::size_t> predict(Checkpoint& ckpt, const Dataset& dataset, std::size_t workers) {
  check_registry(ckpt.model.registry, dataset.registry, "predict");
  const std::size_t n = dataset.size();
  std::vector<std::size_t> selections(n);
  const std::size_t max_len = ckpt.model.encoder.config.max_len;
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      selections[i] = selection_for(ckpt.model, assemble(dataset.examples[i], ckpt.model.vocab, max_len));
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    run_range(0, n);
    return selections;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  std::exception_ptr failure;
  std::mutex failure_mu;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        run_range(lo, hi);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return selections;
}

RunReport summarize(const Dataset& dataset, const std::vector<std::size_t>& selections, const EvalMetricConfig& metrics,
                    const std::string& strategy) {
  RunReport r;
  r.strategy = strategy;
  r.metrics = evaluate(dataset, selections, metrics);
  r.selection_accuracy = r.metrics.overall.accuracy;
  const auto& reg = dataset.registry;
  for (const auto& a : reg.agents) r.agent_chosen_rate[a] = 0.0;
  std::map<std::string, std::size_t> per_count;
  std::size_t in_domain = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Example& ex = dataset.examples[i];
    const std::size_t slot = selections[i];
    const std::string& agent = reg.agents.at(slot);
    r.selected_agents.push_back(agent);
    r.agent_chosen_rate[agent] += 1.0;
    auto& row = r.agent_chosen_rate_per_dataset[ex.dataset_id];
    if (row.empty()) {
      for (const auto& a : reg.agents) row[a] = 0.0;
    }
    row[agent] += 1.0;
    ++per_count[ex.dataset_id];
    if (reg.home_of(slot) == ex.dataset_id) ++in_domain;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, dataset.size()));
  for (auto& [a, v] : r.agent_chosen_rate) v /= n;
  for (auto& [d, row] : r.agent_chosen_rate_per_dataset) {
    for (auto& [a, v] : row) v /= static_cast<double>(per_count[d]);
  }
  r.in_domain_selection_rate = static_cast<double>(in_domain) / n;
  return r;
}

RunReport evaluate(Checkpoint& ckpt, const Dataset& test_set, const EvalOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Dataset ds = ablate(test_set, options.ablated);
  const auto selections = predict(ckpt, ds, options.workers);
  EvalMetricConfig metrics = options.metrics;
  metrics.theta = ckpt.theta;
  RunReport r = summarize(ds, selections, metrics, "metaqa");
  r.loss_curve = ckpt.meta.loss_curve;
  r.ablated.assign(options.ablated.begin(), options.ablated.end());
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------
// Baselines

std::size_t baseline_select(const std::string& strategy, const Example& example, const AgentRegistry& registry,
                            double theta, Checkpoint* router) {
  const auto& cands = example.candidates;
  auto first_present = [&]() -> std::size_t {
    for (std::size_t j = 0; j < cands.size(); ++j) {
      if (cands[j].present) return j;
    }
    throw ContractError("baseline: example " + example.qid + " has no present candidate");
  };

  if (strategy == "oracle") {
    for (std::size_t j = 0; j < cands.size(); ++j) {
      if (cands[j].present && max_over_golds(token_f1, cands[j].answer, example.gold_answers) > theta) return j;
    }
    return first_present();
  }
  if (strategy == "conf_argmax") {
    std::size_t best = first_present();
    for (std::size_t j = best + 1; j < cands.size(); ++j) {
      if (cands[j].present && cands[j].confidence > cands[best].confidence) best = j;
    }
    return best;
  }
  if (strategy == "router_only") {
    if (router == nullptr) throw ConfigError("baseline router_only needs a checkpoint");
    EncoderInput in = assemble(example, router->model.vocab, router->model.encoder.config.max_len);
    Tape tape;
    ForwardResult r = forward(tape, router->model, trimmed(in, in.length), Binding::kFrozen);
    const Tensor& probs = r.agsen_probs.value();
    std::size_t best = first_present();
    for (std::size_t j = best + 1; j < cands.size(); ++j) {
      if (cands[j].present && probs[j] > probs[best]) best = j;
    }
    return best;
  }
  constexpr std::string_view kFixed = "fixed_agent:";
  if (strategy.starts_with(kFixed)) {
    const std::string agent = strategy.substr(kFixed.size());
    auto slot = registry.slot_of(agent);
    if (!slot) throw ConfigError("baseline fixed_agent: unknown agent '" + agent + "'");
    if (!cands[*slot].present) throw ContractError("baseline fixed_agent: agent '" + agent + "' is absent");
    return *slot;
  }
  throw ConfigError("unknown baseline strategy '" + strategy + "'");
}

RunReport run_baseline(const std::string& strategy, const Dataset& dataset, const EvalMetricConfig& metrics,
                       Checkpoint* router) {
  if (router != nullptr) check_registry(router->model.registry, dataset.registry, "baseline");
  std::vector<std::size_t> selections;
  selections.reserve(dataset.size());
  for (const auto& ex : dataset.examples) {
    selections.push_back(baseline_select(strategy, ex, dataset.registry, metrics.theta, router));
  }
  return summarize(dataset, selections, metrics, strategy);
}

// ---------------------------------------------------------------------------
// Data-efficiency sweep

std::vector<SweepRow> efficiency_sweep(const Dataset& train_set, const Dataset& test_set,
                                       const std::vector<std::size_t>& sizes, const TrainConfig& cfg,
                                       const EvalMetricConfig& metrics) {
  std::vector<SweepRow> rows;
  for (std::size_t size : sizes) {
    if (size == 0 || size > train_set.size()) {
      throw ConfigError("sweep: size " + std::to_string(size) + " outside [1, " + std::to_string(train_set.size()) +
                        "]");
    }
    TrainConfig c = cfg;
    c.max_train_examples = size;
    std::fprintf(stderr, "[sweep] training on %zu examples\n", size);
    Checkpoint ckpt = train(train_set, nullptr, c);
    EvalOptions opts;
    opts.metrics = metrics;
    RunReport r = evaluate(ckpt, test_set, opts);
    rows.push_back({size, r.selection_accuracy, r.metrics.overall.metric, r.metrics.overall.f1});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reports

json to_json(const MetricsReport& m) {
  auto row = [](const MetricsRow& r) {
    return json{{"f1", r.f1},           {"exact_match", r.exact_match}, {"accuracy", r.accuracy},
                {"rouge_l", r.rouge_l}, {"metric", r.metric},           {"count", r.count}};
  };
  json j;
  j["overall"] = row(m.overall);
  j["per_dataset"] = json::object();
  for (const auto& [id, r] : m.per_dataset) j["per_dataset"][id] = row(r);
  return j;
}

json to_json(const RunReport& r, bool include_timing) {
  json j;
  j["strategy"] = r.strategy;
  j["metrics"] = to_json(r.metrics);
  j["selection_accuracy"] = r.selection_accuracy;
  j["in_domain_selection_rate"] = r.in_domain_selection_rate;
  j["agent_chosen_rate"] = r.agent_chosen_rate;
  j["agent_chosen_rate_per_dataset"] = r.agent_chosen_rate_per_dataset;
  j["ablated"] = r.ablated;
  j["loss_curve"] = r.loss_curve;
  j["selected_agents"] = r.selected_agents;
  if (include_timing) j["wall_time_s"] = r.wall_time_s;
  return j;
}

}  // namespace metaqa

// ---------------------------------------------------------------------------
// Gradient check on a toy model

namespace metaqa {

GradCheckConfig::GradCheckConfig() {
  encoder.hidden = 32;
  encoder.layers = 2;
  encoder.heads = 2;
  encoder.ffn = 64;
  encoder.vocab_size = 200;
  encoder.max_len = 64;
  encoder.dropout = 0.0;
  encoder.init_std = 0.2;
}

GradCheckConfig GradCheckConfig::from_json(const json& j) {
  GradCheckConfig c;
  try {
    if (j.contains("encoder")) {
      const json& e = j["encoder"];
      c.encoder.hidden = e.value("hidden", c.encoder.hidden);
      c.encoder.layers = e.value("layers", c.encoder.layers);
      c.encoder.heads = e.value("heads", c.encoder.heads);
      c.encoder.ffn = e.value("ffn", c.encoder.ffn);
      c.encoder.vocab_size = e.value("vocab_size", c.encoder.vocab_size);
      c.encoder.max_len = e.value("max_len", c.encoder.max_len);
      c.encoder.init_std = e.value("init_std", c.encoder.init_std);
    }
    c.agents = j.value("agents", c.agents);
    c.examples = j.value("examples", c.examples);
    c.seed = j.value("seed", c.seed);
    c.options.h = j.value("h", c.options.h);
    c.options.tol = j.value("tolerance", c.options.tol);
    c.options.sample = j.value("sample", c.options.sample);
    c.options.corrupt_analytic = j.value("corrupt_gradient", c.options.corrupt_analytic);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gradcheck config: ") + e.what());
  }
  if (c.agents == 0 || c.examples == 0) throw ConfigError("gradcheck config: agents and examples must be positive");
  if (c.encoder.vocab_size <= kNumSpecials + 1) throw ConfigError("gradcheck config: vocab_size too small");
  c.encoder.dropout = 0.0;
  c.encoder.validate();
  return c;
}

GradReport model_gradcheck(const GradCheckConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, {"gradcheck"}));
  std::vector<std::string> tokens = Vocab().tokens();
  for (std::size_t i = tokens.size(); i < cfg.encoder.vocab_size; ++i) tokens.push_back("w" + std::to_string(i));
  Vocab vocab(tokens);
  std::uniform_int_distribution<std::size_t> word(kNumSpecials, tokens.size() - 1);
  std::uniform_int_distribution<std::size_t> len(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto phrase = [&](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + tokens[word(rng)];
    return s;
  };

  AgentRegistry registry;
  for (std::size_t j = 0; j < cfg.agents; ++j) {
    registry.agents.push_back("agent" + std::to_string(j));
    registry.home_domain[registry.agents.back()] = "d" + std::to_string(j % 2);
  }
  std::vector<EncoderInput> inputs;
  std::vector<Labels> labels;
  for (std::size_t i = 0; i < cfg.examples; ++i) {
    Example ex;
    ex.qid = "g" + std::to_string(i);
    ex.dataset_id = "d" + std::to_string(i % 2);
    ex.question = phrase(5);
    for (std::size_t j = 0; j < cfg.agents; ++j) {
      ex.candidates.push_back({registry.agents[j], phrase(len(rng)), unit(rng), true});
    }
    ex.gold_answers = {ex.candidates[i % cfg.agents].answer};
    inputs.push_back(assemble(ex, vocab, cfg.encoder.max_len));
    labels.push_back(make_labels(ex, registry));
  }

  std::mt19937_64 init_rng(derive_seed(cfg.seed, {"init"}));
  MetaQAModel model = MetaQAModel::init(cfg.encoder, vocab, registry, {}, init_rng);
  auto params = model.parameters();
  LossBuilder loss = [&](Tape& tape) {
    std::optional<Var> sum;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      ForwardResult fr = forward(tape, model, trimmed(inputs[i], inputs[i].length), Binding::kTrainable);
      Var l = total_loss(fr.agsen_probs, fr.anssel_logits, labels[i]).total_var;
      sum = sum ? add(*sum, l) : l;
    }
    return *sum;
  };
  GradCheckOptions opts = cfg.options;
  opts.seed = derive_seed(cfg.seed, {"gradcheck", "sample"});
  return grad_check(loss, params, opts);
}

}  // namespace metaqa

namespace metaqa {

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

}  // namespace metaqa
