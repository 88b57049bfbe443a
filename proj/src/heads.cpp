#include "metaqa/heads.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "metaqa/errors.hpp"
#include "metaqa/metrics.hpp"

namespace metaqa {

HeadWeights HeadWeights::init(std::size_t agents, std::size_t hidden, double init_std, std::mt19937_64& rng) {
  if (agents == 0) throw ConfigError("heads: at least one agent is required");
  std::normal_distribution<double> dist(0.0, init_std);
  auto normal = [&](std::string name, Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return Parameter(std::move(name), std::move(t));
  };
  HeadWeights h;
  for (std::size_t j = 0; j < agents; ++j) {
    h.agsen_weight.push_back(normal("agsen." + std::to_string(j) + ".weight", {hidden, 1}));
    h.agsen_bias.emplace_back("agsen." + std::to_string(j) + ".bias", Tensor({1}));
  }
  h.anssel_weight = normal("anssel.weight", {agents * (hidden + 1), agents});
  h.anssel_bias = Parameter("anssel.bias", Tensor({agents}));
  return h;
}

std::vector<Parameter*> HeadWeights::parameters() {
  std::vector<Parameter*> out = agsen_parameters();
  out.push_back(&anssel_weight);
  out.push_back(&anssel_bias);
  return out;
}

std::vector<Parameter*> HeadWeights::agsen_parameters() {
  std::vector<Parameter*> out;
  for (std::size_t j = 0; j < agents(); ++j) {
    out.push_back(&agsen_weight[j]);
    out.push_back(&agsen_bias[j]);
  }
  return out;
}

Var agsen_scores(Tape& tape, Var cls, HeadWeights& heads, Binding binding) {
  std::vector<Var> probs;
  probs.reserve(heads.agents());
  for (std::size_t j = 0; j < heads.agents(); ++j) {
    Var logit = add(matmul(cls, bind(tape, heads.agsen_weight[j], binding)), bind(tape, heads.agsen_bias[j], binding));
    probs.push_back(sigmoid(logit));
  }
  return concat(probs, 1);
}

Var anssel_logits(Tape& tape, const std::vector<std::optional<Var>>& ans_vecs, Var agsen_probs,
                  const std::vector<bool>& present, HeadWeights& heads, Binding binding, bool detach_scores) {
  const std::size_t k = heads.agents();
  if (ans_vecs.size() != k || present.size() != k || agsen_probs.value().size() != k) {
    throw ContractError("anssel_logits: expected " + std::to_string(k) + " slots");
  }
  bool any = false;
  for (bool p : present) any = any || p;
  if (!any) throw ContractError("anssel_logits: every slot is absent, nothing to select");

  const std::size_t d = heads.anssel_weight.value.rows() / k - 1;
  Var scores = detach_scores ? detach(agsen_probs) : agsen_probs;
  std::vector<Var> pieces;
  pieces.reserve(2 * k);
  Tensor mask({1, k});
  for (std::size_t j = 0; j < k; ++j) {
    if (present[j]) {
      if (!ans_vecs[j]) throw ContractError("anssel_logits: present slot " + std::to_string(j) + " has no [ANS] state");
      pieces.push_back(*ans_vecs[j]);
      pieces.push_back(slice(scores, 1, j, j + 1));
    } else {
      pieces.push_back(tape.constant(Tensor({1, d + 1})));
      mask[j] = -std::numeric_limits<double>::infinity();
    }
  }
  Var x = concat(pieces, 1);
  Var logits = add(matmul(x, bind(tape, heads.anssel_weight, binding)), bind(tape, heads.anssel_bias, binding));
  return add(logits, tape.constant(std::move(mask)));
}

Labels make_labels(const Example& example, const AgentRegistry& registry, const LabelConfig& cfg) {
  if (example.gold_answers.empty()) throw ContractError("make_labels: example " + example.qid + " has no gold answer");
  const std::size_t k = example.candidates.size();
  Labels labels;
  labels.anssel.assign(k, 0);
  labels.agsen.assign(k, 0);
  std::size_t positives = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& c = example.candidates[j];
    if (c.present && max_over_golds(token_f1, c.answer, example.gold_answers) > cfg.theta) {
      labels.anssel[j] = 1;
      ++positives;
    }
    if (j < registry.size() && registry.home_of(j) == example.dataset_id) labels.agsen[j] = 1;
  }
  if (positives > 0) {
    std::vector<double> target(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      if (labels.anssel[j]) target[j] = 1.0 / static_cast<double>(positives);
    }
    labels.anssel_target = std::move(target);
  }
  return labels;
}

LossBreakdown total_loss(Var agsen_probs, Var anssel_logits_var, const Labels& labels, const LossConfig& cfg) {
  const std::size_t k = labels.agsen.size();
  const Tensor& probs = agsen_probs.value();
  if (probs.size() != k) throw ShapeError("total_loss: " + std::to_string(probs.size()) + " AgSeN scores for " +
                                          std::to_string(k) + " labels");
  LossBreakdown out;
  Tensor y({1, k});
  for (std::size_t j = 0; j < k; ++j) {
    y[j] = labels.agsen[j];
    const double p = probs[j];
    out.agsen.push_back(labels.agsen[j] ? -std::log(p) : -std::log1p(-p));
  }
  Var agsen_term = scale(bce(agsen_probs, y), cfg.alpha1 / static_cast<double>(k));
  Var total = agsen_term;
  if (labels.anssel_target) {
    Tensor t({k}, *labels.anssel_target);
    Var ce = cross_entropy(anssel_logits_var, t);
    out.anssel = ce.value().item();
    total = add(agsen_term, scale(ce, cfg.alpha2));
  }
  out.total = total.value().item();
  out.total_var = total;
  return out;
}

std::size_t select_answer(std::span<const double> logits) {
  std::optional<std::size_t> best;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (std::isinf(logits[j]) && logits[j] < 0) continue;
    if (!best || logits[j] > logits[*best]) best = j;
  }
  if (!best) throw ContractError("select_answer: every logit is masked");
  return *best;
}

}  // namespace metaqa
