#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "metaqa/data.hpp"
#include "metaqa/encoder.hpp"
#include "metaqa/tensor.hpp"

namespace metaqa {

// One d -> 1 affine map per agent (AgSeN) and a single k(d+1) -> k map over
// the concatenated [ANS] states and selection scores (AnsSel).
struct HeadWeights {
  std::vector<Parameter> agsen_weight;  // k x [d x 1]
  std::vector<Parameter> agsen_bias;    // k x [1]
  Parameter anssel_weight;              // [k(d+1) x k]
  Parameter anssel_bias;                // [k]

  std::size_t agents() const { return agsen_weight.size(); }

  static HeadWeights init(std::size_t agents, std::size_t hidden, double init_std, std::mt19937_64& rng);

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> agsen_parameters();
};

struct LossConfig {
  double alpha1 = 0.5;
  double alpha2 = 1.0;
};

struct LabelConfig {
  double theta = 0.7;
};

struct Labels {
  std::vector<int> anssel;                      // candidate j is correct
  std::vector<int> agsen;                       // question is in agent j's domain
  std::optional<std::vector<double>> anssel_target;  // uniform over positives
};

struct LossBreakdown {
  std::vector<double> agsen;  // per-head BCE
  double anssel = 0.0;        // CE, 0 when the example has no positive
  double total = 0.0;
  Var total_var;
};

// Per-head sigmoid(w_j . cls + b_j); returns a [1 x k] row of probabilities.
Var agsen_scores(Tape& tape, Var cls, HeadWeights& heads, Binding binding);

// Concatenates [ans_j ; p_j] per slot (zeros for absent slots), applies the
// AnsSel map and masks absent slots with -inf. With `detach_scores` the AgSeN
// probabilities enter as constants.
Var anssel_logits(Tape& tape, const std::vector<std::optional<Var>>& ans_vecs, Var agsen_probs,
                  const std::vector<bool>& present, HeadWeights& heads, Binding binding, bool detach_scores = false);

Labels make_labels(const Example& example, const AgentRegistry& registry, const LabelConfig& cfg = {});

LossBreakdown total_loss(Var agsen_probs, Var anssel_logits, const Labels& labels, const LossConfig& cfg = {});

// Argmax over unmasked logits; ties go to the lowest slot.
std::size_t select_answer(std::span<const double> logits);

}  // namespace metaqa
