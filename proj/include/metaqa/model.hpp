#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "metaqa/assembly.hpp"
#include "metaqa/data.hpp"
#include "metaqa/encoder.hpp"
#include "metaqa/heads.hpp"

namespace metaqa {

// Behaviour switches that are part of a trained model rather than of one run.
struct ModelFlags {
  bool disable_conf_emb = false;
  // Set for the "no AgSeN loss" ablation: the selection scores feed AnsSel as
  // constants so the AgSeN heads receive no gradient at all.
  bool detach_agsen = false;

  bool operator==(const ModelFlags&) const = default;
};

struct MetaQAModel {
  EncoderWeights encoder;
  HeadWeights heads;
  Vocab vocab;
  AgentRegistry registry;
  ModelFlags flags;

  static MetaQAModel init(const EncoderConfig& config, Vocab vocab, AgentRegistry registry, ModelFlags flags,
                          std::mt19937_64& rng);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct ForwardResult {
  Var agsen_probs;    // [1 x k]
  Var anssel_logits;  // [1 x k], absent slots at -inf
};

ForwardResult forward(Tape& tape, MetaQAModel& model, const EncoderInput& input, Binding binding,
                      Dropout dropout = {});

// Present flags per slot, taken from the assembled spans.
std::vector<bool> present_slots(const EncoderInput& input);

}  // namespace metaqa
