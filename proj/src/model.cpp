#include "metaqa/model.hpp"

namespace metaqa {

MetaQAModel MetaQAModel::init(const EncoderConfig& config, Vocab vocab, AgentRegistry registry, ModelFlags flags,
                              std::mt19937_64& rng) {
  MetaQAModel m;
  m.encoder = EncoderWeights::init(config, rng);
  m.heads = HeadWeights::init(registry.size(), config.hidden, config.init_std, rng);
  m.vocab = std::move(vocab);
  m.registry = std::move(registry);
  m.flags = flags;
  return m;
}

std::vector<Parameter*> MetaQAModel::parameters() {
  auto out = encoder.parameters();
  for (Parameter* p : heads.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> MetaQAModel::parameters() const {
  auto ps = const_cast<MetaQAModel*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

std::vector<bool> present_slots(const EncoderInput& input) {
  std::vector<bool> present(input.ans_spans.size());
  for (std::size_t j = 0; j < present.size(); ++j) present[j] = input.ans_spans[j].has_value();
  return present;
}

ForwardResult forward(Tape& tape, MetaQAModel& model, const EncoderInput& input, Binding binding, Dropout dropout) {
  Var h0 = embed(tape, input, model.encoder, binding, model.flags.disable_conf_emb);
  Var hl = encode(tape, h0, input, model.encoder, binding, dropout);
  Extracted ex = extract(hl, input);
  ForwardResult r;
  r.agsen_probs = agsen_scores(tape, ex.cls, model.heads, binding);
  r.anssel_logits = anssel_logits(tape, ex.ans, r.agsen_probs, present_slots(input), model.heads, binding,
                                  model.flags.detach_agsen);
  return r;
}

}  // namespace metaqa
