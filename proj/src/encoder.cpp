#include "metaqa/encoder.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "metaqa/errors.hpp"

namespace metaqa {

void EncoderConfig::validate() const {
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    throw ConfigError("encoder: hidden size " + std::to_string(hidden) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder: dropout must lie in [0, 1)");
  if (vocab_size <= kNumSpecials) throw ConfigError("encoder: vocabulary too small");
  if (max_len < 8) throw ConfigError("encoder: max_len must be at least 8");
  if (ffn == 0) throw ConfigError("encoder: ffn size must be positive");
}

namespace {

Parameter normal_param(std::string name, Shape shape, double std_dev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std_dev);
  for (double& v : t.data()) v = dist(rng);
  return Parameter(std::move(name), std::move(t));
}

Parameter const_param(std::string name, Shape shape, double value) {
  return Parameter(std::move(name), Tensor(std::move(shape), value));
}

}  // namespace

EncoderWeights EncoderWeights::init(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t d = config.hidden;
  const double s = config.init_std;
  EncoderWeights w;
  w.config = config;
  w.token = normal_param("embed.token", {config.vocab_size, d}, s, rng);
  w.position = normal_param("embed.position", {config.max_len, d}, s, rng);
  w.segment = normal_param("embed.segment", {2, d}, s, rng);
  w.conf_weight = normal_param("embed.conf.weight", {1, d}, s, rng);
  w.conf_bias = const_param("embed.conf.bias", {d}, 0.0);
  w.layers.resize(config.layers);
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    EncoderLayer& L = w.layers[l];
    L.wq = normal_param(p + "attn.wq", {d, d}, s, rng);
    L.bq = const_param(p + "attn.bq", {d}, 0.0);
    L.wk = normal_param(p + "attn.wk", {d, d}, s, rng);
    L.wv = normal_param(p + "attn.wv", {d, d}, s, rng);
    L.bv = const_param(p + "attn.bv", {d}, 0.0);
    L.wo = normal_param(p + "attn.wo", {d, d}, s, rng);
    L.bo = const_param(p + "attn.bo", {d}, 0.0);
    L.ln1_gamma = const_param(p + "ln1.gamma", {d}, 1.0);
    L.ln1_beta = const_param(p + "ln1.beta", {d}, 0.0);
    L.w1 = normal_param(p + "ffn.w1", {d, config.ffn}, s, rng);
    L.b1 = const_param(p + "ffn.b1", {config.ffn}, 0.0);
    L.w2 = normal_param(p + "ffn.w2", {config.ffn, d}, s, rng);
    L.b2 = const_param(p + "ffn.b2", {d}, 0.0);
    L.ln2_gamma = const_param(p + "ln2.gamma", {d}, 1.0);
    L.ln2_beta = const_param(p + "ln2.beta", {d}, 0.0);
  }
  return w;
}

std::vector<Parameter*> EncoderWeights::parameters() {
  std::vector<Parameter*> out = {&token, &position, &segment, &conf_weight, &conf_bias};
  for (auto& L : layers) {
    for (Parameter* p : {&L.wq, &L.bq, &L.wk, &L.wv, &L.bv, &L.wo, &L.bo, &L.ln1_gamma, &L.ln1_beta, &L.w1, &L.b1,
                         &L.w2, &L.b2, &L.ln2_gamma, &L.ln2_beta}) {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<const Parameter*> EncoderWeights::parameters() const {
  auto ps = const_cast<EncoderWeights*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Var bind(Tape& tape, Parameter& p, Binding binding) {
  return binding == Binding::kTrainable ? tape.param(p) : tape.constant_ref(p.value);
}

Var embed(Tape& tape, const EncoderInput& input, EncoderWeights& w, Binding binding, bool ignore_confidence) {
  const std::size_t n = input.max_len;
  if (input.token_ids.size() != n || input.position_ids.size() != n || input.segment_ids.size() != n ||
      input.confidence_values.size() != n) {
    throw ContractError("embed: per-position arrays disagree with max_len");
  }
  Var tok = embedding(bind(tape, w.token, binding), input.token_ids);
  Var pos = embedding(bind(tape, w.position, binding), input.position_ids);
  Var seg = embedding(bind(tape, w.segment, binding), input.segment_ids);

  Tensor conf({n, 1});
  if (!ignore_confidence) {
    for (std::size_t i = 0; i < n; ++i) conf[i] = input.confidence_values[i];
  }
  Var c = add(matmul(tape.constant(std::move(conf)), bind(tape, w.conf_weight, binding)),
              bind(tape, w.conf_bias, binding));
  return add(add(add(tok, pos), seg), c);
}

namespace {

Var maybe_dropout(Tape& tape, Var x, Dropout& dropout) {
  if (!dropout.active()) return x;
  std::bernoulli_distribution keep(1.0 - dropout.rate);
  const double inv = 1.0 / (1.0 - dropout.rate);
  Tensor mask(x.shape());
  for (double& m : mask.data()) m = keep(*dropout.rng) ? inv : 0.0;
  return mul(x, tape.constant(std::move(mask)));
}

}  // namespace

Var encode(Tape& tape, Var h0, const EncoderInput& input, EncoderWeights& w, Binding binding, Dropout dropout,
           std::vector<Tensor>* attention_probs) {
  const EncoderConfig& cfg = w.config;
  const std::size_t n = input.max_len;
  const std::size_t d = cfg.hidden;
  const std::size_t dh = d / cfg.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor mask_row({1, n});
  for (std::size_t j = 0; j < n; ++j) {
    if (input.attention_mask[j] == 0) mask_row[j] = -std::numeric_limits<double>::infinity();
  }
  Var mask = tape.constant(std::move(mask_row));

  Var h = h0;
  for (auto& L : w.layers) {
    Var q = add(matmul(h, bind(tape, L.wq, binding)), bind(tape, L.bq, binding));
    Var k = matmul(h, bind(tape, L.wk, binding));
    Var v = add(matmul(h, bind(tape, L.wv, binding)), bind(tape, L.bv, binding));
    std::vector<Var> ctx;
    ctx.reserve(cfg.heads);
    for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
      Var qh = slice(q, 1, hd * dh, (hd + 1) * dh);
      Var kh = slice(k, 1, hd * dh, (hd + 1) * dh);
      Var vh = slice(v, 1, hd * dh, (hd + 1) * dh);
      Var scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
      Var probs = softmax_rows(scores);
      if (attention_probs != nullptr) attention_probs->push_back(probs.value());
      ctx.push_back(matmul(probs, vh));
    }
    Var attn = add(matmul(concat(ctx, 1), bind(tape, L.wo, binding)), bind(tape, L.bo, binding));
    attn = maybe_dropout(tape, attn, dropout);
    Var h1 = layer_norm(add(h, attn), bind(tape, L.ln1_gamma, binding), bind(tape, L.ln1_beta, binding), cfg.ln_eps);

    Var inner = gelu(add(matmul(h1, bind(tape, L.w1, binding)), bind(tape, L.b1, binding)));
    Var ff = add(matmul(inner, bind(tape, L.w2, binding)), bind(tape, L.b2, binding));
    ff = maybe_dropout(tape, ff, dropout);
    h = layer_norm(add(h1, ff), bind(tape, L.ln2_gamma, binding), bind(tape, L.ln2_beta, binding), cfg.ln_eps);
  }
  return h;
}

Extracted extract(Var hl, const EncoderInput& input) {
  Extracted out;
  out.cls = slice(hl, 0, input.cls_index, input.cls_index + 1);
  out.ans.resize(input.ans_spans.size());
  for (std::size_t j = 0; j < input.ans_spans.size(); ++j) {
    if (input.ans_spans[j]) out.ans[j] = slice(hl, 0, input.ans_spans[j]->start, input.ans_spans[j]->start + 1);
  }
  return out;
}

}  // namespace metaqa
