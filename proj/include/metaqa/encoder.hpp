#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "metaqa/assembly.hpp"
#include "metaqa/tensor.hpp"

namespace metaqa {

struct EncoderConfig {
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  std::size_t vocab_size = 0;
  std::size_t max_len = 128;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  double init_std = 0.02;
  double ln_eps = 1e-12;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// Post-LN transformer block. The key projection carries no bias: a shared
// key offset only shifts every score in a row and cancels in the softmax.
struct EncoderLayer {
  Parameter wq, bq, wk, wv, bv, wo, bo;
  Parameter ln1_gamma, ln1_beta;
  Parameter w1, b1, w2, b2;
  Parameter ln2_gamma, ln2_beta;
};

struct EncoderWeights {
  EncoderConfig config;
  Parameter token;      // [vocab x d]
  Parameter position;   // [max_len x d]
  Parameter segment;    // [2 x d]
  Parameter conf_weight;  // [1 x d]
  Parameter conf_bias;    // [d]
  std::vector<EncoderLayer> layers;

  // Normal(0, init_std) for matrices and tables, zero biases, unit gammas.
  static EncoderWeights init(const EncoderConfig& config, std::mt19937_64& rng);

  // Canonical order used by checkpoints and the optimizer.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// How parameters enter a tape: as differentiable leaves, or as borrowed
// constants (read-only, safe to share across threads).
enum class Binding { kTrainable, kFrozen };

Var bind(Tape& tape, Parameter& p, Binding binding);

struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }
};

// x_i = token + position + segment + f(conf_i), with f(c) = c * conf_weight +
// conf_bias. With `ignore_confidence` every position embeds f(0).
Var embed(Tape& tape, const EncoderInput& input, EncoderWeights& w, Binding binding, bool ignore_confidence = false);

// Runs the encoder stack over H0. Padded positions are masked out of every
// attention row. When `attention_probs` is given it receives one
// [len x len] tensor per (layer, head).
Var encode(Tape& tape, Var h0, const EncoderInput& input, EncoderWeights& w, Binding binding,
           Dropout dropout = {}, std::vector<Tensor>* attention_probs = nullptr);

struct Extracted {
  Var cls;                            // [1 x d]
  std::vector<std::optional<Var>> ans;  // per slot, [1 x d]; empty for absent slots
};

Extracted extract(Var hl, const EncoderInput& input);

}  // namespace metaqa
