#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "metaqa/data.hpp"

namespace metaqa {

// Half-open position range [start, end) covering "[ANS] answer-tokens".
struct AnsSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const AnsSpan&) const = default;
};

// Encoder input laid out as "[CLS] q [SEP] [ANS] a_1 ... [ANS] a_k" followed
// by padding. Every per-position array has max_len entries.
struct EncoderInput {
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> position_ids;
  std::vector<std::size_t> segment_ids;
  std::vector<double> confidence_values;
  std::vector<int> attention_mask;
  std::size_t cls_index = 0;
  std::vector<std::optional<AnsSpan>> ans_spans;  // one per agent slot
  std::size_t length = 0;                         // live (unpadded) positions
  std::size_t max_len = 0;

  bool operator==(const EncoderInput&) const = default;
};

// Agent slot -> positions covered by that slot's "[ANS] Ans_j". Absent slots
// have no entry.
using AnsSpanIndex = std::map<std::size_t, std::vector<std::size_t>>;

EncoderInput assemble(const Example& example, const Vocab& vocab, std::size_t max_len);

AnsSpanIndex ans_index_map(const EncoderInput& input);

// Copy of `input` cut down to `len` positions (len >= input.length). Used to
// pad a batch only up to its longest member.
EncoderInput trimmed(const EncoderInput& input, std::size_t len);

}  // namespace metaqa
