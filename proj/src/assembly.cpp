#include "metaqa/assembly.hpp"

#include <algorithm>
#include <numeric>

#include "metaqa/errors.hpp"

namespace metaqa {

EncoderInput assemble(const Example& example, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 8) throw ContractError("assemble: max_len must be at least 8");
  if (example.candidates.empty()) throw ContractError("assemble: example " + example.qid + " has no candidates");

  std::vector<std::size_t> question;
  for (const auto& tok : tokenize(example.question)) question.push_back(vocab.id(tok));
  if (question.size() + 2 > max_len) {
    throw AssemblyError("assemble: question of " + example.qid + " needs " + std::to_string(question.size() + 2) +
                        " positions, max_len is " + std::to_string(max_len));
  }

  const std::size_t k = example.candidates.size();
  std::vector<std::vector<std::size_t>> answers(k);
  std::size_t present = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& c = example.candidates[j];
    if (!c.present) continue;
    ++present;
    for (const auto& tok : tokenize(c.answer)) answers[j].push_back(vocab.id(tok));
  }

  // Truncate the longest answer first, one token at a time; [ANS] markers and
  // the question are never dropped.
  auto total = [&] {
    std::size_t n = question.size() + 2 + present;
    for (const auto& a : answers) n += a.size();
    return n;
  };
  if (question.size() + 2 + present > max_len) {
    throw AssemblyError("assemble: " + example.qid + " cannot fit one [ANS] per present candidate in max_len " +
                        std::to_string(max_len));
  }
  while (total() > max_len) {
    auto longest = std::max_element(answers.begin(), answers.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    longest->pop_back();
  }

  EncoderInput in;
  in.max_len = max_len;
  in.token_ids.assign(max_len, kPadId);
  in.position_ids.resize(max_len);
  std::iota(in.position_ids.begin(), in.position_ids.end(), std::size_t{0});
  in.segment_ids.assign(max_len, 0);
  in.confidence_values.assign(max_len, 0.0);
  in.attention_mask.assign(max_len, 0);
  in.ans_spans.assign(k, std::nullopt);
  in.cls_index = 0;

  std::size_t pos = 0;
  in.token_ids[pos++] = kClsId;
  for (std::size_t id : question) in.token_ids[pos++] = id;
  in.token_ids[pos++] = kSepId;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& c = example.candidates[j];
    if (!c.present) continue;
    AnsSpan span{pos, 0};
    in.token_ids[pos] = kAnsId;
    in.segment_ids[pos] = 1;
    in.confidence_values[pos] = c.confidence;
    ++pos;
    for (std::size_t id : answers[j]) {
      in.token_ids[pos] = id;
      in.segment_ids[pos] = 1;
      in.confidence_values[pos] = c.confidence;
      ++pos;
    }
    span.end = pos;
    in.ans_spans[j] = span;
  }
  in.length = pos;
  std::fill_n(in.attention_mask.begin(), pos, 1);
  return in;
}

AnsSpanIndex ans_index_map(const EncoderInput& input) {
  AnsSpanIndex index;
  for (std::size_t j = 0; j < input.ans_spans.size(); ++j) {
    if (!input.ans_spans[j]) continue;
    std::vector<std::size_t> positions(input.ans_spans[j]->end - input.ans_spans[j]->start);
    std::iota(positions.begin(), positions.end(), input.ans_spans[j]->start);
    index.emplace(j, std::move(positions));
  }
  return index;
}

EncoderInput trimmed(const EncoderInput& input, std::size_t len) {
  if (len < input.length || len > input.max_len) {
    throw ContractError("trimmed: length " + std::to_string(len) + " outside [" + std::to_string(input.length) + ", " +
                        std::to_string(input.max_len) + "]");
  }
  EncoderInput out = input;
  out.max_len = len;
  out.token_ids.resize(len);
  out.position_ids.resize(len);
  out.segment_ids.resize(len);
  out.confidence_values.resize(len);
  out.attention_mask.resize(len);
  return out;
}

}  // namespace metaqa
