#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace metaqa {

struct AnswerCandidate {
  std::string agent_id;
  std::string answer;
  double confidence = 0.0;
  bool present = true;

  bool operator==(const AnswerCandidate&) const = default;
};

// One question with exactly one candidate per registered agent, stored in
// registry (header) order.
struct Example {
  std::string qid;
  std::string question;
  std::string dataset_id;
  std::vector<std::string> gold_answers;
  std::vector<AnswerCandidate> candidates;

  bool operator==(const Example&) const = default;
};

// Agent ids in slot order plus the domain each agent was trained on.
struct AgentRegistry {
  std::vector<std::string> agents;
  std::map<std::string, std::string> home_domain;

  std::size_t size() const { return agents.size(); }
  std::optional<std::size_t> slot_of(std::string_view agent) const;
  // Empty when the agent has no recorded home domain.
  std::string home_of(std::size_t slot) const;

  bool operator==(const AgentRegistry&) const = default;
};

enum class Split { kTrain, kDev, kTest };

const char* split_name(Split s);
Split parse_split(std::string_view s);

struct Dataset {
  std::vector<Example> examples;
  AgentRegistry registry;
  Split split = Split::kTrain;

  std::size_t size() const { return examples.size(); }
  bool operator==(const Dataset&) const = default;
};

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;
inline constexpr std::size_t kClsId = 2;
inline constexpr std::size_t kSepId = 3;
inline constexpr std::size_t kAnsId = 4;
inline constexpr std::size_t kNumSpecials = 5;

class Vocab {
 public:
  Vocab();
  // Rebuilds a vocabulary from its id-ordered token list (specials first).
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t id(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Lowercases, splits ASCII punctuation into single-character tokens and
// splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

// Specials first, then tokens by descending frequency, ties broken
// lexicographically, until max_size entries.
Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t max_size);

// Questions and every candidate answer of a dataset, for build_vocab.
std::vector<std::string> vocab_corpus(const Dataset& ds);

inline constexpr std::string_view kPredictionFormat = "metaqa-preds/1";

// Reads the JSON-lines prediction format. Throws DataError naming the line on
// any validation failure.
Dataset load_predictions(const std::filesystem::path& path, Split split = Split::kTrain);
Dataset parse_predictions(std::string_view text, Split split = Split::kTrain);

// Serializes in the same format; candidates are written in registry order.
std::string serialize_predictions(const Dataset& ds);
void save_predictions(const Dataset& ds, const std::filesystem::path& path);

}  // namespace metaqa
