#include "metaqa/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "metaqa/errors.hpp"

namespace metaqa {

using nlohmann::json;

std::optional<std::size_t> AgentRegistry::slot_of(std::string_view agent) const {
  for (std::size_t i = 0; i < agents.size(); ++i) {
    if (agents[i] == agent) return i;
  }
  return std::nullopt;
}

std::string AgentRegistry::home_of(std::size_t slot) const {
  auto it = home_domain.find(agents.at(slot));
  return it == home_domain.end() ? std::string{} : it->second;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "dev") return Split::kDev;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Vocabulary

namespace {
const std::vector<std::string> kSpecials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[ANS]"};
}

Vocab::Vocab() : Vocab(kSpecials) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kNumSpecials || !std::equal(kSpecials.begin(), kSpecials.end(), tokens_.begin())) {
    throw DataError("vocabulary must start with the five special tokens");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) throw DataError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, raw);
    } else {
      cur.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
    }
  }
  flush();
  return out;
}

Vocab build_vocab(const std::vector<std::string>& corpus, std::size_t max_size) {
  if (max_size <= kNumSpecials) throw ConfigError("build_vocab: max_size must exceed the number of special tokens");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& text : corpus) {
    for (auto& tok : tokenize(text)) ++freq[tok];
  }
  for (const auto& s : kSpecials) freq.erase(s);
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens = kSpecials;
  for (auto& [tok, count] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(tok);
  }
  return Vocab(std::move(tokens));
}

std::vector<std::string> vocab_corpus(const Dataset& ds) {
  std::vector<std::string> corpus;
  for (const auto& ex : ds.examples) {
    corpus.push_back(ex.question);
    for (const auto& c : ex.candidates) {
      if (c.present) corpus.push_back(c.answer);
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Prediction files

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw DataError("line " + std::to_string(line) + ": " + what);
}

std::string require_string(const json& obj, const char* key, std::size_t line) {
  if (!obj.contains(key) || !obj[key].is_string()) fail(line, std::string("missing string field '") + key + "'");
  return obj[key].get<std::string>();
}

AgentRegistry parse_header(const json& h, std::size_t line) {
  if (!h.is_object() || !h.contains("format") || h["format"] != kPredictionFormat) {
    fail(line, "header must declare format \"" + std::string(kPredictionFormat) + "\"");
  }
  if (!h.contains("agents") || !h["agents"].is_array() || h["agents"].empty()) {
    fail(line, "header must list at least one agent");
  }
  AgentRegistry reg;
  std::set<std::string> seen;
  for (const auto& a : h["agents"]) {
    if (!a.is_string()) fail(line, "agent ids must be strings");
    auto id = a.get<std::string>();
    if (!seen.insert(id).second) fail(line, "duplicate agent '" + id + "' in header");
    reg.agents.push_back(std::move(id));
  }
  if (h.contains("agent_domains")) {
    if (!h["agent_domains"].is_object()) fail(line, "agent_domains must be an object");
    for (const auto& [agent, dom] : h["agent_domains"].items()) {
      if (!seen.contains(agent)) fail(line, "agent_domains names unregistered agent '" + agent + "'");
      if (!dom.is_string()) fail(line, "agent_domains values must be strings");
      reg.home_domain[agent] = dom.get<std::string>();
    }
  }
  return reg;
}

Example parse_example(const json& obj, const AgentRegistry& reg, std::size_t line) {
  if (!obj.is_object()) fail(line, "expected a JSON object");
  Example ex;
  ex.qid = require_string(obj, "qid", line);
  ex.question = require_string(obj, "question", line);
  ex.dataset_id = require_string(obj, "dataset", line);
  if (!obj.contains("gold_answers") || !obj["gold_answers"].is_array() || obj["gold_answers"].empty()) {
    fail(line, "gold_answers must be a nonempty array");
  }
  for (const auto& g : obj["gold_answers"]) {
    if (!g.is_string()) fail(line, "gold answers must be strings");
    ex.gold_answers.push_back(g.get<std::string>());
  }
  if (!obj.contains("candidates") || !obj["candidates"].is_array()) fail(line, "missing candidates array");

  std::vector<std::optional<AnswerCandidate>> slots(reg.size());
  for (const auto& c : obj["candidates"]) {
    if (!c.is_object()) fail(line, "candidate must be an object");
    AnswerCandidate cand;
    cand.agent_id = require_string(c, "agent", line);
    auto slot = reg.slot_of(cand.agent_id);
    if (!slot) fail(line, "candidate from unregistered agent '" + cand.agent_id + "'");
    if (slots[*slot]) fail(line, "agent '" + cand.agent_id + "' appears twice");
    cand.present = !c.contains("present") || c["present"].get<bool>();
    if (cand.present) {
      cand.answer = require_string(c, "answer", line);
      if (!c.contains("confidence") || !c["confidence"].is_number()) fail(line, "missing numeric confidence");
      cand.confidence = c["confidence"].get<double>();
      if (!(cand.confidence >= 0.0 && cand.confidence <= 1.0)) {
        fail(line, "confidence " + c["confidence"].dump() + " of agent '" + cand.agent_id + "' outside [0,1]");
      }
    }
    slots[*slot] = std::move(cand);
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) fail(line, "missing candidate for agent '" + reg.agents[i] + "'");
    ex.candidates.push_back(std::move(*slots[i]));
  }
  return ex;
}

}  // namespace

Dataset parse_predictions(std::string_view text, Split split) {
  Dataset ds;
  ds.split = split;
  std::set<std::string> qids;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (nl == text.size()) break;
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(line_no, std::string("invalid JSON: ") + e.what());
    }
    try {
      if (!have_header) {
        ds.registry = parse_header(obj, line_no);
        have_header = true;
        continue;
      }
      Example ex = parse_example(obj, ds.registry, line_no);
      if (!qids.insert(ex.qid).second) fail(line_no, "duplicate qid '" + ex.qid + "'");
      ds.examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      fail(line_no, std::string("malformed record: ") + e.what());
    }
  }
  if (!have_header) throw DataError("prediction file has no header line");
  return ds;
}

Dataset load_predictions(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open prediction file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return parse_predictions(text, split);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::string serialize_predictions(const Dataset& ds) {
  std::string out;
  json header = {{"format", kPredictionFormat}, {"agents", ds.registry.agents}};
  if (!ds.registry.home_domain.empty()) header["agent_domains"] = ds.registry.home_domain;
  out += header.dump();
  out += '\n';
  for (const auto& ex : ds.examples) {
    json cands = json::array();
    for (const auto& c : ex.candidates) {
      json jc = {{"agent", c.agent_id}};
      if (c.present) {
        jc["answer"] = c.answer;
        jc["confidence"] = c.confidence;
      } else {
        jc["present"] = false;
      }
      cands.push_back(std::move(jc));
    }
    json rec = {{"qid", ex.qid},
                {"question", ex.question},
                {"dataset", ex.dataset_id},
                {"gold_answers", ex.gold_answers},
                {"candidates", std::move(cands)}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void save_predictions(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write prediction file " + path.string());
  out << serialize_predictions(ds);
}

}  // namespace metaqa
