#include "metaqa/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "metaqa/errors.hpp"
#include "metaqa/rng.hpp"

namespace metaqa {

using nlohmann::json;

void BenchmarkSpec::validate() const {
  if (domains.empty()) throw ConfigError("benchmark: at least one domain is required");
  if (agents.empty()) throw ConfigError("benchmark: at least one agent is required");
  std::set<std::string> ids;
  for (const auto& d : domains) {
    if (d.id.empty()) throw ConfigError("benchmark: domain id must be nonempty");
    if (!ids.insert(d.id).second) throw ConfigError("benchmark: duplicate domain '" + d.id + "'");
    if (d.wh_words.empty()) throw ConfigError("benchmark: domain '" + d.id + "' needs at least one wh-word");
    if (d.answer_min < 1 || d.answer_max > 6 || d.answer_min > d.answer_max) {
      throw ConfigError("benchmark: answer length range of '" + d.id + "' must lie within [1, 6]");
    }
    if (d.answer_vocab < 2 || d.style_words < 1) throw ConfigError("benchmark: word pools of '" + d.id + "' too small");
  }
  std::set<std::string> agent_ids;
  for (const auto& a : agents) {
    if (!agent_ids.insert(a.id).second) throw ConfigError("benchmark: duplicate agent '" + a.id + "'");
    if (!ids.contains(a.home_domain)) {
      throw ConfigError("benchmark: agent '" + a.id + "' has unknown home domain '" + a.home_domain + "'");
    }
    for (const auto& d : domains) {
      auto it = a.accuracy.find(d.id);
      if (it == a.accuracy.end()) throw ConfigError("benchmark: agent '" + a.id + "' lacks accuracy for '" + d.id + "'");
      if (!(it->second >= 0.0 && it->second <= 1.0)) {
        throw ConfigError("benchmark: accuracy of '" + a.id + "' on '" + d.id + "' outside [0,1]");
      }
    }
    if (!(a.boundary_noise >= 0.0 && a.boundary_noise <= 1.0)) {
      throw ConfigError("benchmark: boundary_noise of '" + a.id + "' outside [0,1]");
    }
    if (a.calibration.jitter < 0.0) throw ConfigError("benchmark: negative jitter for '" + a.id + "'");
  }
}

AgentRegistry BenchmarkSpec::registry() const {
  AgentRegistry reg;
  for (const auto& a : agents) {
    reg.agents.push_back(a.id);
    reg.home_domain[a.id] = a.home_domain;
  }
  return reg;
}

EvalMetricConfig BenchmarkSpec::metric_config(double theta) const {
  EvalMetricConfig cfg;
  cfg.theta = theta;
  for (const auto& d : domains) cfg.per_dataset[d.id] = d.metric;
  return cfg;
}

const DomainSpec& BenchmarkSpec::domain(std::string_view id) const {
  for (const auto& d : domains) {
    if (d.id == id) return d;
  }
  throw ConfigError("benchmark: unknown domain '" + std::string(id) + "'");
}

BenchmarkSpec BenchmarkSpec::from_json(const json& j) {
  try {
    BenchmarkSpec spec;
    spec.seed = j.value("seed", std::uint64_t{0});
    for (const auto& jd : j.at("domains")) {
      DomainSpec d;
      d.id = jd.at("id").get<std::string>();
      d.wh_words = jd.value("wh_words", d.wh_words);
      d.style_words = jd.value("style_words", d.style_words);
      d.question_style_len = jd.value("question_style_len", d.question_style_len);
      d.answer_vocab = jd.value("answer_vocab", d.answer_vocab);
      if (jd.contains("answer_len")) {
        d.answer_min = jd["answer_len"].at(0).get<std::size_t>();
        d.answer_max = jd["answer_len"].at(1).get<std::size_t>();
      }
      d.answer_clue = jd.value("answer_clue", d.answer_clue);
      if (jd.contains("sizes")) {
        d.train = jd["sizes"].value("train", std::size_t{0});
        d.dev = jd["sizes"].value("dev", std::size_t{0});
        d.test = jd["sizes"].value("test", std::size_t{0});
      }
      d.vocab_seed = jd.value("vocab_seed", std::uint64_t{0});
      d.metric = parse_metric(jd.value("metric", std::string("f1")));
      spec.domains.push_back(std::move(d));
    }
    for (const auto& ja : j.at("agents")) {
      AgentProfile a;
      a.id = ja.at("id").get<std::string>();
      a.home_domain = ja.at("home").get<std::string>();
      a.accuracy = ja.at("accuracy").get<std::map<std::string, double>>();
      a.boundary_noise = ja.value("boundary_noise", 0.0);
      if (ja.contains("calibration")) {
        const auto& c = ja["calibration"];
        a.calibration.slope = c.value("slope", a.calibration.slope);
        a.calibration.bias = c.value("bias", a.calibration.bias);
        a.calibration.jitter = c.value("jitter", a.calibration.jitter);
      }
      spec.agents.push_back(std::move(a));
    }
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("benchmark spec: ") + e.what());
  }
}

json BenchmarkSpec::to_json() const {
  json j;
  j["seed"] = seed;
  j["domains"] = json::array();
  for (const auto& d : domains) {
    j["domains"].push_back({{"id", d.id},
                            {"wh_words", d.wh_words},
                            {"style_words", d.style_words},
                            {"question_style_len", d.question_style_len},
                            {"answer_vocab", d.answer_vocab},
                            {"answer_len", {d.answer_min, d.answer_max}},
                            {"answer_clue", d.answer_clue},
                            {"sizes", {{"train", d.train}, {"dev", d.dev}, {"test", d.test}}},
                            {"vocab_seed", d.vocab_seed},
                            {"metric", metric_name(d.metric)}});
  }
  j["agents"] = json::array();
  for (const auto& a : agents) {
    j["agents"].push_back({{"id", a.id},
                           {"home", a.home_domain},
                           {"accuracy", a.accuracy},
                           {"boundary_noise", a.boundary_noise},
                           {"calibration",
                            {{"slope", a.calibration.slope},
                             {"bias", a.calibration.bias},
                             {"jitter", a.calibration.jitter}}}});
  }
  return j;
}

BenchmarkSpec BenchmarkSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open benchmark spec " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Lexicon

namespace {

std::string make_word(std::mt19937_64& rng) {
  static constexpr std::string_view kOnsets = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::uniform_int_distribution<std::size_t> syllables(2, 3);
  std::uniform_int_distribution<std::size_t> onset(0, kOnsets.size() - 1);
  std::uniform_int_distribution<std::size_t> vowel(0, kVowels.size() - 1);
  std::string w;
  const std::size_t n = syllables(rng);
  for (std::size_t i = 0; i < n; ++i) {
    w.push_back(kOnsets[onset(rng)]);
    w.push_back(kVowels[vowel(rng)]);
  }
  return w;
}

std::vector<std::string> unique_words(std::size_t count, std::mt19937_64& rng, std::set<std::string>& taken) {
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w = make_word(rng);
    if (taken.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

DomainLexicon DomainLexicon::build(const DomainSpec& spec) {
  std::mt19937_64 rng(derive_seed(spec.vocab_seed, {"lexicon", spec.id}));
  std::set<std::string> taken;
  DomainLexicon lex;
  lex.style = unique_words(spec.style_words, rng, taken);
  lex.answers = unique_words(spec.answer_vocab, rng, taken);
  return lex;
}

std::string DomainLexicon::sample_answer(const DomainSpec& spec, std::mt19937_64& rng) const {
  std::uniform_int_distribution<std::size_t> len(spec.answer_min, spec.answer_max);
  std::uniform_int_distribution<std::size_t> word(0, answers.size() - 1);
  std::vector<std::string> words(len(rng));
  for (auto& w : words) w = answers[word(rng)];
  return join_words(words);
}

// ---------------------------------------------------------------------------
// Generation

AnswerCandidate simulate_agent(const AgentProfile& profile, const Example& example, const DomainSpec& domain,
                               const DomainLexicon& lexicon, std::mt19937_64& rng) {
  auto acc_it = profile.accuracy.find(example.dataset_id);
  if (acc_it == profile.accuracy.end()) {
    throw ContractError("simulate_agent: agent '" + profile.id + "' has no accuracy for '" + example.dataset_id + "'");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AnswerCandidate cand;
  cand.agent_id = profile.id;

  const std::string& gold = example.gold_answers.front();
  const bool knows = unit(rng) < acc_it->second;
  if (knows) {
    cand.answer = gold;
    if (unit(rng) < profile.boundary_noise) {
      auto words = split_words(gold);
      std::uniform_int_distribution<std::size_t> word(0, lexicon.answers.size() - 1);
      const bool shrink = words.size() > 1 && unit(rng) < 0.5;
      const bool at_front = unit(rng) < 0.5;
      if (shrink) {
        if (at_front) words.erase(words.begin());
        else words.pop_back();
      } else {
        const std::string extra = lexicon.answers[word(rng)];
        if (at_front) words.insert(words.begin(), extra);
        else words.push_back(extra);
      }
      cand.answer = join_words(words);
    }
  } else {
    const std::string norm_gold = normalize(gold);
    do {
      cand.answer = lexicon.sample_answer(domain, rng);
    } while (normalize(cand.answer) == norm_gold);
  }

  const Calibration& cal = profile.calibration;
  double conf = sigmoid(cal.slope * (knows ? 1.0 : -1.0) + cal.bias);
  if (cal.jitter > 0.0) conf += std::uniform_real_distribution<double>(-cal.jitter, cal.jitter)(rng);
  cand.confidence = std::clamp(conf, 0.0, 1.0);
  return cand;
}

namespace {

Dataset generate_split(const BenchmarkSpec& spec, const std::vector<DomainLexicon>& lexicons, Split split,
                       std::uint64_t seed) {
  Dataset ds;
  ds.split = split;
  ds.registry = spec.registry();
  const std::string split_tag = split_name(split);
  for (std::size_t di = 0; di < spec.domains.size(); ++di) {
    const DomainSpec& dom = spec.domains[di];
    const DomainLexicon& lex = lexicons[di];
    const std::size_t n = split == Split::kTrain ? dom.train : split == Split::kDev ? dom.dev : dom.test;
    for (std::size_t i = 0; i < n; ++i) {
      Example ex;
      ex.qid = dom.id + "-" + split_tag + "-" + std::to_string(i);
      ex.dataset_id = dom.id;
      std::mt19937_64 qrng(derive_seed(seed, {"question", ex.qid}));
      const std::string gold = lex.sample_answer(dom, qrng);
      ex.gold_answers = {gold};

      std::uniform_int_distribution<std::size_t> wh(0, dom.wh_words.size() - 1);
      std::uniform_int_distribution<std::size_t> style(0, lex.style.size() - 1);
      std::vector<std::string> words = {dom.wh_words[wh(qrng)]};
      for (std::size_t s = 0; s < dom.question_style_len; ++s) words.push_back(lex.style[style(qrng)]);
      if (dom.answer_clue) {
        words.push_back("about");
        words.push_back(split_words(gold).front());
      }
      ex.question = join_words(words) + " ?";

      for (const auto& agent : spec.agents) {
        std::mt19937_64 arng(derive_seed(seed, {"sim", agent.id, ex.qid}));
        ex.candidates.push_back(simulate_agent(agent, ex, dom, lex, arng));
      }
      ds.examples.push_back(std::move(ex));
    }
  }
  return ds;
}

}  // namespace

Benchmark generate_benchmark(const BenchmarkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<DomainLexicon> lexicons;
  for (const auto& d : spec.domains) lexicons.push_back(DomainLexicon::build(d));
  Benchmark b;
  b.train = generate_split(spec, lexicons, Split::kTrain, seed);
  b.dev = generate_split(spec, lexicons, Split::kDev, seed);
  b.test = generate_split(spec, lexicons, Split::kTest, seed);
  return b;
}

UnsolvableReport describe_oracle(const Dataset& dataset, double theta) {
  UnsolvableReport r;
  std::map<std::string, std::size_t> unsolvable;
  std::size_t total_unsolvable = 0;
  for (const auto& ex : dataset.examples) {
    bool solvable = false;
    for (const auto& c : ex.candidates) {
      if (c.present && max_over_golds(token_f1, c.answer, ex.gold_answers) > theta) {
        solvable = true;
        break;
      }
    }
    ++r.counts[ex.dataset_id];
    ++r.total;
    if (!solvable) {
      ++unsolvable[ex.dataset_id];
      ++total_unsolvable;
    }
  }
  for (const auto& [id, n] : r.counts) {
    r.per_dataset[id] = static_cast<double>(unsolvable[id]) / static_cast<double>(n);
  }
  r.overall = r.total == 0 ? 0.0 : static_cast<double>(total_unsolvable) / static_cast<double>(r.total);
  return r;
}

BenchmarkSpec standard_benchmark(std::uint64_t seed) {
  BenchmarkSpec spec;
  spec.seed = seed;
  auto domain = [](std::string id, std::vector<std::string> wh, std::size_t train, std::uint64_t vseed) {
    DomainSpec d;
    d.id = std::move(id);
    d.wh_words = std::move(wh);
    d.train = train;
    d.dev = train / 20;
    d.test = 500;
    d.vocab_seed = vseed;
    return d;
  };
  spec.domains = {domain("wiki", {"what", "which"}, 6000, 11), domain("news", {"who", "what"}, 6000, 12),
                  domain("trivia", {"which", "where"}, 6000, 13), domain("film", {"who", "why"}, 2000, 14)};
  auto agent = [](std::string id, std::string home, std::map<std::string, double> acc, Calibration cal) {
    AgentProfile a;
    a.id = std::move(id);
    a.home_domain = std::move(home);
    a.accuracy = std::move(acc);
    a.boundary_noise = 0.1;
    a.calibration = cal;
    return a;
  };
  spec.agents = {
      agent("wiki_agent", "wiki", {{"wiki", 0.9}, {"news", 0.25}, {"trivia", 0.2}, {"film", 0.7}}, {2.0, 0.0, 0.15}),
      agent("news_agent", "news", {{"wiki", 0.2}, {"news", 0.9}, {"trivia", 0.25}, {"film", 0.2}}, {0.5, 1.5, 0.15}),
      agent("trivia_agent", "trivia", {{"wiki", 0.25}, {"news", 0.2}, {"trivia", 0.9}, {"film", 0.15}},
            {1.0, -1.0, 0.15}),
      agent("film_agent", "film", {{"wiki", 0.2}, {"news", 0.2}, {"trivia", 0.2}, {"film", 0.4}}, {1.5, 0.5, 0.15}),
  };
  return spec;
}

}  // namespace metaqa
