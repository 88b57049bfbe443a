#include "metaqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_map>

#include "metaqa/errors.hpp"

namespace metaqa {

namespace {

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> normalized_tokens(std::string_view text) { return split_ws(normalize(text)); }

}  // namespace

std::string normalize(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 128 && std::ispunct(u)) continue;
    lowered.push_back(static_cast<char>(u < 128 ? std::tolower(u) : u));
  }
  std::string out;
  for (const auto& tok : split_ws(lowered)) {
    if (tok == "a" || tok == "an" || tok == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

double token_f1(std::string_view pred, std::string_view gold) {
  const auto p = normalized_tokens(pred);
  const auto g = normalized_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::unordered_map<std::string, long> counts;
  for (const auto& t : g) ++counts[t];
  long common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

int exact_match(std::string_view pred, std::string_view gold) { return normalize(pred) == normalize(gold) ? 1 : 0; }

double rouge_l(std::string_view pred, std::string_view gold) {
  const auto p = normalized_tokens(pred);
  const auto g = normalized_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::vector<std::size_t> prev(g.size() + 1, 0), cur(g.size() + 1, 0);
  for (std::size_t i = 1; i <= p.size(); ++i) {
    for (std::size_t j = 1; j <= g.size(); ++j) {
      cur[j] = p[i - 1] == g[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const std::size_t lcs = prev[g.size()];
  if (lcs == 0) return 0.0;
  const double precision = static_cast<double>(lcs) / static_cast<double>(p.size());
  const double recall = static_cast<double>(lcs) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

double max_over_golds(double (*metric)(std::string_view, std::string_view), std::string_view pred,
                      const std::vector<std::string>& golds) {
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, metric(pred, g));
  return best;
}

MetricKind parse_metric(std::string_view name) {
  if (name == "f1") return MetricKind::kF1;
  if (name == "em" || name == "exact_match") return MetricKind::kExactMatch;
  if (name == "accuracy") return MetricKind::kAccuracy;
  if (name == "rouge_l" || name == "rouge-l") return MetricKind::kRougeL;
  throw ConfigError("unknown metric '" + std::string(name) + "'");
}

const char* metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::kF1: return "f1";
    case MetricKind::kExactMatch: return "em";
    case MetricKind::kAccuracy: return "accuracy";
    case MetricKind::kRougeL: return "rouge_l";
  }
  return "f1";
}

namespace {

double em_score(std::string_view p, std::string_view g) { return exact_match(p, g); }

struct Accumulator {
  double f1 = 0, em = 0, acc = 0, rl = 0, metric = 0;
  std::size_t n = 0;

  MetricsRow finish() const {
    MetricsRow r;
    r.count = n;
    if (n == 0) return r;
    const double dn = static_cast<double>(n);
    r.f1 = f1 / dn;
    r.exact_match = em / dn;
    r.accuracy = acc / dn;
    r.rouge_l = rl / dn;
    r.metric = metric / dn;
    return r;
  }
};

}  // namespace

MetricsReport evaluate(const Dataset& dataset, const std::vector<std::size_t>& selections,
                       const EvalMetricConfig& config) {
  if (selections.size() != dataset.size()) {
    throw ContractError("evaluate: " + std::to_string(selections.size()) + " selections for " +
                        std::to_string(dataset.size()) + " examples");
  }
  Accumulator overall;
  std::map<std::string, Accumulator> per;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Example& ex = dataset.examples[i];
    const std::size_t slot = selections[i];
    if (slot >= ex.candidates.size() || !ex.candidates[slot].present) {
      throw ContractError("evaluate: example " + ex.qid + " selects absent slot " + std::to_string(slot));
    }
    const std::string& ans = ex.candidates[slot].answer;
    const double f1 = max_over_golds(token_f1, ans, ex.gold_answers);
    const double em = max_over_golds(em_score, ans, ex.gold_answers);
    const double rl = max_over_golds(rouge_l, ans, ex.gold_answers);
    const double acc = f1 > config.theta ? 1.0 : 0.0;
    MetricKind kind = MetricKind::kF1;
    if (auto it = config.per_dataset.find(ex.dataset_id); it != config.per_dataset.end()) kind = it->second;
    double m = f1;
    switch (kind) {
      case MetricKind::kF1: m = f1; break;
      case MetricKind::kExactMatch:
      case MetricKind::kAccuracy: m = em; break;
      case MetricKind::kRougeL: m = rl; break;
    }
    for (Accumulator* a : {&overall, &per[ex.dataset_id]}) {
      a->f1 += f1;
      a->em += em;
      a->acc += acc;
      a->rl += rl;
      a->metric += m;
      ++a->n;
    }
  }
  MetricsReport report;
  report.overall = overall.finish();
  for (const auto& [id, a] : per) report.per_dataset[id] = a.finish();
  return report;
}

}  // namespace metaqa
