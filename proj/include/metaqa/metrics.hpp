#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "metaqa/data.hpp"

namespace metaqa {

// SQuAD-style answer normalization: lowercase, drop punctuation, drop the
// articles a/an/the, collapse whitespace.
std::string normalize(std::string_view text);

double token_f1(std::string_view pred, std::string_view gold);
int exact_match(std::string_view pred, std::string_view gold);
// LCS F-measure (beta = 1) over normalized tokens.
double rouge_l(std::string_view pred, std::string_view gold);

// Max of a metric over the gold answers.
double max_over_golds(double (*metric)(std::string_view, std::string_view), std::string_view pred,
                      const std::vector<std::string>& golds);

enum class MetricKind { kF1, kExactMatch, kAccuracy, kRougeL };

MetricKind parse_metric(std::string_view name);
const char* metric_name(MetricKind kind);

struct MetricsRow {
  double f1 = 0.0;
  double exact_match = 0.0;
  double accuracy = 0.0;  // selected candidate clears the correctness threshold
  double rouge_l = 0.0;
  double metric = 0.0;    // the dataset's configured official metric
  std::size_t count = 0;

  bool operator==(const MetricsRow&) const = default;
};

struct MetricsReport {
  MetricsRow overall;
  std::map<std::string, MetricsRow> per_dataset;

  bool operator==(const MetricsReport&) const = default;
};

struct EvalMetricConfig {
  std::map<std::string, MetricKind> per_dataset;  // missing ids use token F1
  double theta = 0.7;
};

// Scores each example's selected candidate against its golds and macro-
// averages per dataset and overall. Selecting an absent slot is a contract
// error.
MetricsReport evaluate(const Dataset& dataset, const std::vector<std::size_t>& selections,
                       const EvalMetricConfig& config = {});

}  // namespace metaqa
