#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cirevl/types.hpp"

namespace cirevl {

struct EvalRecord {
  std::string query_id;
  std::vector<std::string> ranking;
  std::set<std::string> positives;
  std::optional<std::vector<std::string>> subset_ranking;
};

/// Builds an evaluation record from a successful trace.
EvalRecord eval_record_from_trace(const PipelineTrace& trace);

/// Fraction of records with a positive among the first k ranked ids.
/// Throws EmptyEval, InvalidK, or InvalidArgument for an empty ranking.
double recall_at_k(const std::vector<EvalRecord>& records, std::size_t k);

/// Truncated average precision: sum of Precision@i over relevant ranks
/// i <= k, divided by min(k, |positives|).
double average_precision_at_k(const std::vector<std::string>& ranking,
                              const std::set<std::string>& positives, std::size_t k);

double map_at_k(const std::vector<EvalRecord>& records, std::size_t k);

/// recall_at_k over each record's subset ranking. Throws MissingSubset.
double subset_recall_at_k(const std::vector<EvalRecord>& records, std::size_t k);

enum class MetricKind { kMap, kRecall, kSubsetRecall };

std::string_view to_string(MetricKind metric);

struct MetricSpec {
  MetricKind metric = MetricKind::kRecall;
  std::size_t k = 1;

  auto operator<=>(const MetricSpec&) const = default;
};

/// Parses "recall@1,5,10 map@5 subset-recall@1,2,3" (whitespace separated
/// groups). Throws InvalidArgument naming the valid metrics.
std::vector<MetricSpec> parse_metric_specs(std::string_view text);

struct MetricValue {
  MetricSpec spec;
  double value = 0.0;  // in [0, 1]
};

struct MetricsReport {
  std::size_t query_count = 0;
  std::vector<std::size_t> k_values;
  std::vector<MetricValue> values;  // ordered by metric name, then k

  std::optional<double> find(MetricKind metric, std::size_t k) const;
  nlohmann::json to_json() const;
  /// Aligned two-row table of percentages with two decimals.
  std::string to_table() const;
};

/// Deduplicates `specs` and evaluates each. Throws EmptyEval.
MetricsReport build_report(const std::vector<EvalRecord>& records, std::vector<MetricSpec> specs);

}  // namespace cirevl
