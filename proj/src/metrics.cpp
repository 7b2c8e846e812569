#include "cirevl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace cirevl {

EvalRecord eval_record_from_trace(const PipelineTrace& trace) {
  EvalRecord r;
  r.query_id = trace.query_id;
  for (const auto& s : trace.ranking.ranking) r.ranking.push_back(s.image_id);
  r.positives.insert(trace.positives.begin(), trace.positives.end());
  if (trace.subset_ranking) {
    std::vector<std::string> ids;
    for (const auto& s : trace.subset_ranking->ranking) ids.push_back(s.image_id);
    r.subset_ranking = std::move(ids);
  }
  return r;
}

namespace {

void require_k(std::size_t k) {
  if (k < 1) throw Error(ErrorCode::kInvalidK, "k must be >= 1");
}

void require_records(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::kEmptyEval, "no records to evaluate");
}

bool hit_at_k(const std::vector<std::string>& ranking, const std::set<std::string>& positives,
              std::size_t k) {
  const std::size_t depth = std::min(k, ranking.size());
  for (std::size_t i = 0; i < depth; ++i) {
    if (positives.count(ranking[i])) return true;
  }
  return false;
}

double recall_over(const std::vector<EvalRecord>& records, std::size_t k, bool use_subset) {
  require_k(k);
  require_records(records);
  std::size_t hits = 0;
  for (const auto& r : records) {
    const std::vector<std::string>* ranking = &r.ranking;
    if (use_subset) {
      if (!r.subset_ranking) {
        throw Error(ErrorCode::kMissingSubset, "record '" + r.query_id + "' has no subset ranking");
      }
      ranking = &*r.subset_ranking;
    }
    if (ranking->empty()) {
      throw Error(ErrorCode::kInvalidArgument, "record '" + r.query_id + "' has an empty ranking");
    }
    if (hit_at_k(*ranking, r.positives, k)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

}  // namespace

double recall_at_k(const std::vector<EvalRecord>& records, std::size_t k) {
  return recall_over(records, k, false);
}

double subset_recall_at_k(const std::vector<EvalRecord>& records, std::size_t k) {
  return recall_over(records, k, true);
}

double average_precision_at_k(const std::vector<std::string>& ranking,
                              const std::set<std::string>& positives, std::size_t k) {
  require_k(k);
  if (positives.empty()) throw Error(ErrorCode::kInvalidArgument, "positives must be nonempty");
  const std::size_t depth = std::min(k, ranking.size());
  std::size_t relevant_so_far = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (positives.count(ranking[i])) {
      ++relevant_so_far;
      sum += static_cast<double>(relevant_so_far) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(std::min(k, positives.size()));
}

double map_at_k(const std::vector<EvalRecord>& records, std::size_t k) {
  require_k(k);
  require_records(records);
  double total = 0.0;
  for (const auto& r : records) total += average_precision_at_k(r.ranking, r.positives, k);
  return total / static_cast<double>(records.size());
}

std::string_view to_string(MetricKind metric) {
  switch (metric) {
    case MetricKind::kMap: return "map";
    case MetricKind::kRecall: return "recall";
    case MetricKind::kSubsetRecall: return "subset-recall";
  }
  return "recall";
}

std::vector<MetricSpec> parse_metric_specs(std::string_view text) {
  static constexpr std::string_view kValid = "valid metrics: recall@K, map@K, subset-recall@K";
  std::vector<MetricSpec> specs;
  std::istringstream groups{std::string(text)};
  std::string group;
  while (groups >> group) {
    const auto at = group.find('@');
    if (at == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  "metric '" + group + "' has no @k (" + std::string(kValid) + ")");
    }
    const std::string name = group.substr(0, at);
    MetricKind kind;
    if (name == "recall") {
      kind = MetricKind::kRecall;
    } else if (name == "map") {
      kind = MetricKind::kMap;
    } else if (name == "subset-recall") {
      kind = MetricKind::kSubsetRecall;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "unknown metric '" + name + "' (" + std::string(kValid) + ")");
    }
    std::istringstream ks(group.substr(at + 1));
    std::string k_text;
    while (std::getline(ks, k_text, ',')) {
      std::size_t k = 0;
      try {
        std::size_t used = 0;
        const long long v = std::stoll(k_text, &used);
        if (used != k_text.size() || v < 1) throw std::invalid_argument("k");
        k = static_cast<std::size_t>(v);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kInvalidK, "bad k '" + k_text + "' in '" + group + "'");
      }
      specs.push_back({kind, k});
    }
  }
  if (specs.empty()) throw Error(ErrorCode::kInvalidArgument, "no metrics requested (" + std::string(kValid) + ")");
  return specs;
}

std::optional<double> MetricsReport::find(MetricKind metric, std::size_t k) const {
  for (const auto& v : values) {
    if (v.spec.metric == metric && v.spec.k == k) return v.value;
  }
  return std::nullopt;
}

namespace {

std::string percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value * 100.0);
  return buf;
}

std::string label(const MetricSpec& spec) {
  return std::string(to_string(spec.metric)) + "@" + std::to_string(spec.k);
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& v : values) {
    metrics.push_back({{"metric", std::string(to_string(v.spec.metric))},
                       {"k", v.spec.k},
                       {"value", v.value},
                       {"percent", percent(v.value)}});
  }
  return {{"query_count", query_count}, {"k_values", k_values}, {"metrics", metrics}};
}

std::string MetricsReport::to_table() const {
  std::vector<std::string> headers;
  std::vector<std::string> cells;
  for (const auto& v : values) {
    headers.push_back(label(v.spec));
    cells.push_back(percent(v.value));
  }
  std::string head;
  std::string row;
  for (std::size_t i = 0; i < headers.size(); ++i) {
    const std::size_t width = std::max(headers[i].size(), cells[i].size());
    if (i > 0) {
      head += "  ";
      row += "  ";
    }
    head += std::string(width - headers[i].size(), ' ') + headers[i];
    row += std::string(width - cells[i].size(), ' ') + cells[i];
  }
  return head + "\n" + row + "\n";
}

MetricsReport build_report(const std::vector<EvalRecord>& records, std::vector<MetricSpec> specs) {
  require_records(records);
  std::sort(specs.begin(), specs.end(), [](const MetricSpec& a, const MetricSpec& b) {
    if (a.metric != b.metric) return to_string(a.metric) < to_string(b.metric);
    return a.k < b.k;
  });
  specs.erase(std::unique(specs.begin(), specs.end()), specs.end());

  MetricsReport report;
  report.query_count = records.size();
  for (const auto& spec : specs) {
    double value = 0.0;
    switch (spec.metric) {
      case MetricKind::kRecall: value = recall_at_k(records, spec.k); break;
      case MetricKind::kMap: value = map_at_k(records, spec.k); break;
      case MetricKind::kSubsetRecall: value = subset_recall_at_k(records, spec.k); break;
    }
    report.values.push_back({spec, value});
    report.k_values.push_back(spec.k);
  }
  std::sort(report.k_values.begin(), report.k_values.end());
  report.k_values.erase(std::unique(report.k_values.begin(), report.k_values.end()),
                        report.k_values.end());
  return report;
}

}  // namespace cirevl
