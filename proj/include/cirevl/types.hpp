#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cirevl/error.hpp"

namespace cirevl {

/// Dense real vector in the shared text/image embedding space.
///
/// Values are held at 32-bit precision; arithmetic on them is carried out in
/// double. Construction rejects empty or non-finite input.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  explicit EmbeddingVector(std::vector<float> values);
  EmbeddingVector(std::initializer_list<float> values)
      : EmbeddingVector(std::vector<float>(values)) {}

  std::size_t dim() const { return values_.size(); }
  std::span<const float> values() const { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }
  double norm() const;

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<float> values_;
};

inline constexpr double kDegenerateNorm = 1e-12;

/// Unit-length copy of `v`. Throws DegenerateVector when ||v|| <= 1e-12.
EmbeddingVector normalize(const EmbeddingVector& v);

/// Cosine similarity, clamped to [-1, 1]. Throws DimMismatch or
/// DegenerateVector.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

struct ImageRecord {
  std::string id;
  std::string uri;
  std::map<std::string, std::string> metadata;

  bool operator==(const ImageRecord&) const = default;
};

enum class TaskKind {
  kCir,
  kGenecisFocusAttribute,
  kGenecisChangeAttribute,
  kGenecisFocusObject,
  kGenecisChangeObject,
  kDomainConversion,
};

enum class QueryMode {
  kCirevl,
  kImageOnly,
  kTextOnly,
  kImagePlusText,
  kCaptionTemplate,
};

std::string_view to_string(TaskKind task);
std::string_view to_string(QueryMode mode);
TaskKind parse_task_kind(std::string_view text);
QueryMode parse_query_mode(std::string_view text);

struct CompositionalQuery {
  std::string id;
  std::string reference_image_id;
  std::string instruction;
  TaskKind task = TaskKind::kCir;
  std::optional<std::vector<std::string>> subset_ids;
  std::vector<std::string> positives;
  std::optional<std::string> domain_word;

  bool operator==(const CompositionalQuery&) const = default;
};

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(std::string_view text);

/// Origin of a caption or target caption: "model:<id>", "llm:<id>",
/// "template:<id>" or "user-override".
struct Provenance {
  enum class Kind { kModel, kLlm, kTemplate, kUserOverride };
  Kind kind = Kind::kUserOverride;
  std::string id;

  static Provenance model(std::string id) { return {Kind::kModel, std::move(id)}; }
  static Provenance llm(std::string id) { return {Kind::kLlm, std::move(id)}; }
  static Provenance templated(std::string id) { return {Kind::kTemplate, std::move(id)}; }
  static Provenance user_override() { return {Kind::kUserOverride, {}}; }

  std::string to_string() const;
  static Provenance parse(std::string_view text);

  bool operator==(const Provenance&) const = default;
};

struct CaptionRecord {
  std::string image_id;
  std::string text;
  Provenance source;
  Timestamp created_at{};

  bool operator==(const CaptionRecord&) const = default;
};

struct TargetCaption {
  std::string query_id;
  std::string text;
  Provenance source;

  bool operator==(const TargetCaption&) const = default;
};

struct ScoredId {
  std::string image_id;
  double score = 0.0;

  bool operator==(const ScoredId&) const = default;
};

struct RankedResult {
  std::string query_id;
  QueryMode mode = QueryMode::kCirevl;
  std::vector<ScoredId> ranking;
  std::vector<std::string> excluded_ids;

  bool operator==(const RankedResult&) const = default;
};

struct Overrides {
  std::optional<std::string> caption;
  std::optional<std::string> target_caption;
  std::optional<std::string> instruction;

  bool empty() const { return !caption && !target_caption && !instruction; }
  bool operator==(const Overrides&) const = default;
};

struct TraceError {
  Stage stage = Stage::kCaption;
  ErrorCode code = ErrorCode::kInvalidArgument;
  std::string message;

  bool operator==(const TraceError&) const = default;
};

/// Record of one query's trip through caption -> reason -> retrieve.
///
/// `ranking` is the full-gallery top-k; `subset_ranking` is present when the
/// query carries a curated subset. Stage fields a mode never used stay empty.
struct PipelineTrace {
  std::string query_id;
  QueryMode mode = QueryMode::kCirevl;
  TaskKind task = TaskKind::kCir;
  std::string reference_image_id;
  std::string instruction;
  std::vector<std::string> positives;
  std::optional<CaptionRecord> caption;
  std::optional<TargetCaption> target_caption;
  std::optional<std::string> reasoner_raw_reply;
  bool marker_missing = false;
  Overrides overrides;
  RankedResult ranking;
  std::optional<RankedResult> subset_ranking;
  std::map<std::string, double> timings;
  std::optional<TraceError> error;

  bool ok() const { return !error.has_value(); }
  bool operator==(const PipelineTrace&) const = default;
};

/// Collapses CR/LF runs into single spaces and trims the ends.
std::string single_line(std::string_view text);

}  // namespace cirevl
