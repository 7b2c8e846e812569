#include "cirevl/serialization.hpp"

namespace cirevl {

namespace {

template <typename T>
std::optional<T> optional_field(const Json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

template <typename T>
void put_optional(Json& j, const char* key, const std::optional<T>& value) {
  if (value) {
    j[key] = *value;
  } else {
    j[key] = nullptr;
  }
}

}  // namespace

void to_json(Json& j, const EmbeddingVector& v) {
  j = Json{{"dim", v.dim()}, {"values", std::vector<float>(v.values().begin(), v.values().end())}};
}

void from_json(const Json& j, EmbeddingVector& v) {
  auto values = j.at("values").get<std::vector<float>>();
  if (j.contains("dim") && j.at("dim").get<std::size_t>() != values.size()) {
    throw Error(ErrorCode::kDimMismatch, "declared dim does not match value count");
  }
  v = EmbeddingVector(std::move(values));
}

void to_json(Json& j, const ImageRecord& r) {
  j = Json{{"id", r.id}, {"uri", r.uri}};
  if (!r.metadata.empty()) j["metadata"] = r.metadata;
}

void from_json(const Json& j, ImageRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.uri = j.at("uri").get<std::string>();
  r.metadata = optional_field<std::map<std::string, std::string>>(j, "metadata").value_or(
      std::map<std::string, std::string>{});
}

void to_json(Json& j, TaskKind t) { j = std::string(to_string(t)); }
void from_json(const Json& j, TaskKind& t) { t = parse_task_kind(j.get<std::string>()); }
void to_json(Json& j, QueryMode m) { j = std::string(to_string(m)); }
void from_json(const Json& j, QueryMode& m) { m = parse_query_mode(j.get<std::string>()); }

void to_json(Json& j, const CompositionalQuery& q) {
  j = Json{{"id", q.id},
           {"reference_image_id", q.reference_image_id},
           {"instruction", q.instruction},
           {"task", q.task},
           {"positives", q.positives}};
  put_optional(j, "subset_ids", q.subset_ids);
  put_optional(j, "domain_word", q.domain_word);
}

void from_json(const Json& j, CompositionalQuery& q) {
  q.id = j.at("id").get<std::string>();
  q.reference_image_id = j.at("reference_image_id").get<std::string>();
  q.instruction = j.at("instruction").get<std::string>();
  q.task = j.contains("task") ? j.at("task").get<TaskKind>() : TaskKind::kCir;
  q.positives = optional_field<std::vector<std::string>>(j, "positives").value_or(
      std::vector<std::string>{});
  q.subset_ids = optional_field<std::vector<std::string>>(j, "subset_ids");
  q.domain_word = optional_field<std::string>(j, "domain_word");
}

void to_json(Json& j, const CaptionRecord& c) {
  j = Json{{"image_id", c.image_id},
           {"text", c.text},
           {"source", c.source.to_string()},
           {"created_at", format_timestamp(c.created_at)}};
}

void from_json(const Json& j, CaptionRecord& c) {
  c.image_id = j.at("image_id").get<std::string>();
  c.text = j.at("text").get<std::string>();
  c.source = Provenance::parse(j.at("source").get<std::string>());
  c.created_at = parse_timestamp(j.at("created_at").get<std::string>());
}

void to_json(Json& j, const TargetCaption& t) {
  j = Json{{"query_id", t.query_id}, {"text", t.text}, {"source", t.source.to_string()}};
}

void from_json(const Json& j, TargetCaption& t) {
  t.query_id = j.at("query_id").get<std::string>();
  t.text = j.at("text").get<std::string>();
  t.source = Provenance::parse(j.at("source").get<std::string>());
}

void to_json(Json& j, const ScoredId& s) { j = Json{{"image_id", s.image_id}, {"score", s.score}}; }

void from_json(const Json& j, ScoredId& s) {
  s.image_id = j.at("image_id").get<std::string>();
  s.score = j.at("score").get<double>();
}

void to_json(Json& j, const RankedResult& r) {
  j = Json{{"query_id", r.query_id},
           {"mode", r.mode},
           {"ranking", r.ranking},
           {"excluded_ids", r.excluded_ids}};
}

void from_json(const Json& j, RankedResult& r) {
  r.query_id = j.at("query_id").get<std::string>();
  r.mode = j.at("mode").get<QueryMode>();
  r.ranking = j.at("ranking").get<std::vector<ScoredId>>();
  r.excluded_ids = optional_field<std::vector<std::string>>(j, "excluded_ids")
                       .value_or(std::vector<std::string>{});
}

void to_json(Json& j, const Overrides& o) {
  j = Json::object();
  put_optional(j, "caption", o.caption);
  put_optional(j, "target_caption", o.target_caption);
  put_optional(j, "instruction", o.instruction);
}

void from_json(const Json& j, Overrides& o) {
  o.caption = optional_field<std::string>(j, "caption");
  o.target_caption = optional_field<std::string>(j, "target_caption");
  o.instruction = optional_field<std::string>(j, "instruction");
}

void to_json(Json& j, const TraceError& e) {
  j = Json{{"stage", std::string(stage_name(e.stage))},
           {"code", std::string(error_code_name(e.code))},
           {"message", e.message}};
}

void from_json(const Json& j, TraceError& e) {
  const auto stage = j.at("stage").get<std::string>();
  if (stage == "caption") {
    e.stage = Stage::kCaption;
  } else if (stage == "reason") {
    e.stage = Stage::kReason;
  } else if (stage == "retrieve") {
    e.stage = Stage::kRetrieve;
  } else {
    throw Error(ErrorCode::kParseError, "bad stage '" + stage + "'");
  }
  const auto code = j.at("code").get<std::string>();
  e.code = ErrorCode::kInvalidArgument;
  for (int c = 0; c <= static_cast<int>(ErrorCode::kIoError); ++c) {
    if (error_code_name(static_cast<ErrorCode>(c)) == code) e.code = static_cast<ErrorCode>(c);
  }
  e.message = j.at("message").get<std::string>();
}

void to_json(Json& j, const PipelineTrace& t) {
  j = Json{{"query_id", t.query_id},
           {"mode", t.mode},
           {"task", t.task},
           {"reference_image_id", t.reference_image_id},
           {"instruction", t.instruction},
           {"positives", t.positives}};
  put_optional(j, "caption", t.caption);
  put_optional(j, "target_caption", t.target_caption);
  put_optional(j, "reasoner_raw_reply", t.reasoner_raw_reply);
  j["marker_missing"] = t.marker_missing;
  j["overrides"] = t.overrides;
  j["ranking"] = t.ranking;
  put_optional(j, "subset_ranking", t.subset_ranking);
  j["timings"] = t.timings;
  put_optional(j, "error", t.error);
}

void from_json(const Json& j, PipelineTrace& t) {
  t.query_id = j.at("query_id").get<std::string>();
  t.mode = j.at("mode").get<QueryMode>();
  t.task = j.at("task").get<TaskKind>();
  t.reference_image_id = j.at("reference_image_id").get<std::string>();
  t.instruction = j.at("instruction").get<std::string>();
  t.positives = j.at("positives").get<std::vector<std::string>>();
  t.caption = optional_field<CaptionRecord>(j, "caption");
  t.target_caption = optional_field<TargetCaption>(j, "target_caption");
  t.reasoner_raw_reply = optional_field<std::string>(j, "reasoner_raw_reply");
  t.marker_missing = j.value("marker_missing", false);
  t.overrides = optional_field<Overrides>(j, "overrides").value_or(Overrides{});
  t.ranking = j.at("ranking").get<RankedResult>();
  t.subset_ranking = optional_field<RankedResult>(j, "subset_ranking");
  t.timings = optional_field<std::map<std::string, double>>(j, "timings")
                  .value_or(std::map<std::string, double>{});
  t.error = optional_field<TraceError>(j, "error");
}

}  // namespace cirevl
