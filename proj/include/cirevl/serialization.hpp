#pragma once

// Canonical JSON forms of the core value types. Field names follow the
// domain types; enums serialize as kebab-case strings.

#include "json.hpp"

#include "cirevl/types.hpp"

namespace cirevl {

using Json = nlohmann::json;

void to_json(Json& j, const EmbeddingVector& v);
void from_json(const Json& j, EmbeddingVector& v);

void to_json(Json& j, const ImageRecord& r);
void from_json(const Json& j, ImageRecord& r);

void to_json(Json& j, TaskKind t);
void from_json(const Json& j, TaskKind& t);
void to_json(Json& j, QueryMode m);
void from_json(const Json& j, QueryMode& m);

void to_json(Json& j, const CompositionalQuery& q);
void from_json(const Json& j, CompositionalQuery& q);

void to_json(Json& j, const CaptionRecord& c);
void from_json(const Json& j, CaptionRecord& c);

void to_json(Json& j, const TargetCaption& t);
void from_json(const Json& j, TargetCaption& t);

void to_json(Json& j, const ScoredId& s);
void from_json(const Json& j, ScoredId& s);

void to_json(Json& j, const RankedResult& r);
void from_json(const Json& j, RankedResult& r);

void to_json(Json& j, const Overrides& o);
void from_json(const Json& j, Overrides& o);

void to_json(Json& j, const TraceError& e);
void from_json(const Json& j, TraceError& e);

void to_json(Json& j, const PipelineTrace& t);
void from_json(const Json& j, PipelineTrace& t);

}  // namespace cirevl
