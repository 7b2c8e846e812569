#include "cirevl/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>

namespace cirevl {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDegenerateVector: return "DegenerateVector";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kEmptyGallery: return "EmptyGallery";
    case ErrorCode::kUnknownId: return "UnknownId";
    case ErrorCode::kClientUnavailable: return "ClientUnavailable";
    case ErrorCode::kEmptyModelOutput: return "EmptyModelOutput";
    case ErrorCode::kUnsupportedTask: return "UnsupportedTask";
    case ErrorCode::kModeInputMissing: return "ModeInputMissing";
    case ErrorCode::kEmptyEval: return "EmptyEval";
    case ErrorCode::kInvalidK: return "InvalidK";
    case ErrorCode::kMissingSubset: return "MissingSubset";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kIntegrityError: return "IntegrityError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kCaption: return "caption";
    case Stage::kReason: return "reason";
    case Stage::kRetrieve: return "retrieve";
  }
  return "unknown";
}

EmbeddingVector::EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "embedding must have dim >= 1");
  }
  for (float x : values_) {
    if (!std::isfinite(x)) {
      throw Error(ErrorCode::kInvalidArgument, "embedding contains a non-finite value");
    }
  }
}

double EmbeddingVector::norm() const {
  double sum = 0.0;
  for (float x : values_) sum += static_cast<double>(x) * x;
  return std::sqrt(sum);
}

EmbeddingVector normalize(const EmbeddingVector& v) {
  const double n = v.norm();
  if (!(n > kDegenerateNorm)) {
    throw Error(ErrorCode::kDegenerateVector, "cannot normalize a zero or near-zero vector");
  }
  std::vector<float> out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = static_cast<float>(v[i] / n);
  return EmbeddingVector(std::move(out));
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::kDimMismatch, "cosine: dimension " + std::to_string(a.dim()) +
                                             " vs " + std::to_string(b.dim()));
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > kDegenerateNorm) || !(nb > kDegenerateNorm)) {
    throw Error(ErrorCode::kDegenerateVector, "cosine of a zero vector is undefined");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

namespace {

struct TaskName {
  TaskKind kind;
  std::string_view name;
};
constexpr TaskName kTaskNames[] = {
    {TaskKind::kCir, "cir"},
    {TaskKind::kGenecisFocusAttribute, "genecis-focus-attribute"},
    {TaskKind::kGenecisChangeAttribute, "genecis-change-attribute"},
    {TaskKind::kGenecisFocusObject, "genecis-focus-object"},
    {TaskKind::kGenecisChangeObject, "genecis-change-object"},
    {TaskKind::kDomainConversion, "domain-conversion"},
};

struct ModeName {
  QueryMode mode;
  std::string_view name;
};
constexpr ModeName kModeNames[] = {
    {QueryMode::kCirevl, "cirevl"},
    {QueryMode::kImageOnly, "image-only"},
    {QueryMode::kTextOnly, "text-only"},
    {QueryMode::kImagePlusText, "image-plus-text"},
    {QueryMode::kCaptionTemplate, "caption-template"},
};

}  // namespace

std::string_view to_string(TaskKind task) {
  for (const auto& t : kTaskNames) {
    if (t.kind == task) return t.name;
  }
  return "cir";
}

std::string_view to_string(QueryMode mode) {
  for (const auto& m : kModeNames) {
    if (m.mode == mode) return m.name;
  }
  return "cirevl";
}

TaskKind parse_task_kind(std::string_view text) {
  for (const auto& t : kTaskNames) {
    if (t.name == text) return t.kind;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown task kind '" + std::string(text) + "'");
}

QueryMode parse_query_mode(std::string_view text) {
  for (const auto& m : kModeNames) {
    if (m.name == text) return m.mode;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown query mode '" + std::string(text) + "'");
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto secs = floor<seconds>(t);
  const auto ms = (t - secs).count();
  const std::time_t tt = system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(ms));
  return buf;
}

Timestamp parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0, ms = 0;
  const std::string str(text);
  const int n = std::sscanf(str.c_str(), "%d-%d-%dT%d:%d:%d.%dZ", &y, &mo, &d, &h, &mi, &s, &ms);
  if (n < 6) {
    throw Error(ErrorCode::kParseError, "bad timestamp '" + str + "'");
  }
  using namespace std::chrono;
  const sys_days date{year{y} / month{static_cast<unsigned>(mo)} / day{static_cast<unsigned>(d)}};
  return time_point_cast<milliseconds>(date) + hours{h} + minutes{mi} + seconds{s} +
         milliseconds{ms};
}

std::string Provenance::to_string() const {
  switch (kind) {
    case Kind::kModel: return "model:" + id;
    case Kind::kLlm: return "llm:" + id;
    case Kind::kTemplate: return "template:" + id;
    case Kind::kUserOverride: return "user-override";
  }
  return "user-override";
}

Provenance Provenance::parse(std::string_view text) {
  if (text == "user-override") return user_override();
  const auto colon = text.find(':');
  if (colon != std::string_view::npos) {
    const auto prefix = text.substr(0, colon);
    std::string rest(text.substr(colon + 1));
    if (prefix == "model") return model(std::move(rest));
    if (prefix == "llm") return llm(std::move(rest));
    if (prefix == "template") return templated(std::move(rest));
  }
  throw Error(ErrorCode::kParseError, "bad provenance '" + std::string(text) + "'");
}

std::string single_line(std::string_view text) {
  auto is_blank = [](char c) { return c == ' ' || c == '\t'; };
  std::string out;
  out.reserve(text.size());
  bool after_break = false;
  for (char c : text) {
    if (c == '\n' || c == '\r') {
      if (!after_break) {
        while (!out.empty() && is_blank(out.back())) out.pop_back();
        if (!out.empty()) out.push_back(' ');
        after_break = true;
      }
      continue;
    }
    if (after_break && is_blank(c)) continue;
    after_break = false;
    out.push_back(c);
  }
  const auto first = out.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = out.find_last_not_of(" \t");
  return out.substr(first, last - first + 1);
}

}  // namespace cirevl
