#include "cirevl/service.hpp"

#include "httplib.h"

#include "cirevl/serialization.hpp"

namespace cirevl {

namespace {

Service::Response json_response(int status, const Json& body) {
  return {status, body.dump(), "application/json"};
}

Service::Response error_response(int status, const std::string& message,
                                 const std::optional<Stage>& stage = std::nullopt,
                                 std::string_view code = {}) {
  Json err{{"message", message}};
  if (stage) err["stage"] = std::string(stage_name(*stage));
  if (!code.empty()) err["code"] = std::string(code);
  return json_response(status, Json{{"error", err}});
}

// Maps pipeline failures onto HTTP statuses.
Service::Response pipeline_error(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kClientUnavailable:
    case ErrorCode::kEmptyModelOutput:
      return error_response(502, e.what(), e.stage(), error_code_name(e.code()));
    case ErrorCode::kUnknownId:
      return error_response(404, e.what(), e.stage(), error_code_name(e.code()));
    default:
      return error_response(422, e.what(), e.stage(), error_code_name(e.code()));
  }
}

std::optional<Json> parse_body(const std::string& body) {
  try {
    Json j = body.empty() ? Json::object() : Json::parse(body);
    if (!j.is_object()) return std::nullopt;
    return j;
  } catch (const Json::parse_error&) {
    return std::nullopt;
  }
}

RunConfig parse_run_config(const Json& j) {
  RunConfig c;
  if (j.contains("mode")) c.mode = parse_query_mode(j.at("mode").get<std::string>());
  if (j.contains("task") && !j.at("task").is_null()) c.task = parse_task_kind(j.at("task").get<std::string>());
  if (j.contains("k")) {
    const auto k = j.at("k").get<long long>();
    if (k < 1) throw Error(ErrorCode::kInvalidK, "k must be >= 1");
    c.k = static_cast<std::size_t>(k);
  }
  if (j.contains("exclude_reference") && !j.at("exclude_reference").is_null()) {
    c.exclude_reference = j.at("exclude_reference").get<bool>();
  }
  if (j.contains("template_id") && !j.at("template_id").is_null()) {
    c.template_id = j.at("template_id").get<std::string>();
  }
  c.cache_enabled = j.value("cache_enabled", true);
  c.validate();
  return c;
}

std::vector<std::string> top_ids(const PipelineTrace& trace) {
  std::vector<std::string> ids;
  for (const auto& s : trace.ranking.ranking) ids.push_back(s.image_id);
  return ids;
}

std::string content_type_for(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".png") return "image/png";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

}  // namespace

Service::Service(const CanonicalDataset& dataset, const GalleryIndex& index, ClientSet clients,
                 ModelCache* cache, TemplateSet templates, std::shared_ptr<const Clock> clock)
    : dataset_(dataset),
      pipeline_(dataset, index, std::move(clients), cache, std::move(templates), std::move(clock)) {}

Service::~Service() = default;

std::shared_ptr<Service::Session> Service::find_session(const std::string& id) const {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::shared_ptr<Service::QueryState> Service::find_query(const Session& session,
                                                         const std::string& id) const {
  std::lock_guard lock(const_cast<std::mutex&>(session.mutex));
  const auto it = session.queries.find(id);
  return it == session.queries.end() ? nullptr : it->second;
}

Json Service::trace_payload(const QueryState& state) {
  Json j = state.trace;
  j["revision"] = state.revision;
  return j;
}

Service::Response Service::create_session(const std::string& body) {
  const auto j = parse_body(body);
  if (!j) return error_response(422, "body must be a JSON object");
  RunConfig config;
  try {
    config = parse_run_config(j->contains("config") ? j->at("config") : *j);
    pipeline_.check_config(config, {});
  } catch (const std::exception& e) {
    return error_response(422, e.what());
  }
  auto session = std::make_shared<Session>();
  session->config = config;
  {
    std::lock_guard lock(sessions_mutex_);
    session->id = "s" + std::to_string(next_session_++);
    sessions_[session->id] = session;
  }
  return json_response(201, Json{{"session_id", session->id}});
}

Service::Response Service::create_query(const std::string& session_id, const std::string& body) {
  auto session = find_session(session_id);
  if (!session) return error_response(404, "unknown session '" + session_id + "'");
  const auto j = parse_body(body);
  if (!j) return error_response(422, "body must be a JSON object");

  auto state = std::make_shared<QueryState>();
  state->config = session->config;
  try {
    CompositionalQuery& q = state->query;
    if (j->contains("dataset_query_id")) {
      const auto wanted = j->at("dataset_query_id").get<std::string>();
      const auto it = std::find_if(dataset_.queries.begin(), dataset_.queries.end(),
                                   [&](const CompositionalQuery& dq) { return dq.id == wanted; });
      if (it == dataset_.queries.end()) {
        return error_response(404, "unknown dataset query '" + wanted + "'");
      }
      q = *it;
    }
    if (j->contains("reference_image_id")) q.reference_image_id = j->at("reference_image_id").get<std::string>();
    if (j->contains("instruction")) q.instruction = j->at("instruction").get<std::string>();
    if (j->contains("task") && !j->at("task").is_null()) q.task = parse_task_kind(j->at("task").get<std::string>());
    if (j->contains("domain_word") && !j->at("domain_word").is_null()) {
      q.domain_word = j->at("domain_word").get<std::string>();
    }
    if (j->contains("positives")) q.positives = j->at("positives").get<std::vector<std::string>>();
    if (j->contains("subset_ids") && !j->at("subset_ids").is_null()) {
      q.subset_ids = j->at("subset_ids").get<std::vector<std::string>>();
    }
    if (j->contains("k")) {
      const auto k = j->at("k").get<long long>();
      if (k < 1) return error_response(422, "k must be >= 1");
      state->config.k = static_cast<std::size_t>(k);
    }
    if (j->contains("mode")) state->config.mode = parse_query_mode(j->at("mode").get<std::string>());
    if (q.reference_image_id.empty()) return error_response(422, "reference_image_id is required");
    if (single_line(q.instruction).empty()) return error_response(422, "instruction is required");
    if (!dataset_.find_image(q.reference_image_id)) {
      return error_response(404, "unknown image '" + q.reference_image_id + "'");
    }
  } catch (const Json::exception& e) {
    return error_response(422, e.what());
  } catch (const Error& e) {
    return error_response(422, e.what());
  }

  {
    std::lock_guard lock(session->mutex);
    state->query.id = "q" + std::to_string(session->next_query++);
  }
  std::lock_guard state_lock(state->mutex);
  try {
    state->trace = pipeline_.run_query(state->query, state->config, state->overrides);
  } catch (const Error& e) {
    return pipeline_error(e);
  }
  state->revision = 1;
  state->history.push_back({1, state->overrides, top_ids(state->trace)});
  {
    std::lock_guard lock(session->mutex);
    session->queries[state->query.id] = state;
  }
  return json_response(201, trace_payload(*state));
}

Service::Response Service::get_query(const std::string& session_id, const std::string& query_id) {
  auto session = find_session(session_id);
  if (!session) return error_response(404, "unknown session '" + session_id + "'");
  auto state = find_query(*session, query_id);
  if (!state) return error_response(404, "unknown query '" + query_id + "'");
  std::lock_guard lock(state->mutex);
  return json_response(200, trace_payload(*state));
}

Service::Response Service::patch_query(const std::string& session_id, const std::string& query_id,
                                       const std::string& body) {
  auto session = find_session(session_id);
  if (!session) return error_response(404, "unknown session '" + session_id + "'");
  auto state = find_query(*session, query_id);
  if (!state) return error_response(404, "unknown query '" + query_id + "'");
  const auto j = parse_body(body);
  if (!j) return error_response(422, "body must be a JSON object");

  const bool has_caption = j->contains("caption");
  const bool has_target = j->contains("target_caption");
  const bool has_instruction = j->contains("instruction");
  if (!has_caption && !has_target && !has_instruction) {
    return error_response(422, "patch must set at least one of caption, target_caption, instruction");
  }
  if (!j->contains("expected_revision") || !j->at("expected_revision").is_number_integer()) {
    return error_response(422, "expected_revision (integer) is required");
  }
  auto read_field = [&](const char* key) -> std::optional<std::string> {
    const Json& v = j->at(key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_string() || single_line(v.get<std::string>()).empty()) {
      throw Error(ErrorCode::kInvalidArgument, std::string(key) + " must be a nonempty string or null");
    }
    return v.get<std::string>();
  };

  std::lock_guard lock(state->mutex);
  const int expected = j->at("expected_revision").get<int>();
  if (expected != state->revision) {
    Json err{{"error", {{"message", "stale revision"}, {"current_revision", state->revision}}},
             {"trace", trace_payload(*state)}};
    return json_response(409, err);
  }

  Overrides next = state->overrides;
  try {
    if (has_caption) next.caption = read_field("caption");
    if (has_instruction) next.instruction = read_field("instruction");
    if (has_target) {
      next.target_caption = read_field("target_caption");
    } else if (has_caption || has_instruction) {
      // An upstream edit re-derives the target caption.
      next.target_caption.reset();
    }
  } catch (const Error& e) {
    return error_response(422, e.what());
  }

  // Keep the current caption unless the caption itself was edited.
  std::optional<CaptionRecord> reuse;
  if (!has_caption && !next.caption) reuse = state->trace.caption;

  PipelineTrace trace;
  try {
    trace = pipeline_.run_query(state->query, state->config, next, reuse);
  } catch (const Error& e) {
    return pipeline_error(e);
  }
  state->overrides = next;
  state->trace = std::move(trace);
  ++state->revision;
  state->history.push_back({state->revision, state->overrides, top_ids(state->trace)});
  return json_response(200, trace_payload(*state));
}

Service::Response Service::history(const std::string& session_id, const std::string& query_id) {
  auto session = find_session(session_id);
  if (!session) return error_response(404, "unknown session '" + session_id + "'");
  auto state = find_query(*session, query_id);
  if (!state) return error_response(404, "unknown query '" + query_id + "'");
  std::lock_guard lock(state->mutex);
  Json out = Json::array();
  for (const auto& h : state->history) {
    out.push_back({{"revision", h.revision}, {"overrides", h.overrides}, {"top_k", h.top_ids}});
  }
  return json_response(200, out);
}

Service::Response Service::list_images() const {
  Json out = Json::array();
  for (const auto& img : dataset_.images) out.push_back({{"id", img.id}});
  return json_response(200, out);
}

Service::Response Service::image(const std::string& image_id) const {
  const ImageRecord* img = dataset_.find_image(image_id);
  if (!img) return error_response(404, "unknown image '" + image_id + "'");
  const auto path = local_image_path(dataset_.root, img->uri);
  if (!path) return {302, img->uri, "text/uri-list"};
  std::error_code ec;
  if (!std::filesystem::is_regular_file(*path, ec)) {
    return error_response(404, "image file for '" + image_id + "' not found");
  }
  return {200, read_file(*path), content_type_for(*path)};
}

void Service::dump_sessions(const std::filesystem::path& path) const {
  std::string out;
  std::lock_guard lock(sessions_mutex_);
  for (const auto& [sid, session] : sessions_) {
    std::lock_guard session_lock(session->mutex);
    for (const auto& [qid, state] : session->queries) {
      std::lock_guard state_lock(state->mutex);
      Json line{{"session_id", sid}, {"query", state->query}, {"revision", state->revision},
                {"trace", state->trace}};
      out += line.dump();
      out += '\n';
    }
  }
  write_file_atomic(path, out);
}

void Service::mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir) {
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    if (r.status == 302) {
      res.set_redirect(r.body);
      return;
    }
    res.set_content(r.body, r.content_type);
  };

  server.Post("/api/v1/sessions", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, create_session(req.body));
  });
  server.Post(R"(/api/v1/sessions/([^/]+)/queries)",
              [this, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, create_query(req.matches[1], req.body));
              });
  server.Get(R"(/api/v1/sessions/([^/]+)/queries/([^/]+)/history)",
             [this, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, history(req.matches[1], req.matches[2]));
             });
  server.Get(R"(/api/v1/sessions/([^/]+)/queries/([^/]+))",
             [this, reply](const httplib::Request& req, httplib::Response& res) {
               reply(res, get_query(req.matches[1], req.matches[2]));
             });
  server.Patch(R"(/api/v1/sessions/([^/]+)/queries/([^/]+))",
               [this, reply](const httplib::Request& req, httplib::Response& res) {
                 reply(res, patch_query(req.matches[1], req.matches[2], req.body));
               });
  server.Get("/api/v1/images", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, list_images());
  });
  server.Get(R"(/api/v1/images/([^/]+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, image(req.matches[1]));
  });
  if (static_dir) server.set_mount_point("/", static_dir->string());
}

}  // namespace cirevl
