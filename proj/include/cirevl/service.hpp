#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cirevl/pipeline.hpp"

namespace httplib {
class Server;
}

namespace cirevl {

/// Session-scoped intervention API over one gallery. Handlers are plain
/// functions of (path params, body) so they can be exercised without a
/// socket; `mount` binds them to an HTTP server under /api/v1.
class Service {
 public:
  struct Response {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
  };

  Service(const CanonicalDataset& dataset, const GalleryIndex& index, ClientSet clients,
          ModelCache* cache = nullptr, TemplateSet templates = {},
          std::shared_ptr<const Clock> clock = system_clock());
  ~Service();

  Response create_session(const std::string& body);
  Response create_query(const std::string& session_id, const std::string& body);
  Response get_query(const std::string& session_id, const std::string& query_id);
  /// Merges the override patch, re-runs the stages below the deepest
  /// override, and bumps the revision. 409 when expected_revision is stale.
  Response patch_query(const std::string& session_id, const std::string& query_id,
                       const std::string& body);
  Response history(const std::string& session_id, const std::string& query_id);
  Response list_images() const;
  Response image(const std::string& image_id) const;

  /// Registers all routes and, if given, serves `static_dir` at "/".
  void mount(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir);

  /// One JSON object per (session, query) with the latest trace.
  void dump_sessions(const std::filesystem::path& path) const;

  const Pipeline& pipeline() const { return pipeline_; }

 private:
  struct HistoryEntry {
    int revision = 0;
    Overrides overrides;
    std::vector<std::string> top_ids;
  };

  struct QueryState {
    std::mutex mutex;
    CompositionalQuery query;
    Overrides overrides;
    PipelineTrace trace;
    int revision = 0;
    std::vector<HistoryEntry> history;
    RunConfig config;
  };

  struct Session {
    std::string id;
    RunConfig config;
    std::mutex mutex;
    std::map<std::string, std::shared_ptr<QueryState>> queries;
    std::size_t next_query = 1;
  };

  std::shared_ptr<Session> find_session(const std::string& id) const;
  std::shared_ptr<QueryState> find_query(const Session& session, const std::string& id) const;
  static nlohmann::json trace_payload(const QueryState& state);

  const CanonicalDataset& dataset_;
  Pipeline pipeline_;

  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_session_ = 1;
};

}  // namespace cirevl
