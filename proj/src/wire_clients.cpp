#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <semaphore>
#include <sstream>
#include <thread>

#include "httplib.h"

#include "cirevl/clients.hpp"
#include "cirevl/digest.hpp"
#include "cirevl/serialization.hpp"

namespace cirevl {

// Shared POST-with-retries plumbing for the three wire clients. Every call
// is read-only on the server side, so whole-request retry is safe.
class HttpTransport {
 public:
  HttpTransport(const ModelEndpointConfig& config, std::string path)
      : config_(config), slots_(config.max_in_flight) {
    const auto& url = config.base_url;
    const auto scheme_end = url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url.find('/', host_start);
    origin_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? std::string{} : url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    if (!path.empty() && !path_.ends_with(path)) path_ += path;
    if (path_.empty()) path_ = "/";
  }

  Json post_json(const Json& body) const {
    const std::string payload = body.dump();
    std::string last_failure;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) backoff(attempt);
      slots_.acquire();
      httplib::Result res = send(payload);
      slots_.release();

      if (!res) {
        last_failure = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_failure = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        throw Error(ErrorCode::kClientUnavailable,
                    std::string(to_string(config_.role)) + " endpoint returned HTTP " +
                        std::to_string(res->status));
      }
      try {
        return Json::parse(res->body);
      } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::kClientUnavailable,
                    std::string(to_string(config_.role)) + " returned malformed JSON: " + e.what());
      }
    }
    throw Error(ErrorCode::kClientUnavailable,
                std::string(to_string(config_.role)) + " unavailable after " +
                    std::to_string(config_.max_retries + 1) + " attempts (" + last_failure + ")");
  }

 private:
  httplib::Result send(const std::string& payload) const {
    httplib::Client client(origin_);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!config_.api_key_env.empty()) {
      if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
      }
    }
    return client.Post(path_, headers, payload, "application/json");
  }

  void backoff(int attempt) const {
    thread_local std::mt19937 rng{std::random_device{}()};
    std::uniform_real_distribution<double> jitter(0.8, 1.2);
    const double ms = config_.backoff_base_ms * std::pow(2.0, attempt - 1) * jitter(rng);
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
  }

  ModelEndpointConfig config_;
  std::string origin_;
  std::string path_;
  mutable std::counting_semaphore<4096> slots_;
};

namespace {

// Adds either "image_url" or "image_b64" to `body`.
void attach_image(Json& body, const std::filesystem::path& root, const ImageRecord& image) {
  const auto path = local_image_path(root, image.uri);
  if (!path) {
    body["image_url"] = image.uri;
    return;
  }
  std::ifstream in(*path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIoError, "cannot read image '" + image.id + "' at " + path->string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  body["image_b64"] = base64_encode(buf.str());
}

std::string require_string(const Json& j, const char* what) {
  if (!j.is_string()) throw Error(ErrorCode::kEmptyModelOutput, std::string(what) + " missing from reply");
  return j.get<std::string>();
}

}  // namespace

WireCaptioner::WireCaptioner(ModelEndpointConfig config, std::filesystem::path image_root)
    : config_(std::move(config)),
      image_root_(std::move(image_root)),
      transport_(std::make_unique<HttpTransport>(config_, "")) {}

WireCaptioner::~WireCaptioner() = default;

std::string WireCaptioner::caption_image(const ImageRecord& image) const {
  Json body{{"model", config_.model_id}};
  attach_image(body, image_root_, image);
  const Json reply = transport_->post_json(body);
  const std::string caption = single_line(require_string(reply.value("caption", Json()), "caption"));
  if (caption.empty()) throw Error(ErrorCode::kEmptyModelOutput, "captioner returned an empty caption");
  return caption;
}

WireReasoner::WireReasoner(ModelEndpointConfig config)
    : config_(std::move(config)),
      transport_(std::make_unique<HttpTransport>(config_, "/chat/completions")) {}

WireReasoner::~WireReasoner() = default;

std::string WireReasoner::complete(const std::string& prompt_text) const {
  if (prompt_text.empty()) throw Error(ErrorCode::kInvalidArgument, "reasoner prompt must be nonempty");
  Json body{{"model", config_.model_id},
            {"messages", Json::array({Json{{"role", "user"}, {"content", prompt_text}}})},
            {"temperature", config_.temperature}};
  if (config_.max_tokens) body["max_tokens"] = *config_.max_tokens;
  const Json reply = transport_->post_json(body);
  std::string content;
  try {
    content = require_string(reply.at("choices").at(0).at("message").at("content"), "content");
  } catch (const Json::exception&) {
    throw Error(ErrorCode::kEmptyModelOutput, "reasoner reply has no choices[0].message.content");
  }
  if (content.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::kEmptyModelOutput, "reasoner returned an empty reply");
  }
  return content;
}

WireEmbedder::WireEmbedder(ModelEndpointConfig config, std::filesystem::path image_root)
    : config_(std::move(config)),
      image_root_(std::move(image_root)),
      transport_(std::make_unique<HttpTransport>(config_, "")) {}

WireEmbedder::~WireEmbedder() = default;

EmbeddingVector WireEmbedder::post(const Json& body) const {
  const Json reply = transport_->post_json(body);
  const auto it = reply.find("embedding");
  if (it == reply.end() || !it->is_array() || it->empty()) {
    throw Error(ErrorCode::kEmptyModelOutput, "embedder reply has no embedding");
  }
  std::vector<float> values;
  try {
    values = it->get<std::vector<float>>();
  } catch (const Json::exception&) {
    throw Error(ErrorCode::kEmptyModelOutput, "embedder reply has a non-numeric embedding");
  }
  if (config_.dim != 0 && values.size() != config_.dim) {
    throw Error(ErrorCode::kDimMismatch, "embedder returned dim " + std::to_string(values.size()) +
                                             ", advertised " + std::to_string(config_.dim));
  }
  return EmbeddingVector(std::move(values));
}

EmbeddingVector WireEmbedder::embed_text(const std::string& text) const {
  if (text.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot embed empty text");
  return post(Json{{"model", config_.model_id}, {"text", text}});
}

EmbeddingVector WireEmbedder::embed_image(const ImageRecord& image) const {
  Json body{{"model", config_.model_id}};
  attach_image(body, image_root_, image);
  return post(body);
}

}  // namespace cirevl
