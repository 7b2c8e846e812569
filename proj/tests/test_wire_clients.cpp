#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"

#include "cirevl/clients.hpp"
#include "cirevl/digest.hpp"
#include "support.hpp"

using namespace cirevl;
using nlohmann::json;

namespace {

// Local HTTP server on an ephemeral port, stopped on scope exit.
class FakeServer {
 public:
  FakeServer() {
    port_ = server.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeServer() {
    server.stop();
    thread_.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

  httplib::Server server;

 private:
  int port_ = 0;
  std::thread thread_;
};

ModelEndpointConfig endpoint(ClientRole role, const std::string& url) {
  ModelEndpointConfig c;
  c.role = role;
  c.base_url = url;
  c.model_id = "wire-model";
  c.backoff_base_ms = 5;
  c.timeout_ms = 2000;
  return c;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("503 on every attempt exhausts retries") {
  FakeServer fake;
  std::atomic<int> calls{0};
  fake.server.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 503;
  });
  WireEmbedder embedder(endpoint(ClientRole::kEmbedder, fake.url("/embed")), ".");
  CHECK(code_of([&] { embedder.embed_text("x"); }) == ErrorCode::kClientUnavailable);
  CHECK(calls == 3);
}

TEST_CASE("transient failures are retried") {
  FakeServer fake;
  std::atomic<int> calls{0};
  fake.server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    if (++calls <= 2) {
      res.status = calls == 1 ? 429 : 502;
      return;
    }
    const auto body = json::parse(req.body);
    CHECK(body.at("model") == "wire-model");
    CHECK(body.at("text") == "hello");
    res.set_content(R"({"embedding": [3, 4]})", "application/json");
  });
  WireEmbedder embedder(endpoint(ClientRole::kEmbedder, fake.url("/embed")), ".");
  CHECK(embedder.embed_text("hello") == EmbeddingVector{3, 4});
  CHECK(calls == 3);
}

TEST_CASE("client errors are not retried") {
  FakeServer fake;
  std::atomic<int> calls{0};
  fake.server.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 400;
  });
  WireEmbedder embedder(endpoint(ClientRole::kEmbedder, fake.url("/embed")), ".");
  CHECK(code_of([&] { embedder.embed_text("x"); }) == ErrorCode::kClientUnavailable);
  CHECK(calls == 1);
}

TEST_CASE("timeout becomes ClientUnavailable") {
  FakeServer fake;
  fake.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    res.set_content(R"({"choices": [{"message": {"content": "late"}}]})", "application/json");
  });
  auto config = endpoint(ClientRole::kReasoner, fake.url("/v1"));
  config.timeout_ms = 100;
  config.max_retries = 0;
  WireReasoner reasoner(config);
  CHECK(code_of([&] { reasoner.complete("p"); }) == ErrorCode::kClientUnavailable);
}

TEST_CASE("wrong dimension is rejected") {
  FakeServer fake;
  fake.server.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"embedding": [1, 2, 3]})", "application/json");
  });
  auto config = endpoint(ClientRole::kEmbedder, fake.url("/embed"));
  config.dim = 4;
  WireEmbedder embedder(config, ".");
  CHECK(code_of([&] { embedder.embed_text("x"); }) == ErrorCode::kDimMismatch);
}

TEST_CASE("malformed and empty replies") {
  FakeServer fake;
  fake.server.Post("/caption", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"caption": "  "})", "application/json");
  });
  fake.server.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "text/plain");
  });
  WireCaptioner captioner(endpoint(ClientRole::kCaptioner, fake.url("/caption")), ".");
  CHECK(code_of([&] { captioner.caption_image({"a", "https://x/a.png", {}}); }) == ErrorCode::kEmptyModelOutput);
  WireEmbedder embedder(endpoint(ClientRole::kEmbedder, fake.url("/embed")), ".");
  CHECK(code_of([&] { embedder.embed_text("x"); }) == ErrorCode::kClientUnavailable);
}

TEST_CASE("chat-completions request shape and bearer key") {
  FakeServer fake;
  json seen;
  std::string auth;
  fake.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(R"({"choices": [{"message": {"content": "Edited Description: a red car"}}]})",
                    "application/json");
  });
  ::setenv("CIREVL_TEST_KEY", "sk-test", 1);
  auto config = endpoint(ClientRole::kReasoner, fake.url("/v1/"));
  config.api_key_env = "CIREVL_TEST_KEY";
  config.max_tokens = 64;
  WireReasoner reasoner(config);
  CHECK(reasoner.complete("the prompt") == "Edited Description: a red car");
  CHECK(seen.at("model") == "wire-model");
  CHECK(seen.at("messages").size() == 1);
  CHECK(seen.at("messages")[0].at("role") == "user");
  CHECK(seen.at("messages")[0].at("content") == "the prompt");
  CHECK(seen.at("temperature") == 0.0);
  CHECK(seen.at("max_tokens") == 64);
  CHECK(auth == "Bearer sk-test");
}

TEST_CASE("captioner sends local bytes as base64 and remote images by url") {
  testing::TempDir dir;
  {
    std::ofstream(dir / "a.png", std::ios::binary) << "PNGDATA";
  }
  FakeServer fake;
  std::vector<json> bodies;
  std::mutex mutex;
  fake.server.Post("/caption", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mutex);
    bodies.push_back(json::parse(req.body));
    res.set_content(R"({"caption": "a dog\non grass"})", "application/json");
  });
  WireCaptioner captioner(endpoint(ClientRole::kCaptioner, fake.url("/caption")), dir.path());
  CHECK(captioner.caption_image({"a", "a.png", {}}) == "a dog on grass");
  CHECK(captioner.caption_image({"b", "https://example.org/b.png", {}}) == "a dog on grass");
  REQUIRE(bodies.size() == 2);
  CHECK(bodies[0].at("image_b64") == base64_encode("PNGDATA"));
  CHECK(bodies[1].at("image_url") == "https://example.org/b.png");
  CHECK(code_of([&] { captioner.caption_image({"c", "missing.png", {}}); }) == ErrorCode::kIoError);
}

TEST_CASE("in-flight requests are bounded") {
  FakeServer fake;
  std::atomic<int> active{0}, peak{0};
  fake.server.new_task_queue = [] { return new httplib::ThreadPool(8); };
  fake.server.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
    const int now = ++active;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(40));
    --active;
    res.set_content(R"({"embedding": [1, 0]})", "application/json");
  });
  auto config = endpoint(ClientRole::kEmbedder, fake.url("/embed"));
  config.max_in_flight = 2;
  WireEmbedder embedder(config, ".");
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { embedder.embed_text("x"); });
  for (auto& t : threads) t.join();
  CHECK(peak <= 2);
  CHECK(peak >= 1);
}

TEST_CASE("unreachable endpoint") {
  auto config = endpoint(ClientRole::kEmbedder, "http://127.0.0.1:1/embed");
  config.max_retries = 1;
  WireEmbedder embedder(config, ".");
  CHECK(code_of([&] { embedder.embed_text("x"); }) == ErrorCode::kClientUnavailable);
}
