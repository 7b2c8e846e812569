#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cirevl/types.hpp"

namespace cirevl {

enum class ClientRole { kCaptioner, kReasoner, kEmbedder };

std::string_view to_string(ClientRole role);

/// Endpoint settings for one model role. `kind` is "wire" (HTTP) or "mock"
/// (fixture-backed). Secrets are never stored here, only the name of the
/// environment variable that holds them.
struct ModelEndpointConfig {
  ClientRole role = ClientRole::kCaptioner;
  std::string kind = "wire";
  std::string base_url;
  std::string model_id;
  std::string api_key_env;
  int timeout_ms = 30000;
  int max_retries = 2;
  int backoff_base_ms = 250;
  int max_in_flight = 8;
  double temperature = 0.0;
  std::optional<int> max_tokens;
  // Advertised embedding dimension; 0 accepts whatever the endpoint returns.
  std::size_t dim = 0;

  /// Throws InvalidArgument on a violated invariant.
  void validate() const;
};

/// Deterministic stand-in for all three model roles.
struct MockFixture {
  std::map<std::string, std::string> captions;
  // Keyed by sha256_hex of the full reasoner prompt.
  std::map<std::string, std::string> replies;
  std::map<std::string, std::vector<float>> text_vectors;
  std::map<std::string, std::string> pseudo_captions;
  std::size_t dim = 64;

  void validate() const;
  static MockFixture load(const std::filesystem::path& path);
};

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption_image(const ImageRecord& image) const = 0;
  virtual const std::string& model_id() const = 0;
};

class Reasoner {
 public:
  virtual ~Reasoner() = default;
  /// Raw reply text; parsing is the prompt kit's job.
  virtual std::string complete(const std::string& prompt_text) const = 0;
  virtual const std::string& model_id() const = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  /// Un-normalized embedding of `text`.
  virtual EmbeddingVector embed_text(const std::string& text) const = 0;
  virtual EmbeddingVector embed_image(const ImageRecord& image) const = 0;
  virtual std::size_t dim() const = 0;
  virtual const std::string& model_id() const = 0;
};

struct ClientSet {
  std::shared_ptr<const Captioner> captioner;
  std::shared_ptr<const Reasoner> reasoner;
  std::shared_ptr<const Embedder> embedder;
};

/// Number of calls that actually reached a client (cache hits excluded).
struct CallCounters {
  std::atomic<std::size_t> captioner{0};
  std::atomic<std::size_t> reasoner{0};
  std::atomic<std::size_t> embedder{0};

  void reset() {
    captioner = 0;
    reasoner = 0;
    embedder = 0;
  }
};

// Hash embedder: lowercase, split on non-alphanumeric runs, FNV-1a 64 per
// token, add 1.0 to bucket (hash mod dim). Returns raw counts.
std::vector<std::string> tokenize(std::string_view text);
std::vector<float> hash_embed(std::string_view text, std::size_t dim);

class MockCaptioner final : public Captioner {
 public:
  MockCaptioner(std::shared_ptr<const MockFixture> fixture, std::string model_id);
  std::string caption_image(const ImageRecord& image) const override;
  const std::string& model_id() const override { return model_id_; }

 private:
  std::shared_ptr<const MockFixture> fixture_;
  std::string model_id_;
};

/// Looks up the prompt digest in the fixture; otherwise echoes
/// "Edited Description: {caption}, {instruction}" using the last
/// "Image Content:" and "Instruction:" lines of the prompt.
class MockReasoner final : public Reasoner {
 public:
  MockReasoner(std::shared_ptr<const MockFixture> fixture, std::string model_id);
  std::string complete(const std::string& prompt_text) const override;
  const std::string& model_id() const override { return model_id_; }

 private:
  std::shared_ptr<const MockFixture> fixture_;
  std::string model_id_;
};

class MockEmbedder final : public Embedder {
 public:
  MockEmbedder(std::shared_ptr<const MockFixture> fixture, std::string model_id);
  EmbeddingVector embed_text(const std::string& text) const override;
  EmbeddingVector embed_image(const ImageRecord& image) const override;
  std::size_t dim() const override { return fixture_->dim; }
  const std::string& model_id() const override { return model_id_; }

 private:
  std::shared_ptr<const MockFixture> fixture_;
  std::string model_id_;
};

class HttpTransport;

/// POST {"model", "image_b64" | "image_url"} -> {"caption"}.
class WireCaptioner final : public Captioner {
 public:
  WireCaptioner(ModelEndpointConfig config, std::filesystem::path image_root);
  ~WireCaptioner() override;
  std::string caption_image(const ImageRecord& image) const override;
  const std::string& model_id() const override { return config_.model_id; }

 private:
  ModelEndpointConfig config_;
  std::filesystem::path image_root_;
  std::unique_ptr<HttpTransport> transport_;
};

/// Chat-completions wire format: one user message, first choice's content.
class WireReasoner final : public Reasoner {
 public:
  explicit WireReasoner(ModelEndpointConfig config);
  ~WireReasoner() override;
  std::string complete(const std::string& prompt_text) const override;
  const std::string& model_id() const override { return config_.model_id; }

 private:
  ModelEndpointConfig config_;
  std::unique_ptr<HttpTransport> transport_;
};

/// POST {"model", "text" | "image_b64" | "image_url"} -> {"embedding": [...]}.
class WireEmbedder final : public Embedder {
 public:
  WireEmbedder(ModelEndpointConfig config, std::filesystem::path image_root);
  ~WireEmbedder() override;
  EmbeddingVector embed_text(const std::string& text) const override;
  EmbeddingVector embed_image(const ImageRecord& image) const override;
  std::size_t dim() const override { return config_.dim; }
  const std::string& model_id() const override { return config_.model_id; }

 private:
  EmbeddingVector post(const nlohmann::json& body) const;

  ModelEndpointConfig config_;
  std::filesystem::path image_root_;
  std::unique_ptr<HttpTransport> transport_;
};

/// Contents of a clients config file: one optional section per role plus an
/// optional mock fixture path (relative paths resolve against the file).
struct ClientsConfig {
  std::optional<ModelEndpointConfig> captioner;
  std::optional<ModelEndpointConfig> reasoner;
  std::optional<ModelEndpointConfig> embedder;
  std::optional<std::filesystem::path> fixture_path;

  static ClientsConfig load(const std::filesystem::path& path);
  static ClientsConfig parse(const std::string& json_text, const std::filesystem::path& base_dir);
};

/// Instantiates the configured clients. `image_root` resolves relative image
/// uris for wire clients.
ClientSet make_clients(const ClientsConfig& config, const std::filesystem::path& image_root);

/// Mock clients over `fixture` with the given model ids.
ClientSet make_mock_clients(std::shared_ptr<const MockFixture> fixture,
                            const std::string& captioner_id = "mock-captioner",
                            const std::string& reasoner_id = "mock-reasoner",
                            const std::string& embedder_id = "mock-embedder");

/// Resolves an image uri to a local path (relative uris against `root`).
/// Returns nullopt for http(s) uris.
std::optional<std::filesystem::path> local_image_path(const std::filesystem::path& root,
                                                      const std::string& uri);

}  // namespace cirevl
