#include "cirevl/clients.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "cirevl/digest.hpp"
#include "cirevl/serialization.hpp"

namespace cirevl {

std::string_view to_string(ClientRole role) {
  switch (role) {
    case ClientRole::kCaptioner: return "captioner";
    case ClientRole::kReasoner: return "reasoner";
    case ClientRole::kEmbedder: return "embedder";
  }
  return "captioner";
}

void ModelEndpointConfig::validate() const {
  const std::string where = std::string(to_string(role)) + " config: ";
  if (kind != "wire" && kind != "mock") {
    throw Error(ErrorCode::kInvalidArgument, where + "kind must be 'wire' or 'mock'");
  }
  if (model_id.empty()) throw Error(ErrorCode::kInvalidArgument, where + "model_id is empty");
  if (kind == "wire" && base_url.empty()) {
    throw Error(ErrorCode::kInvalidArgument, where + "base_url is required for wire clients");
  }
  if (timeout_ms <= 0) throw Error(ErrorCode::kInvalidArgument, where + "timeout_ms must be > 0");
  if (max_retries < 0) throw Error(ErrorCode::kInvalidArgument, where + "max_retries must be >= 0");
  if (backoff_base_ms < 0) {
    throw Error(ErrorCode::kInvalidArgument, where + "backoff_base_ms must be >= 0");
  }
  if (max_in_flight < 1) {
    throw Error(ErrorCode::kInvalidArgument, where + "max_in_flight must be >= 1");
  }
  if (temperature < 0.0) throw Error(ErrorCode::kInvalidArgument, where + "temperature must be >= 0");
}

void MockFixture::validate() const {
  if (dim < 2) throw Error(ErrorCode::kInvalidArgument, "mock fixture dim must be >= 2");
  for (const auto& [text, vec] : text_vectors) {
    if (vec.size() != dim) {
      throw Error(ErrorCode::kDimMismatch,
                  "fixture text vector for '" + text + "' has length " +
                      std::to_string(vec.size()) + ", expected " + std::to_string(dim));
    }
  }
}

MockFixture MockFixture::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open mock fixture " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
  }
  MockFixture f;
  using StrMap = std::map<std::string, std::string>;
  f.captions = j.value("captions", StrMap{});
  f.replies = j.value("replies", StrMap{});
  f.pseudo_captions = j.value("pseudo_captions", StrMap{});
  f.text_vectors = j.value("text_vectors", std::map<std::string, std::vector<float>>{});
  f.dim = j.value("dim", std::size_t{64});
  f.validate();
  return f;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<float> hash_embed(std::string_view text, std::size_t dim) {
  std::vector<float> counts(dim, 0.0f);
  for (const auto& token : tokenize(text)) counts[fnv1a64(token) % dim] += 1.0f;
  return counts;
}

MockCaptioner::MockCaptioner(std::shared_ptr<const MockFixture> fixture, std::string model_id)
    : fixture_(std::move(fixture)), model_id_(std::move(model_id)) {}

std::string MockCaptioner::caption_image(const ImageRecord& image) const {
  std::string text;
  if (auto it = fixture_->captions.find(image.id); it != fixture_->captions.end()) {
    text = it->second;
  } else if (auto p = fixture_->pseudo_captions.find(image.id);
             p != fixture_->pseudo_captions.end()) {
    text = p->second;
  }
  text = single_line(text);
  if (text.empty()) {
    throw Error(ErrorCode::kEmptyModelOutput, "mock captioner has no caption for '" + image.id + "'");
  }
  return text;
}

MockReasoner::MockReasoner(std::shared_ptr<const MockFixture> fixture, std::string model_id)
    : fixture_(std::move(fixture)), model_id_(std::move(model_id)) {}

namespace {

std::string last_marked_line(const std::string& text, std::string_view marker) {
  std::istringstream lines(text);
  std::string line;
  std::string found;
  while (std::getline(lines, line)) {
    if (line.rfind(marker, 0) == 0) found = line.substr(marker.size());
  }
  const auto first = found.find_first_not_of(' ');
  return first == std::string::npos ? std::string{} : found.substr(first);
}

}  // namespace

std::string MockReasoner::complete(const std::string& prompt_text) const {
  if (prompt_text.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "reasoner prompt must be nonempty");
  }
  if (auto it = fixture_->replies.find(sha256_hex(prompt_text)); it != fixture_->replies.end()) {
    if (it->second.empty()) throw Error(ErrorCode::kEmptyModelOutput, "mock reply is empty");
    return it->second;
  }
  const std::string caption = last_marked_line(prompt_text, "Image Content:");
  const std::string instruction = last_marked_line(prompt_text, "Instruction:");
  if (caption.empty() && instruction.empty()) {
    throw Error(ErrorCode::kEmptyModelOutput, "mock reasoner found no caption or instruction");
  }
  return "Edited Description: " + caption + ", " + instruction;
}

MockEmbedder::MockEmbedder(std::shared_ptr<const MockFixture> fixture, std::string model_id)
    : fixture_(std::move(fixture)), model_id_(std::move(model_id)) {}

EmbeddingVector MockEmbedder::embed_text(const std::string& text) const {
  if (text.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot embed empty text");
  if (auto it = fixture_->text_vectors.find(text); it != fixture_->text_vectors.end()) {
    return EmbeddingVector(it->second);
  }
  return EmbeddingVector(hash_embed(text, fixture_->dim));
}

EmbeddingVector MockEmbedder::embed_image(const ImageRecord& image) const {
  const auto it = fixture_->pseudo_captions.find(image.id);
  if (it == fixture_->pseudo_captions.end() || it->second.empty()) {
    throw Error(ErrorCode::kEmptyModelOutput, "mock embedder has no pseudo-caption for '" + image.id + "'");
  }
  return embed_text(it->second);
}

namespace {

ModelEndpointConfig parse_endpoint(const Json& j, ClientRole role) {
  ModelEndpointConfig c;
  c.role = role;
  c.kind = j.value("kind", std::string("wire"));
  c.base_url = j.value("base_url", std::string{});
  c.model_id = j.value("model_id", std::string("mock-") + std::string(to_string(role)));
  c.api_key_env = j.value("api_key_env", std::string{});
  c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.temperature = j.value("temperature", c.temperature);
  if (j.contains("max_tokens") && !j.at("max_tokens").is_null()) {
    c.max_tokens = j.at("max_tokens").get<int>();
  }
  c.dim = j.value("dim", c.dim);
  c.validate();
  return c;
}

}  // namespace

ClientsConfig ClientsConfig::parse(const std::string& json_text,
                                   const std::filesystem::path& base_dir) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::kParseError, std::string("clients config: ") + e.what());
  }
  ClientsConfig config;
  if (j.contains("captioner")) config.captioner = parse_endpoint(j["captioner"], ClientRole::kCaptioner);
  if (j.contains("reasoner")) config.reasoner = parse_endpoint(j["reasoner"], ClientRole::kReasoner);
  if (j.contains("embedder")) config.embedder = parse_endpoint(j["embedder"], ClientRole::kEmbedder);
  if (j.contains("fixture")) {
    std::filesystem::path p = j["fixture"].get<std::string>();
    config.fixture_path = p.is_relative() ? base_dir / p : p;
  }
  return config;
}

ClientsConfig ClientsConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open clients config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.parent_path());
}

ClientSet make_clients(const ClientsConfig& config, const std::filesystem::path& image_root) {
  std::shared_ptr<const MockFixture> fixture;
  auto need_fixture = [&]() {
    if (!fixture) {
      if (!config.fixture_path) {
        throw Error(ErrorCode::kInvalidArgument, "mock clients require a 'fixture' path");
      }
      fixture = std::make_shared<const MockFixture>(MockFixture::load(*config.fixture_path));
    }
    return fixture;
  };

  ClientSet set;
  if (const auto& c = config.captioner) {
    if (c->kind == "mock") {
      set.captioner = std::make_shared<MockCaptioner>(need_fixture(), c->model_id);
    } else {
      set.captioner = std::make_shared<WireCaptioner>(*c, image_root);
    }
  }
  if (const auto& c = config.reasoner) {
    if (c->kind == "mock") {
      set.reasoner = std::make_shared<MockReasoner>(need_fixture(), c->model_id);
    } else {
      set.reasoner = std::make_shared<WireReasoner>(*c);
    }
  }
  if (const auto& c = config.embedder) {
    if (c->kind == "mock") {
      set.embedder = std::make_shared<MockEmbedder>(need_fixture(), c->model_id);
    } else {
      set.embedder = std::make_shared<WireEmbedder>(*c, image_root);
    }
  }
  return set;
}

ClientSet make_mock_clients(std::shared_ptr<const MockFixture> fixture,
                            const std::string& captioner_id, const std::string& reasoner_id,
                            const std::string& embedder_id) {
  fixture->validate();
  return ClientSet{std::make_shared<MockCaptioner>(fixture, captioner_id),
                   std::make_shared<MockReasoner>(fixture, reasoner_id),
                   std::make_shared<MockEmbedder>(fixture, embedder_id)};
}

std::optional<std::filesystem::path> local_image_path(const std::filesystem::path& root,
                                                      const std::string& uri) {
  if (uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0) return std::nullopt;
  std::string path = uri;
  if (path.rfind("file://", 0) == 0) path = path.substr(7);
  std::filesystem::path p(path);
  return p.is_relative() ? root / p : p;
}

}  // namespace cirevl
