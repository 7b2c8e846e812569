#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cirevl/clients.hpp"
#include "cirevl/digest.hpp"
#include "cirevl/serialization.hpp"
#include "cirevl/storage.hpp"

namespace cirevl {

// ---- files ---------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw Error(ErrorCode::kIoError, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(ErrorCode::kIoError, "cannot rename into " + path.string() + ": " + ec.message());
  }
}

// ---- embeddings ------------------------------------------------------------------

std::vector<EmbeddingItem> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open embeddings file " + path.string());
  std::vector<EmbeddingItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw Error(ErrorCode::kParseError, where + ": " + e.what());
    }
    std::string id;
    std::vector<float> values;
    std::size_t dim = 0;
    try {
      id = j.at("id").get<std::string>();
      values = j.at("values").get<std::vector<float>>();
      dim = j.value("dim", values.size());
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kParseError, where + ": " + e.what());
    }
    if (dim != values.size()) {
      throw Error(ErrorCode::kDimMismatch, where + ": dim " + std::to_string(dim) + " but " +
                                               std::to_string(values.size()) + " values");
    }
    if (!items.empty() && items.front().second.dim() != dim) {
      throw Error(ErrorCode::kDimMismatch, where + ": dim " + std::to_string(dim) +
                                               " differs from earlier lines (" +
                                               std::to_string(items.front().second.dim()) + ")");
    }
    try {
      items.emplace_back(std::move(id), EmbeddingVector(std::move(values)));
    } catch (const Error& e) {
      throw Error(ErrorCode::kParseError, where + ": " + e.what());
    }
  }
  return items;
}

void write_embeddings(const std::filesystem::path& path, std::vector<EmbeddingItem> items) {
  std::sort(items.begin(), items.end(),
            [](const EmbeddingItem& a, const EmbeddingItem& b) { return a.first < b.first; });
  std::string out;
  for (const auto& [id, vec] : items) {
    Json j{{"id", id},
           {"dim", vec.dim()},
           {"values", std::vector<float>(vec.values().begin(), vec.values().end())}};
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

// ---- cache ----------------------------------------------------------------------

std::string_view to_string(CacheKind kind) {
  switch (kind) {
    case CacheKind::kCaption: return "caption";
    case CacheKind::kTargetCaption: return "target_caption";
    case CacheKind::kTextEmbedding: return "text_embedding";
    case CacheKind::kImageEmbedding: return "image_embedding";
  }
  return "caption";
}

namespace {

constexpr CacheKind kAllKinds[] = {CacheKind::kCaption, CacheKind::kTargetCaption,
                                   CacheKind::kTextEmbedding, CacheKind::kImageEmbedding};

bool holds_vector(CacheKind kind) {
  return kind == CacheKind::kTextEmbedding || kind == CacheKind::kImageEmbedding;
}

CacheKind parse_cache_kind(const std::string& text) {
  for (CacheKind k : kAllKinds) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::kParseError, "unknown cache kind '" + text + "'");
}

}  // namespace

std::string cache_key(CacheKind kind, std::string_view model_id, std::string_view input) {
  std::string bytes;
  bytes.reserve(to_string(kind).size() + model_id.size() + input.size() + 2);
  bytes += to_string(kind);
  bytes += '\x1f';
  bytes += model_id;
  bytes += '\x1f';
  bytes += input;
  return sha256_hex(bytes);
}

ModelCache::ModelCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  for (CacheKind kind : kAllKinds) load_file(kind);
}

void ModelCache::load_file(CacheKind kind) {
  const auto path = dir_ / (std::string(to_string(kind)) + ".jsonl");
  std::ifstream in(path);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      CacheEntry e;
      e.key = j.at("key").get<std::string>();
      e.kind = parse_cache_kind(j.at("kind").get<std::string>());
      e.model_id = j.at("model_id").get<std::string>();
      e.input_digest = j.at("input_digest").get<std::string>();
      e.created_at = parse_timestamp(j.at("created_at").get<std::string>());
      if (e.kind != kind || e.key.size() != 64 || e.input_digest.size() != 64) {
        throw Error(ErrorCode::kParseError, "inconsistent entry");
      }
      if (holds_vector(kind)) {
        e.value = j.at("value").get<std::vector<float>>();
      } else {
        e.value = j.at("value").get<std::string>();
      }
      auto key = e.key;
      entries_.insert_or_assign(std::move(key), std::move(e));
    } catch (const std::exception& ex) {
      ++skipped_lines_;
      std::cerr << "warning: skipping corrupt cache line " << path.string() << ":" << line_no
                << " (" << ex.what() << ")\n";
    }
  }
}

std::optional<CacheValue> ModelCache::get(CacheKind kind, std::string_view model_id,
                                          std::string_view input) const {
  const auto key = cache_key(kind, model_id, input);
  std::shared_lock lock(mutex_);
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second.value;
}

void ModelCache::put(CacheKind kind, std::string_view model_id, std::string_view input,
                     CacheValue value) {
  if (holds_vector(kind) != std::holds_alternative<std::vector<float>>(value)) {
    throw Error(ErrorCode::kInvalidArgument,
                "cache value type does not match kind " + std::string(to_string(kind)));
  }
  CacheEntry e;
  e.key = cache_key(kind, model_id, input);
  e.kind = kind;
  e.model_id = std::string(model_id);
  e.input_digest = sha256_hex(input);
  e.value = std::move(value);
  e.created_at = std::chrono::time_point_cast<std::chrono::milliseconds>(
      std::chrono::system_clock::now());

  Json j{{"key", e.key},
         {"kind", std::string(to_string(kind))},
         {"model_id", e.model_id},
         {"input_digest", e.input_digest},
         {"created_at", format_timestamp(e.created_at)}};
  std::visit([&](const auto& v) { j["value"] = v; }, e.value);

  std::unique_lock lock(mutex_);
  {
    std::ofstream out(dir_ / (std::string(to_string(kind)) + ".jsonl"), std::ios::app);
    if (!out) throw Error(ErrorCode::kIoError, "cannot append to cache in " + dir_.string());
    out << j.dump() << '\n';
  }
  auto key = e.key;
  entries_.insert_or_assign(std::move(key), std::move(e));
}

std::size_t ModelCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::string image_cache_input(const CanonicalDataset& dataset, const ImageRecord& image,
                              bool prefer_bytes) {
  if (prefer_bytes) {
    if (const auto path = local_image_path(dataset.root, image.uri)) {
      std::error_code ec;
      if (std::filesystem::is_regular_file(*path, ec)) return read_file(*path);
    }
  }
  return image.uri;
}

// ---- results --------------------------------------------------------------------

void write_results(const std::filesystem::path& path, const std::vector<PipelineTrace>& traces) {
  std::string out;
  for (const auto& t : traces) {
    out += Json(t).dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

ResultsReadOutcome read_results_partial(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open results file " + path.string());
  ResultsReadOutcome outcome;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      outcome.traces.push_back(Json::parse(line).get<PipelineTrace>());
    } catch (const std::exception& e) {
      outcome.error = Error(ErrorCode::kParseError, path.string() + ": line " +
                                                        std::to_string(line_no) + ": " + e.what());
      break;
    }
  }
  return outcome;
}

std::vector<PipelineTrace> read_results(const std::filesystem::path& path) {
  auto outcome = read_results_partial(path);
  if (outcome.error) throw *outcome.error;
  return std::move(outcome.traces);
}

}  // namespace cirevl
