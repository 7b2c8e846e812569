#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"

#include "cirevl/types.hpp"

namespace cirevl {

// ---- datasets ---------------------------------------------------------------

/// Referential-integrity failure; `ids()` lists every offending id.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& message, std::vector<std::string> ids);
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

struct CanonicalDataset {
  std::string name;
  std::vector<ImageRecord> images;
  std::vector<CompositionalQuery> queries;
  // Unset means "use the per-task default".
  std::optional<bool> default_exclude_reference;
  // Directory that relative image uris resolve against.
  std::filesystem::path root;

  const ImageRecord* find_image(const std::string& id) const;
  /// Rebuilds the id lookup table; call after editing `images`.
  void reindex();

 private:
  std::unordered_map<std::string, std::size_t> by_id_;
};

/// Declarative mapping from a third-party annotation file onto the canonical
/// dataset. Paths are dot-separated field paths; see README for the format.
struct AdapterMapping {
  std::string name;
  std::optional<bool> default_exclude_reference;

  std::string images_path;  // array of objects, or object id -> uri
  std::string image_id_field = "id";
  std::string image_uri_field = "uri";
  std::string image_uri_template;  // e.g. "images/{id}.png"; overrides uri field

  std::string queries_path;
  std::string query_id_field;  // empty: use the record index
  std::string reference_field;
  std::string instruction_field;
  std::string positives_field;  // string or array
  std::string subset_field;
  std::string domain_word_field;
  std::string task_field;
  std::optional<TaskKind> task;  // fixed task when task_field is empty

  static AdapterMapping from_json(const nlohmann::json& j);
  static AdapterMapping load(const std::filesystem::path& path);
};

/// Loads a canonical dataset file or, when `mapping` is given, a source file
/// through the adapter. Throws ParseError (with line/column) or
/// IntegrityError listing every unresolved id.
CanonicalDataset load_dataset(const std::filesystem::path& path,
                              const std::optional<AdapterMapping>& mapping = std::nullopt);

/// Referential checks for one dataset; throws IntegrityError.
void validate_dataset(const CanonicalDataset& dataset);

void write_dataset(const std::filesystem::path& path, const CanonicalDataset& dataset);

// ---- embeddings --------------------------------------------------------------

using EmbeddingItem = std::pair<std::string, EmbeddingVector>;

/// One {"id", "dim", "values"} object per line. Throws DimMismatch or
/// ParseError naming the line.
std::vector<EmbeddingItem> read_embeddings(const std::filesystem::path& path);
/// Sorted by id; values written at 32-bit precision. Atomic.
void write_embeddings(const std::filesystem::path& path, std::vector<EmbeddingItem> items);

// ---- model-output cache -------------------------------------------------------

enum class CacheKind { kCaption, kTargetCaption, kTextEmbedding, kImageEmbedding };

std::string_view to_string(CacheKind kind);

using CacheValue = std::variant<std::string, std::vector<float>>;

struct CacheEntry {
  std::string key;
  CacheKind kind = CacheKind::kCaption;
  std::string model_id;
  std::string input_digest;
  CacheValue value;
  Timestamp created_at{};
};

/// SHA-256 hex of kind || 0x1F || model_id || 0x1F || input.
std::string cache_key(CacheKind kind, std::string_view model_id, std::string_view input);

/// Content-addressed store for model outputs: one append-only JSONL file per
/// kind under `dir`, indexed in memory. Last write wins. Corrupt lines are
/// skipped with a warning. Readers run concurrently; appends are serialized.
class ModelCache {
 public:
  explicit ModelCache(std::filesystem::path dir);

  std::optional<CacheValue> get(CacheKind kind, std::string_view model_id,
                                std::string_view input) const;
  void put(CacheKind kind, std::string_view model_id, std::string_view input, CacheValue value);

  std::size_t size() const;
  std::size_t skipped_lines() const { return skipped_lines_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  void load_file(CacheKind kind);

  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, CacheEntry> entries_;
  std::size_t skipped_lines_ = 0;
};

/// Stable cache input for an image: file bytes when the uri is a readable
/// local file (and `prefer_bytes`), else the uri string.
std::string image_cache_input(const CanonicalDataset& dataset, const ImageRecord& image,
                              bool prefer_bytes = true);

// ---- results -------------------------------------------------------------------

/// One trace per line in the given order. Atomic.
void write_results(const std::filesystem::path& path, const std::vector<PipelineTrace>& traces);

struct ResultsReadOutcome {
  std::vector<PipelineTrace> traces;
  // Set when a line failed to parse; traces holds every line before it.
  std::optional<Error> error;
};

/// Reads traces, stopping at the first malformed line (reported with its
/// line number) and keeping everything before it.
ResultsReadOutcome read_results_partial(const std::filesystem::path& path);
/// As above but throws the ParseError.
std::vector<PipelineTrace> read_results(const std::filesystem::path& path);

// ---- files ---------------------------------------------------------------------

/// Writes `contents` to a sibling temp file then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace cirevl
