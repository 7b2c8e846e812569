#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cirevl/clients.hpp"
#include "cirevl/prompt.hpp"
#include "cirevl/storage.hpp"
#include "cirevl/types.hpp"
#include "cirevl/vector_index.hpp"

namespace cirevl {

struct RunConfig {
  QueryMode mode = QueryMode::kCirevl;
  // When set, replaces every query's own task.
  std::optional<TaskKind> task;
  std::size_t k = 50;
  // Unset: dataset default, then the per-task default.
  std::optional<bool> exclude_reference;
  // Unset: the template registered for the query's task.
  std::optional<std::string> template_id;
  bool cache_enabled = true;
  std::size_t parallelism = 4;
  // Cache images by file bytes when local (else by uri string).
  bool image_cache_by_bytes = true;

  void validate() const;
};

/// true for cir and GeneCIS tasks, false for domain conversion.
bool default_exclude_reference(TaskKind task);

bool mode_needs_caption(QueryMode mode);

/// Wall-clock and stopwatch source; swapped for a fixed clock when runs must
/// be byte-reproducible.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
  virtual double monotonic_ms() const = 0;
};

std::shared_ptr<const Clock> system_clock();
/// Always returns the epoch and zero elapsed time.
std::shared_ptr<const Clock> fixed_clock();

struct RunSummary {
  std::size_t queries = 0;
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  std::size_t captioner_calls = 0;
  std::size_t reasoner_calls = 0;
  std::size_t embedder_calls = 0;

  nlohmann::json to_json() const;
};

struct DatasetRun {
  std::vector<PipelineTrace> traces;
  RunSummary summary;
};

using TraceSink = std::function<void(const PipelineTrace&)>;

/// caption -> reason -> retrieve over one gallery. Thread-safe; call counts
/// and cache statistics accumulate across calls.
class Pipeline {
 public:
  Pipeline(const CanonicalDataset& dataset, const GalleryIndex& index, ClientSet clients,
           ModelCache* cache = nullptr, TemplateSet templates = {},
           std::shared_ptr<const Clock> clock = system_clock());

  /// Query vector for `mode`: embed_image(Q), embed_text(t), the
  /// renormalized sum of both unit vectors, or embed_text(target_caption).
  /// Throws ModeInputMissing or DegenerateVector.
  EmbeddingVector query_embedding(QueryMode mode, const CompositionalQuery& query,
                                  const std::optional<std::string>& caption,
                                  const std::optional<std::string>& target_caption,
                                  bool use_cache = true) const;

  /// Runs all stages; throws the first failure tagged with its stage.
  /// `reuse_caption` stands in for the caption stage when no caption
  /// override is given (used for stage-minimal re-runs).
  PipelineTrace run_query(const CompositionalQuery& query, const RunConfig& config,
                          const Overrides& overrides = {},
                          const std::optional<CaptionRecord>& reuse_caption = std::nullopt) const;

  /// As run_query, but failures come back as a trace with `error` set.
  PipelineTrace run_query_soft(const CompositionalQuery& query, const RunConfig& config,
                               const Overrides& overrides = {},
                               const std::optional<CaptionRecord>& reuse_caption = std::nullopt) const;

  /// Fail-soft batch run, up to config.parallelism queries at once; traces
  /// are emitted to `sink` and returned in input order. Config-level
  /// problems throw before any query runs.
  DatasetRun run_dataset(const std::vector<CompositionalQuery>& queries, const RunConfig& config,
                         const TraceSink& sink = {}) const;

  /// Throws InvalidArgument / ModeInputMissing / DimMismatch when `config`
  /// cannot run against this gallery and these clients.
  void check_config(const RunConfig& config, const std::vector<CompositionalQuery>& queries) const;

  const CallCounters& counters() const { return counters_; }
  RunSummary totals() const;
  const CanonicalDataset& dataset() const { return dataset_; }
  const GalleryIndex& index() const { return index_; }
  const ClientSet& clients() const { return clients_; }

 private:
  void run_stages(const CompositionalQuery& query, const RunConfig& config,
                  const Overrides& overrides, const std::optional<CaptionRecord>& reuse_caption,
                  PipelineTrace& trace) const;
  std::string caption_for(const ImageRecord& image, const RunConfig& config) const;
  std::string reasoner_reply(const std::string& prompt, bool use_cache) const;
  EmbeddingVector embed_text_cached(const std::string& text, bool use_cache) const;
  EmbeddingVector embed_image_cached(const ImageRecord& image, bool use_cache,
                                     bool by_bytes = true) const;
  const ImageRecord& image(const std::string& id) const;

  const CanonicalDataset& dataset_;
  const GalleryIndex& index_;
  ClientSet clients_;
  ModelCache* cache_;
  TemplateSet templates_;
  std::shared_ptr<const Clock> clock_;

  mutable CallCounters counters_;
  mutable std::atomic<std::size_t> cache_hits_{0};
  mutable std::atomic<std::size_t> cache_misses_{0};
};

/// Embeds every gallery image (cache-aware) and returns (id, vector) pairs in
/// dataset order; increments `counters.embedder` per uncached image.
std::vector<EmbeddingItem> embed_gallery(const CanonicalDataset& dataset, const Embedder& embedder,
                                         ModelCache* cache, CallCounters& counters,
                                         bool by_bytes = true);

}  // namespace cirevl
