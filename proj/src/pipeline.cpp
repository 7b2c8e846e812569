#include "cirevl/pipeline.hpp"

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <set>
#include <thread>

namespace cirevl {

void RunConfig::validate() const {
  if (k < 1) throw Error(ErrorCode::kInvalidK, "k must be >= 1");
  if (parallelism < 1) throw Error(ErrorCode::kInvalidArgument, "parallelism must be >= 1");
}

bool default_exclude_reference(TaskKind task) { return task != TaskKind::kDomainConversion; }

bool mode_needs_caption(QueryMode mode) {
  return mode == QueryMode::kCirevl || mode == QueryMode::kCaptionTemplate;
}

namespace {

class SystemClock final : public Clock {
 public:
  Timestamp now() const override {
    return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
  }
  double monotonic_ms() const override {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }
};

class FixedClock final : public Clock {
 public:
  Timestamp now() const override { return Timestamp{}; }
  double monotonic_ms() const override { return 0.0; }
};

}  // namespace

std::shared_ptr<const Clock> system_clock() {
  static const auto clock = std::make_shared<const SystemClock>();
  return clock;
}

std::shared_ptr<const Clock> fixed_clock() {
  static const auto clock = std::make_shared<const FixedClock>();
  return clock;
}

nlohmann::json RunSummary::to_json() const {
  return {{"queries", queries},
          {"ok", ok},
          {"failed", failed},
          {"cache_hits", cache_hits},
          {"cache_misses", cache_misses},
          {"client_calls",
           {{"captioner", captioner_calls}, {"reasoner", reasoner_calls}, {"embedder", embedder_calls}}}};
}

Pipeline::Pipeline(const CanonicalDataset& dataset, const GalleryIndex& index, ClientSet clients,
                   ModelCache* cache, TemplateSet templates, std::shared_ptr<const Clock> clock)
    : dataset_(dataset),
      index_(index),
      clients_(std::move(clients)),
      cache_(cache),
      templates_(std::move(templates)),
      clock_(std::move(clock)) {}

RunSummary Pipeline::totals() const {
  RunSummary s;
  s.cache_hits = cache_hits_;
  s.cache_misses = cache_misses_;
  s.captioner_calls = counters_.captioner;
  s.reasoner_calls = counters_.reasoner;
  s.embedder_calls = counters_.embedder;
  return s;
}

const ImageRecord& Pipeline::image(const std::string& id) const {
  const ImageRecord* img = dataset_.find_image(id);
  if (!img) throw Error(ErrorCode::kUnknownId, "image '" + id + "' is not in the dataset");
  return *img;
}

std::string Pipeline::caption_for(const ImageRecord& img, const RunConfig& config) const {
  if (!clients_.captioner) {
    throw Error(ErrorCode::kClientUnavailable, "no captioner configured", Stage::kCaption);
  }
  const auto& model = clients_.captioner->model_id();
  const bool use_cache = cache_ && config.cache_enabled;
  std::string input;
  if (use_cache) {
    input = image_cache_input(dataset_, img, config.image_cache_by_bytes);
    if (auto hit = cache_->get(CacheKind::kCaption, model, input)) {
      ++cache_hits_;
      return std::get<std::string>(*hit);
    }
    ++cache_misses_;
  }
  ++counters_.captioner;
  std::string caption = single_line(clients_.captioner->caption_image(img));
  if (caption.empty()) throw Error(ErrorCode::kEmptyModelOutput, "captioner returned nothing");
  if (use_cache) cache_->put(CacheKind::kCaption, model, input, caption);
  return caption;
}

std::string Pipeline::reasoner_reply(const std::string& prompt, bool use_cache) const {
  if (!clients_.reasoner) {
    throw Error(ErrorCode::kClientUnavailable, "no reasoner configured", Stage::kReason);
  }
  const auto& model = clients_.reasoner->model_id();
  use_cache = use_cache && cache_;
  if (use_cache) {
    if (auto hit = cache_->get(CacheKind::kTargetCaption, model, prompt)) {
      ++cache_hits_;
      return std::get<std::string>(*hit);
    }
    ++cache_misses_;
  }
  ++counters_.reasoner;
  std::string reply = clients_.reasoner->complete(prompt);
  if (use_cache) cache_->put(CacheKind::kTargetCaption, model, prompt, reply);
  return reply;
}

EmbeddingVector Pipeline::embed_text_cached(const std::string& text, bool use_cache) const {
  if (!clients_.embedder) {
    throw Error(ErrorCode::kClientUnavailable, "no embedder configured", Stage::kRetrieve);
  }
  const auto& model = clients_.embedder->model_id();
  use_cache = use_cache && cache_;
  if (use_cache) {
    if (auto hit = cache_->get(CacheKind::kTextEmbedding, model, text)) {
      ++cache_hits_;
      return EmbeddingVector(std::get<std::vector<float>>(*hit));
    }
    ++cache_misses_;
  }
  ++counters_.embedder;
  EmbeddingVector v = clients_.embedder->embed_text(text);
  if (use_cache) {
    cache_->put(CacheKind::kTextEmbedding, model, text,
                std::vector<float>(v.values().begin(), v.values().end()));
  }
  return v;
}

EmbeddingVector Pipeline::embed_image_cached(const ImageRecord& img, bool use_cache,
                                             bool by_bytes) const {
  if (!clients_.embedder) {
    throw Error(ErrorCode::kClientUnavailable, "no embedder configured", Stage::kRetrieve);
  }
  const auto& model = clients_.embedder->model_id();
  use_cache = use_cache && cache_;
  std::string input;
  if (use_cache) {
    input = image_cache_input(dataset_, img, by_bytes);
    if (auto hit = cache_->get(CacheKind::kImageEmbedding, model, input)) {
      ++cache_hits_;
      return EmbeddingVector(std::get<std::vector<float>>(*hit));
    }
    ++cache_misses_;
  }
  ++counters_.embedder;
  EmbeddingVector v = clients_.embedder->embed_image(img);
  if (use_cache) {
    cache_->put(CacheKind::kImageEmbedding, model, input,
                std::vector<float>(v.values().begin(), v.values().end()));
  }
  return v;
}

EmbeddingVector Pipeline::query_embedding(QueryMode mode, const CompositionalQuery& query,
                                          const std::optional<std::string>& caption,
                                          const std::optional<std::string>& target_caption,
                                          bool use_cache) const {
  (void)caption;
  switch (mode) {
    case QueryMode::kImageOnly:
      return embed_image_cached(image(query.reference_image_id), use_cache);
    case QueryMode::kTextOnly:
      if (query.instruction.empty()) {
        throw Error(ErrorCode::kModeInputMissing, "text-only mode needs an instruction");
      }
      return embed_text_cached(query.instruction, use_cache);
    case QueryMode::kImagePlusText: {
      if (query.instruction.empty()) {
        throw Error(ErrorCode::kModeInputMissing, "image-plus-text mode needs an instruction");
      }
      const EmbeddingVector img = normalize(embed_image_cached(image(query.reference_image_id), use_cache));
      const EmbeddingVector txt = normalize(embed_text_cached(query.instruction, use_cache));
      if (img.dim() != txt.dim()) {
        throw Error(ErrorCode::kDimMismatch, "image and text embeddings differ in dimension");
      }
      std::vector<float> sum(img.dim());
      double norm2 = 0.0;
      for (std::size_t i = 0; i < img.dim(); ++i) {
        const double s = static_cast<double>(img[i]) + txt[i];
        sum[i] = static_cast<float>(s);
        norm2 += s * s;
      }
      if (norm2 < 1e-18) {
        throw Error(ErrorCode::kDegenerateVector, "image and text embeddings cancel out");
      }
      return normalize(EmbeddingVector(std::move(sum)));
    }
    case QueryMode::kCirevl:
    case QueryMode::kCaptionTemplate:
      if (!target_caption || target_caption->empty()) {
        throw Error(ErrorCode::kModeInputMissing,
                    std::string(to_string(mode)) + " mode needs a target caption");
      }
      return embed_text_cached(*target_caption, use_cache);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown mode");
}

void Pipeline::run_stages(const CompositionalQuery& query, const RunConfig& config,
                          const Overrides& overrides,
                          const std::optional<CaptionRecord>& reuse_caption,
                          PipelineTrace& trace) const {
  const bool use_cache = config.cache_enabled;
  CompositionalQuery effective = query;
  if (config.task) effective.task = *config.task;
  if (overrides.instruction) effective.instruction = single_line(*overrides.instruction);
  effective.instruction = single_line(effective.instruction);

  trace.query_id = query.id;
  trace.mode = config.mode;
  trace.task = effective.task;
  trace.reference_image_id = query.reference_image_id;
  trace.instruction = effective.instruction;
  trace.positives = query.positives;
  trace.overrides = overrides;
  trace.ranking.query_id = query.id;
  trace.ranking.mode = config.mode;

  const bool needs_text_stages = mode_needs_caption(config.mode);
  const bool target_overridden = overrides.target_caption.has_value();

  // Stage 1: caption.
  double t0 = clock_->monotonic_ms();
  try {
    if (needs_text_stages) {
      if (overrides.caption) {
        const std::string text = single_line(*overrides.caption);
        if (text.empty()) throw Error(ErrorCode::kInvalidArgument, "caption override is empty");
        trace.caption = CaptionRecord{query.reference_image_id, text, Provenance::user_override(),
                                      clock_->now()};
      } else if (reuse_caption) {
        trace.caption = *reuse_caption;
      } else if (!target_overridden) {
        const ImageRecord& ref = image(query.reference_image_id);
        trace.caption = CaptionRecord{ref.id, caption_for(ref, config),
                                      Provenance::model(clients_.captioner->model_id()),
                                      clock_->now()};
      }
    }
  } catch (const Error& e) {
    throw e.with_stage(Stage::kCaption);
  }
  trace.timings["caption"] = clock_->monotonic_ms() - t0;

  // Stage 2: target caption.
  t0 = clock_->monotonic_ms();
  try {
    if (needs_text_stages) {
      if (target_overridden) {
        const std::string text = single_line(*overrides.target_caption);
        if (text.empty()) throw Error(ErrorCode::kInvalidArgument, "target caption override is empty");
        trace.target_caption = TargetCaption{query.id, text, Provenance::user_override()};
      } else if (effective.task == TaskKind::kDomainConversion) {
        if (!effective.domain_word) {
          throw Error(ErrorCode::kModeInputMissing, "domain-conversion query has no domain word");
        }
        trace.target_caption =
            TargetCaption{query.id,
                          template_target(TemplateKind::kDomainConversion, trace.caption->text,
                                          *effective.domain_word),
                          Provenance::templated("domain-conversion")};
      } else if (config.mode == QueryMode::kCaptionTemplate) {
        trace.target_caption = TargetCaption{
            query.id,
            template_target(TemplateKind::kCaptionTemplate, trace.caption->text, effective.instruction),
            Provenance::templated("caption-template")};
      } else {
        const PromptTemplate& tmpl = config.template_id ? templates_.get(*config.template_id)
                                                        : templates_.for_task(effective.task);
        const std::string prompt =
            build_reasoner_request(tmpl, trace.caption->text, effective.instruction);
        std::string reply = reasoner_reply(prompt, use_cache);
        trace.reasoner_raw_reply = reply;
        const ParsedReply parsed = parse_edited_description(reply, tmpl);
        trace.marker_missing = parsed.marker_missing;
        trace.target_caption =
            TargetCaption{query.id, parsed.text, Provenance::llm(clients_.reasoner->model_id())};
      }
    }
  } catch (const Error& e) {
    throw e.with_stage(Stage::kReason);
  }
  trace.timings["reason"] = clock_->monotonic_ms() - t0;

  // Stage 3: retrieval.
  t0 = clock_->monotonic_ms();
  try {
    std::optional<std::string> caption_text;
    std::optional<std::string> target_text;
    if (trace.caption) caption_text = trace.caption->text;
    if (trace.target_caption) target_text = trace.target_caption->text;
    const EmbeddingVector q =
        query_embedding(config.mode, effective, caption_text, target_text, use_cache);

    const bool exclude = config.exclude_reference.value_or(
        dataset_.default_exclude_reference.value_or(default_exclude_reference(effective.task)));
    std::set<std::string> excluded;
    if (exclude) excluded.insert(query.reference_image_id);
    trace.ranking.ranking = index_.top_k(q, config.k, excluded);
    trace.ranking.excluded_ids.assign(excluded.begin(), excluded.end());
    if (query.subset_ids) {
      RankedResult subset;
      subset.query_id = query.id;
      subset.mode = config.mode;
      subset.ranking = index_.rank_subset(q, *query.subset_ids);
      trace.subset_ranking = std::move(subset);
    }
  } catch (const Error& e) {
    throw e.with_stage(Stage::kRetrieve);
  }
  trace.timings["retrieve"] = clock_->monotonic_ms() - t0;
}

PipelineTrace Pipeline::run_query(const CompositionalQuery& query, const RunConfig& config,
                                  const Overrides& overrides,
                                  const std::optional<CaptionRecord>& reuse_caption) const {
  config.validate();
  PipelineTrace trace;
  run_stages(query, config, overrides, reuse_caption, trace);
  return trace;
}

PipelineTrace Pipeline::run_query_soft(const CompositionalQuery& query, const RunConfig& config,
                                       const Overrides& overrides,
                                       const std::optional<CaptionRecord>& reuse_caption) const {
  PipelineTrace trace;
  try {
    config.validate();
    run_stages(query, config, overrides, reuse_caption, trace);
  } catch (const Error& e) {
    trace.error = TraceError{e.stage().value_or(Stage::kCaption), e.code(), e.what()};
  } catch (const std::exception& e) {
    trace.error = TraceError{Stage::kCaption, ErrorCode::kInvalidArgument, e.what()};
  }
  if (trace.error) {
    // Partial rankings are not meaningful for metrics.
    trace.query_id = query.id;
    trace.ranking.query_id = query.id;
    trace.ranking.ranking.clear();
    trace.subset_ranking.reset();
  }
  return trace;
}

void Pipeline::check_config(const RunConfig& config,
                            const std::vector<CompositionalQuery>& queries) const {
  config.validate();
  if (!clients_.embedder) {
    throw Error(ErrorCode::kModeInputMissing, "an embedder client is required for retrieval");
  }
  if (clients_.embedder->dim() != 0 && clients_.embedder->dim() != index_.dim()) {
    throw Error(ErrorCode::kDimMismatch, "embedder dim " + std::to_string(clients_.embedder->dim()) +
                                             " does not match gallery dim " +
                                             std::to_string(index_.dim()));
  }
  if (config.template_id && !templates_.contains(*config.template_id)) {
    throw Error(ErrorCode::kInvalidArgument, "unknown template id '" + *config.template_id + "'");
  }
  if (mode_needs_caption(config.mode) && !clients_.captioner) {
    throw Error(ErrorCode::kModeInputMissing,
                std::string(to_string(config.mode)) + " mode requires a captioner client");
  }
  bool needs_reasoner = false;
  std::vector<std::string> missing_domain;
  for (const auto& q : queries) {
    const TaskKind task = config.task.value_or(q.task);
    if (task == TaskKind::kDomainConversion) {
      if (!q.domain_word || q.domain_word->empty()) missing_domain.push_back(q.id);
    } else if (config.mode == QueryMode::kCirevl) {
      needs_reasoner = true;
    }
  }
  if (!missing_domain.empty()) {
    std::string msg = "domain-conversion requires a domain_word; missing for:";
    for (const auto& id : missing_domain) msg += " " + id;
    throw Error(ErrorCode::kModeInputMissing, msg);
  }
  if (needs_reasoner && !clients_.reasoner) {
    throw Error(ErrorCode::kModeInputMissing, "cirevl mode requires a reasoner client");
  }
}

DatasetRun Pipeline::run_dataset(const std::vector<CompositionalQuery>& queries,
                                 const RunConfig& config, const TraceSink& sink) const {
  check_config(config, queries);
  const RunSummary before = totals();

  const std::size_t n = queries.size();
  std::vector<std::optional<PipelineTrace>> slots(n);
  std::mutex mutex;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    for (std::size_t i = next++; i < n; i = next++) {
      PipelineTrace trace = run_query_soft(queries[i], config);
      {
        std::lock_guard lock(mutex);
        slots[i] = std::move(trace);
      }
      ready.notify_all();
    }
  };

  const std::size_t width = std::min(config.parallelism, n);
  std::vector<std::thread> threads;
  threads.reserve(width);
  for (std::size_t w = 0; w < width; ++w) threads.emplace_back(worker);

  DatasetRun run;
  run.traces.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::unique_lock lock(mutex);
    ready.wait(lock, [&] { return slots[i].has_value(); });
    PipelineTrace trace = std::move(*slots[i]);
    slots[i].reset();
    lock.unlock();
    if (sink) sink(trace);
    run.traces.push_back(std::move(trace));
  }
  for (auto& t : threads) t.join();

  const RunSummary after = totals();
  run.summary.queries = n;
  for (const auto& t : run.traces) (t.ok() ? run.summary.ok : run.summary.failed)++;
  run.summary.cache_hits = after.cache_hits - before.cache_hits;
  run.summary.cache_misses = after.cache_misses - before.cache_misses;
  run.summary.captioner_calls = after.captioner_calls - before.captioner_calls;
  run.summary.reasoner_calls = after.reasoner_calls - before.reasoner_calls;
  run.summary.embedder_calls = after.embedder_calls - before.embedder_calls;
  return run;
}

std::vector<EmbeddingItem> embed_gallery(const CanonicalDataset& dataset, const Embedder& embedder,
                                         ModelCache* cache, CallCounters& counters, bool by_bytes) {
  std::vector<EmbeddingItem> items;
  items.reserve(dataset.images.size());
  for (const auto& img : dataset.images) {
    std::string input;
    if (cache) {
      input = image_cache_input(dataset, img, by_bytes);
      if (auto hit = cache->get(CacheKind::kImageEmbedding, embedder.model_id(), input)) {
        items.emplace_back(img.id, EmbeddingVector(std::get<std::vector<float>>(*hit)));
        continue;
      }
    }
    ++counters.embedder;
    EmbeddingVector v = embedder.embed_image(img);
    if (cache) {
      cache->put(CacheKind::kImageEmbedding, embedder.model_id(), input,
                 std::vector<float>(v.values().begin(), v.values().end()));
    }
    items.emplace_back(img.id, std::move(v));
  }
  return items;
}

}  // namespace cirevl
