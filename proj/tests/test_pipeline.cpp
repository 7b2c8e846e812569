#include "doctest.h"

#include "cirevl/serialization.hpp"
#include "support.hpp"

using namespace cirevl;

namespace {

std::vector<std::string> ids_of(const RankedResult& r) {
  std::vector<std::string> out;
  for (const auto& s : r.ranking) out.push_back(s.image_id);
  return out;
}

double score_of(const RankedResult& r, const std::string& id) {
  for (const auto& s : r.ranking) {
    if (s.image_id == id) return s.score;
  }
  FAIL("id not ranked: " << id);
  return 0.0;
}

CanonicalDataset three_query_dataset() {
  auto ds = testing::dog_dataset();
  CompositionalQuery q2;
  q2.id = "q2";
  q2.reference_image_id = "img3";
  q2.instruction = "make it a dog";
  q2.positives = {"img1"};
  CompositionalQuery q3;
  q3.id = "q3";
  q3.reference_image_id = "img2";
  q3.instruction = "remove the night";
  q3.positives = {"img1"};
  ds.queries.push_back(q2);
  ds.queries.push_back(q3);
  return ds;
}

// Captioner that fails for one image id.
class FlakyCaptioner final : public Captioner {
 public:
  FlakyCaptioner(std::shared_ptr<const Captioner> inner, std::string bad) : inner_(std::move(inner)), bad_(std::move(bad)) {}
  std::string caption_image(const ImageRecord& image) const override {
    if (image.id == bad_) throw Error(ErrorCode::kClientUnavailable, "captioner down");
    return inner_->caption_image(image);
  }
  const std::string& model_id() const override { return inner_->model_id(); }

 private:
  std::shared_ptr<const Captioner> inner_;
  std::string bad_;
};

class EmptyReasoner final : public Reasoner {
 public:
  std::string complete(const std::string&) const override { return "Edited Description:   "; }
  const std::string& model_id() const override { return id_; }

 private:
  std::string id_ = "empty";
};

struct Fixture {
  std::shared_ptr<MockFixture> mock = testing::dog_fixture();
  CanonicalDataset dataset = testing::dog_dataset();
  ClientSet clients = make_mock_clients(mock);
  GalleryIndex index = testing::index_for(dataset, *clients.embedder);
};

}  // namespace

TEST_CASE("query embeddings per mode") {
  Fixture f;
  const Pipeline p(f.dataset, f.index, f.clients);
  const auto& q = f.dataset.queries[0];
  CHECK(p.query_embedding(QueryMode::kImageOnly, q, std::nullopt, std::nullopt) ==
        EmbeddingVector(hash_embed("a dog on grass", 64)));
  CHECK(p.query_embedding(QueryMode::kTextOnly, q, std::nullopt, std::nullopt) ==
        EmbeddingVector(hash_embed("make it night-time", 64)));
  CHECK(p.query_embedding(QueryMode::kCirevl, q, "c", std::string("a dog on grass at night")) ==
        EmbeddingVector(hash_embed("a dog on grass at night", 64)));

  const auto sum = p.query_embedding(QueryMode::kImagePlusText, q, std::nullopt, std::nullopt);
  const auto a = normalize(EmbeddingVector(hash_embed("a dog on grass", 64)));
  const auto b = normalize(EmbeddingVector(hash_embed("make it night-time", 64)));
  std::vector<double> expect(64);
  double n2 = 0;
  for (int i = 0; i < 64; ++i) {
    expect[i] = double(a[i]) + b[i];
    n2 += expect[i] * expect[i];
  }
  CHECK(std::abs(sum.norm() - 1.0) < 1e-6);
  for (int i = 0; i < 64; ++i) CHECK(sum[i] == doctest::Approx(expect[i] / std::sqrt(n2)).epsilon(1e-6));

  try {
    p.query_embedding(QueryMode::kCirevl, q, std::nullopt, std::nullopt);
    FAIL("expected ModeInputMissing");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kModeInputMissing);
  }
}

TEST_CASE("mock end to end puts img2 first") {
  Fixture f;
  const Pipeline p(f.dataset, f.index, f.clients);
  const auto trace = p.run_query(f.dataset.queries[0], RunConfig{});
  CHECK(trace.ok());
  REQUIRE(trace.caption);
  CHECK(trace.caption->text == "a dog on grass");
  CHECK(trace.caption->source == Provenance::model("mock-captioner"));
  REQUIRE(trace.target_caption);
  CHECK(trace.target_caption->text == "a dog on grass at night");
  CHECK(trace.target_caption->source == Provenance::llm("mock-reasoner"));
  CHECK(trace.reasoner_raw_reply == "Edited Description: a dog on grass at night");
  CHECK_FALSE(trace.marker_missing);
  CHECK(ids_of(trace.ranking) == std::vector<std::string>{"img2", "img3"});
  CHECK(trace.ranking.excluded_ids == std::vector<std::string>{"img1"});
  CHECK(score_of(trace.ranking, "img2") == doctest::Approx(1.0));
  CHECK(score_of(trace.ranking, "img3") == doctest::Approx(0.0));
  CHECK(trace.timings.count("caption") == 1);
  CHECK(trace.timings.count("reason") == 1);
  CHECK(trace.timings.count("retrieve") == 1);
  CHECK(p.counters().captioner == 1);
  CHECK(p.counters().reasoner == 1);
  CHECK(p.counters().embedder == 1);

  RunConfig keep;
  keep.exclude_reference = false;
  const auto with_ref = p.run_query(f.dataset.queries[0], keep);
  CHECK(ids_of(with_ref.ranking) == std::vector<std::string>{"img2", "img1", "img3"});
  CHECK(score_of(with_ref.ranking, "img1") == doctest::Approx(0.8164965809).epsilon(1e-7));
}

TEST_CASE("caption override re-runs the reasoner through the fallback") {
  Fixture f;
  const Pipeline p(f.dataset, f.index, f.clients);
  const auto before = p.run_query(f.dataset.queries[0], RunConfig{});
  Overrides o;
  o.caption = "a cat indoors";
  const auto after = p.run_query(f.dataset.queries[0], RunConfig{}, o);
  CHECK(after.caption->source == Provenance::user_override());
  CHECK(after.target_caption->text == "a cat indoors, make it night-time");
  CHECK(p.counters().captioner == 1);
  CHECK(p.counters().reasoner == 2);
  // Scores frozen from an independent token-overlap oracle (FNV-1a, 64 buckets).
  CHECK(score_of(after.ranking, "img3") == doctest::Approx(0.2182178902).epsilon(1e-7));
  CHECK(score_of(after.ranking, "img2") == doctest::Approx(0.4629100499).epsilon(1e-7));
  CHECK(score_of(after.ranking, "img3") > score_of(before.ranking, "img3"));
  // "it" and "on" share a bucket, so img2 keeps rank 1 under this fixture.
  CHECK(after.ranking.ranking[0].image_id == "img2");

  o.caption = "two cats indoors";
  const auto cats = p.run_query(f.dataset.queries[0], RunConfig{}, o);
  CHECK(cats.ranking.ranking[0].image_id == "img3");
}

TEST_CASE("target override skips captioner and reasoner") {
  Fixture f;
  const Pipeline p(f.dataset, f.index, f.clients);
  Overrides o;
  o.target_caption = "two cats indoors";
  o.caption = "ignored";
  const auto trace = p.run_query(f.dataset.queries[0], RunConfig{}, o);
  CHECK(p.counters().captioner == 0);
  CHECK(p.counters().reasoner == 0);
  CHECK(trace.target_caption->source == Provenance::user_override());
  CHECK(trace.ranking.ranking[0].image_id == "img3");

  Overrides only_target;
  only_target.target_caption = "X";
  const auto t2 = p.run_query(f.dataset.queries[0], RunConfig{}, only_target);
  CHECK_FALSE(t2.caption);
  CHECK(p.counters().captioner == 0);
  CHECK(p.counters().reasoner == 0);
}

TEST_CASE("reused caption avoids the captioner") {
  Fixture f;
  const Pipeline p(f.dataset, f.index, f.clients);
  const auto first = p.run_query(f.dataset.queries[0], RunConfig{});
  Overrides o;
  o.instruction = "make it snowy";
  const auto second = p.run_query(f.dataset.queries[0], RunConfig{}, o, first.caption);
  CHECK(p.counters().captioner == 1);
  CHECK(p.counters().reasoner == 2);
  CHECK(second.caption == first.caption);
  CHECK(second.instruction == "make it snowy");
  CHECK(second.target_caption->text == "a dog on grass, make it snowy");
}

TEST_CASE("baseline modes") {
  Fixture f;
  const Pipeline p(f.dataset, f.index, f.clients);
  for (auto mode : {QueryMode::kImageOnly, QueryMode::kTextOnly, QueryMode::kImagePlusText}) {
    RunConfig c;
    c.mode = mode;
    const auto t = p.run_query(f.dataset.queries[0], c);
    CHECK_FALSE(t.caption);
    CHECK_FALSE(t.target_caption);
    CHECK_FALSE(t.reasoner_raw_reply);
    CHECK(t.ranking.mode == mode);
  }
  CHECK(p.counters().captioner == 0);
  CHECK(p.counters().reasoner == 0);

  RunConfig image_only;
  image_only.mode = QueryMode::kImageOnly;
  CHECK(ids_of(p.run_query(f.dataset.queries[0], image_only).ranking) ==
        std::vector<std::string>{"img2", "img3"});

  RunConfig tmpl;
  tmpl.mode = QueryMode::kCaptionTemplate;
  const auto t = p.run_query(f.dataset.queries[0], tmpl);
  CHECK(t.target_caption->text == "a photo of a dog on grass that make it night-time");
  CHECK(t.target_caption->source == Provenance::templated("caption-template"));
  CHECK(p.counters().reasoner == 0);
  CHECK(p.counters().captioner == 1);
}

TEST_CASE("domain conversion uses the template and keeps the reference") {
  Fixture f;
  auto& q = f.dataset.queries[0];
  q.task = TaskKind::kDomainConversion;
  q.domain_word = "cartoon";
  const Pipeline p(f.dataset, f.index, f.clients);
  const auto t = p.run_query(q, RunConfig{});
  CHECK(t.target_caption->text == "a cartoon of a a dog on grass");
  CHECK(t.target_caption->source == Provenance::templated("domain-conversion"));
  CHECK(t.ranking.excluded_ids.empty());
  CHECK(t.ranking.ranking.size() == 3);
  CHECK(p.counters().reasoner == 0);
}

TEST_CASE("exclude-reference precedence") {
  Fixture f;
  auto run = [&](std::optional<bool> config, std::optional<bool> dataset) {
    f.dataset.default_exclude_reference = dataset;
    const Pipeline p(f.dataset, f.index, f.clients);
    RunConfig c;
    c.exclude_reference = config;
    return !p.run_query(f.dataset.queries[0], c).ranking.excluded_ids.empty();
  };
  CHECK(run(std::nullopt, std::nullopt) == true);
  CHECK(run(std::nullopt, false) == false);
  CHECK(run(true, false) == true);
  CHECK(run(false, true) == false);
}

TEST_CASE("subset ranking is attached") {
  Fixture f;
  f.dataset.queries[0].subset_ids = std::vector<std::string>{"img3", "img2"};
  const Pipeline p(f.dataset, f.index, f.clients);
  const auto t = p.run_query(f.dataset.queries[0], RunConfig{});
  REQUIRE(t.subset_ranking);
  CHECK(ids_of(*t.subset_ranking) == std::vector<std::string>{"img2", "img3"});
  CHECK(ids_of(t.ranking) == std::vector<std::string>{"img2", "img3"});
}

TEST_CASE("marker-less replies are flagged") {
  Fixture f;
  f.mock->replies.begin()->second = "a dog on grass at night";
  const Pipeline p(f.dataset, f.index, f.clients);
  const auto t = p.run_query(f.dataset.queries[0], RunConfig{});
  CHECK(t.marker_missing);
  CHECK(t.target_caption->text == "a dog on grass at night");
}

TEST_CASE("errors carry their stage") {
  Fixture f;
  auto stage_of = [&](const ClientSet& clients) {
    const Pipeline p(f.dataset, f.index, clients);
    try {
      p.run_query(f.dataset.queries[0], RunConfig{});
    } catch (const Error& e) {
      return e.stage();
    }
    return std::optional<Stage>{};
  };
  auto flaky = f.clients;
  flaky.captioner = std::make_shared<FlakyCaptioner>(f.clients.captioner, "img1");
  CHECK(stage_of(flaky) == Stage::kCaption);
  auto empty = f.clients;
  empty.reasoner = std::make_shared<EmptyReasoner>();
  CHECK(stage_of(empty) == Stage::kReason);

  CompositionalQuery ghost = f.dataset.queries[0];
  ghost.reference_image_id = "ghost";
  const Pipeline p(f.dataset, f.index, f.clients);
  RunConfig image_only;
  image_only.mode = QueryMode::kImageOnly;
  try {
    p.run_query(ghost, image_only);
    FAIL("expected UnknownId");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kUnknownId);
    CHECK(e.stage() == Stage::kRetrieve);
  }
}

TEST_CASE("dataset runs are fail-soft and ordered") {
  auto mock = testing::dog_fixture();
  auto ds = three_query_dataset();
  auto clients = make_mock_clients(mock);
  const auto index = testing::index_for(ds, *clients.embedder);
  clients.captioner = std::make_shared<FlakyCaptioner>(clients.captioner, "img3");
  const Pipeline p(ds, index, clients);
  RunConfig c;
  c.parallelism = 3;
  std::vector<std::string> streamed;
  const auto run = p.run_dataset(ds.queries, c, [&](const PipelineTrace& t) { streamed.push_back(t.query_id); });
  REQUIRE(run.traces.size() == 3);
  CHECK(streamed == std::vector<std::string>{"q1", "q2", "q3"});
  CHECK(run.traces[0].ok());
  CHECK_FALSE(run.traces[1].ok());
  CHECK(run.traces[1].error->stage == Stage::kCaption);
  CHECK(run.traces[1].error->code == ErrorCode::kClientUnavailable);
  CHECK(run.traces[1].ranking.ranking.empty());
  CHECK(run.traces[2].ok());
  CHECK(run.summary.queries == 3);
  CHECK(run.summary.ok == 2);
  CHECK(run.summary.failed == 1);
}

TEST_CASE("cache accounting across runs and embedder swaps") {
  testing::TempDir dir;
  auto mock = testing::dog_fixture();
  const auto ds = three_query_dataset();
  ModelCache cache(dir / "cache");

  auto run_with = [&](const std::string& embedder_id) {
    auto clients = make_mock_clients(mock, "cap", "llm", embedder_id);
    CallCounters gallery;
    auto items = embed_gallery(ds, *clients.embedder, &cache, gallery);
    const auto index = GalleryIndex::build(std::move(items), embedder_id);
    const Pipeline p(ds, index, clients, &cache);
    auto summary = p.run_dataset(ds.queries, RunConfig{}).summary;
    summary.embedder_calls += gallery.embedder;
    return summary;
  };
  const auto cold = run_with("emb-a");
  CHECK(cold.captioner_calls == 3);
  CHECK(cold.reasoner_calls == 3);
  CHECK(cold.embedder_calls == 6);
  CHECK(cold.cache_hits == 0);
  CHECK(cold.ok == 3);
  const auto warm = run_with("emb-a");
  CHECK(warm.captioner_calls == 0);
  CHECK(warm.reasoner_calls == 0);
  CHECK(warm.embedder_calls == 0);
  CHECK(warm.cache_misses == 0);
  const auto swapped = run_with("emb-b");
  CHECK(swapped.captioner_calls == 0);
  CHECK(swapped.reasoner_calls == 0);
  CHECK(swapped.embedder_calls == 6);

  // Bypassing the cache reaches every client again.
  auto clients = make_mock_clients(mock, "cap", "llm", "emb-a");
  const auto index = testing::index_for(ds, *clients.embedder);
  const Pipeline p(ds, index, clients, &cache);
  RunConfig nocache;
  nocache.cache_enabled = false;
  const auto s = p.run_dataset(ds.queries, nocache).summary;
  CHECK(s.captioner_calls == 3);
  CHECK(s.reasoner_calls == 3);
}

TEST_CASE("deterministic clock gives byte-identical traces") {
  auto run_once = [] {
    auto mock = testing::dog_fixture();
    const auto ds = three_query_dataset();
    const auto clients = make_mock_clients(mock);
    const auto index = testing::index_for(ds, *clients.embedder);
    const Pipeline p(ds, index, clients, nullptr, TemplateSet{}, fixed_clock());
    RunConfig c;
    c.parallelism = 3;
    std::string out;
    for (const auto& t : p.run_dataset(ds.queries, c).traces) out += Json(t).dump() + "\n";
    return out;
  };
  const auto a = run_once();
  CHECK(a == run_once());
  CHECK(a.find("1970-01-01T00:00:00.000Z") != std::string::npos);
}

TEST_CASE("config checks run before any query") {
  Fixture f;
  const Pipeline p(f.dataset, f.index, f.clients);
  RunConfig forced;
  forced.task = TaskKind::kDomainConversion;
  try {
    p.run_dataset(f.dataset.queries, forced);
    FAIL("expected ModeInputMissing");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kModeInputMissing);
  }
  CHECK(p.counters().captioner == 0);

  auto no_reasoner = f.clients;
  no_reasoner.reasoner.reset();
  const Pipeline p2(f.dataset, f.index, no_reasoner);
  CHECK_THROWS_AS(p2.run_dataset(f.dataset.queries, RunConfig{}), Error);
  RunConfig image_only;
  image_only.mode = QueryMode::kImageOnly;
  CHECK(p2.run_dataset(f.dataset.queries, image_only).summary.ok == 1);

  RunConfig bad_template;
  bad_template.template_id = "nope";
  CHECK_THROWS_AS(p.run_dataset(f.dataset.queries, bad_template), Error);

  RunConfig bad_k;
  bad_k.k = 0;
  CHECK_THROWS_AS(p.run_dataset(f.dataset.queries, bad_k), Error);

  auto other = std::make_shared<MockFixture>(*f.mock);
  other->dim = 32;
  auto small = f.clients;
  small.embedder = make_mock_clients(other).embedder;
  const Pipeline p3(f.dataset, f.index, small);
  try {
    p3.run_dataset(f.dataset.queries, RunConfig{});
    FAIL("expected DimMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimMismatch);
  }
}

TEST_CASE("GeneCIS tasks use their own template") {
  Fixture f;
  auto& q = f.dataset.queries[0];
  q.task = TaskKind::kGenecisChangeObject;
  q.instruction = "cat";
  const Pipeline p(f.dataset, f.index, f.clients);
  const auto t = p.run_query(q, RunConfig{});
  CHECK(t.target_caption->text == "a dog on grass, cat");
  CHECK(t.task == TaskKind::kGenecisChangeObject);
  CHECK(p.counters().reasoner == 1);
}
