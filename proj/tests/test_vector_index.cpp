#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <random>
#include <thread>

#include "cirevl/vector_index.hpp"
#include "support.hpp"

using namespace cirevl;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

std::vector<std::string> ids_of(const std::vector<ScoredId>& r) {
  std::vector<std::string> out;
  for (const auto& s : r) out.push_back(s.image_id);
  return out;
}

// Independent reference: score everything in double, stable sort by score
// then id.
std::vector<std::string> oracle_ranking(const std::vector<GalleryIndex::Item>& items, const std::vector<float>& q,
                                        const std::set<std::string>& exclude) {
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& [id, v] : items) {
    if (exclude.count(id)) continue;
    double dot = 0, nv = 0, nq = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      dot += double(v[i]) * q[i];
      nv += double(v[i]) * v[i];
      nq += double(q[i]) * q[i];
    }
    scored.emplace_back(dot / std::sqrt(nv * nq), id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> ids;
  for (const auto& s : scored) ids.push_back(s.second);
  return ids;
}

}  // namespace

TEST_CASE("build examples") {
  auto index = GalleryIndex::build({{"a", {1, 0}}, {"b", {0, 2}}}, "clip");
  CHECK(index.size() == 2);
  CHECK(index.dim() == 2);
  CHECK(index.backend_model_id() == "clip");
  CHECK(index.vector("b") == EmbeddingVector{0, 1});
  CHECK(code_of([] { GalleryIndex::build({{"a", {1, 0}}, {"a", {0, 1}}}, ""); }) == ErrorCode::kDuplicateId);
  CHECK(code_of([] { GalleryIndex::build({{"a", {1, 0}}, {"b", {1, 0, 0}}}, ""); }) == ErrorCode::kDimMismatch);
  CHECK(code_of([] { GalleryIndex::build({{"a", {0, 0}}}, ""); }) == ErrorCode::kDegenerateVector);
  CHECK(code_of([] { GalleryIndex::build({}, ""); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { index.vector("zz"); }) == ErrorCode::kUnknownId);
}

TEST_CASE("top_k examples") {
  auto ab = GalleryIndex::build({{"a", {1, 0}}, {"b", {0, 1}}}, "");
  CHECK(ab.top_k({1, 0}, 2) == std::vector<ScoredId>{{"a", 1.0}, {"b", 0.0}});

  auto skew = GalleryIndex::build({{"a", {0.6f, 0.8f}}, {"b", {0.8f, 0.6f}}}, "");
  const auto top = skew.top_k({1, 0}, 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].image_id == "b");
  CHECK(top[0].score == doctest::Approx(0.8).epsilon(1e-7));

  auto tie = GalleryIndex::build({{"b", {1, 0}}, {"a", {1, 0}}}, "");
  CHECK(tie.top_k({1, 0}, 2) == std::vector<ScoredId>{{"a", 1.0}, {"b", 1.0}});

  CHECK(code_of([&] { ab.top_k({1, 0}, 0); }) == ErrorCode::kInvalidK);
  CHECK(code_of([&] { ab.top_k({1, 0, 0}, 1); }) == ErrorCode::kDimMismatch);
  CHECK(code_of([&] { ab.top_k({0, 0}, 1); }) == ErrorCode::kDegenerateVector);
  CHECK(code_of([&] { ab.top_k({1, 0}, 1, {"a", "b"}); }) == ErrorCode::kEmptyGallery);
}

TEST_CASE("excluded ids never take a slot") {
  auto index = GalleryIndex::build({{"a", {1, 0}}, {"b", {0.9f, 0.1f}}, {"c", {0, 1}}}, "");
  CHECK(ids_of(index.top_k({1, 0}, 2, {"a"})) == std::vector<std::string>{"b", "c"});
  CHECK(ids_of(index.top_k({1, 0}, 10)) == std::vector<std::string>{"a", "b", "c"});
  CHECK(ids_of(index.top_k({1, 0}, 10, {"unknown"})).size() == 3);
}

TEST_CASE("rank_subset examples") {
  auto index = GalleryIndex::build({{"a", {0.8f, 0.6f}}, {"b", {1, 0}}, {"c", {0, 1}}}, "");
  CHECK(ids_of(index.top_k({1, 0}, 3)) == std::vector<std::string>{"b", "a", "c"});
  CHECK(ids_of(index.rank_subset({1, 0}, {"c", "a"})) == std::vector<std::string>{"a", "c"});
  CHECK(code_of([&] { index.rank_subset({1, 0}, {"a", "nope"}); }) == ErrorCode::kUnknownId);

  std::mt19937_64 rng(3);
  auto items = testing::random_gallery(rng, 40, 8);
  auto gallery = GalleryIndex::build(items, "");
  const auto q = testing::random_vector(rng, 8);
  const auto full = gallery.top_k(EmbeddingVector(q), gallery.size());
  std::vector<std::string> six{full[0].image_id, full[5].image_id, full[11].image_id,
                               full[17].image_id, full[23].image_id, full[39].image_id};
  std::shuffle(six.begin(), six.end(), rng);
  CHECK(gallery.rank_subset(EmbeddingVector(q), six)[0].image_id == full[0].image_id);
}

TEST_CASE("property: matches brute-force oracle, with exclusions") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> sizes(1, 64), dims(1, 16);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = sizes(rng), d = dims(rng);
    auto items = testing::random_gallery(rng, n, d);
    auto index = GalleryIndex::build(items, "");
    const auto q = testing::random_vector(rng, d);
    std::set<std::string> exclude;
    if (n > 1) exclude.insert(items[rng() % n].first);
    const auto expected = oracle_ranking(items, q, exclude);
    const auto got = index.top_k(EmbeddingVector(q), n, exclude);
    CHECK(ids_of(got) == expected);
    for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i - 1].score >= got[i].score);
    const std::size_t k = 1 + rng() % n;
    const auto partial = index.top_k(EmbeddingVector(q), k, exclude);
    CHECK(partial.size() == std::min(k, expected.size()));
    CHECK(std::equal(partial.begin(), partial.end(), got.begin()));
  }
}

TEST_CASE("property: heavy ties resolve by ascending id") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GalleryIndex::Item> items;
    for (int i = 0; i < 30; ++i) {
      const float x = static_cast<float>(rng() % 3);
      items.emplace_back("id" + std::to_string(rng() % 1000000) + "_" + std::to_string(i),
                         EmbeddingVector{x + 1.0f, 1.0f});
    }
    auto index = GalleryIndex::build(items, "");
    const auto got = index.top_k({1, 0}, 30);
    for (std::size_t i = 1; i < got.size(); ++i) {
      if (got[i - 1].score == got[i].score) CHECK(got[i - 1].image_id < got[i].image_id);
    }
  }
}

TEST_CASE("concurrent readers see identical results") {
  std::mt19937_64 rng(9);
  auto index = GalleryIndex::build(testing::random_gallery(rng, 500, 32), "");
  const auto q = EmbeddingVector(testing::random_vector(rng, 32));
  const auto expected = index.top_k(q, 20);
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 50; ++i) {
        if (index.top_k(q, 20) != expected) ++mismatches;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(mismatches == 0);
}
