#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cirevl/pipeline.hpp"

namespace cirevl::testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("cirevl-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path resource_dir() { return CIREVL_RESOURCE_DIR; }
inline std::filesystem::path mock_data_dir() { return CIREVL_MOCK_DATA_DIR; }

// The three-image dog/cat fixture.
inline std::shared_ptr<MockFixture> dog_fixture() {
  auto f = std::make_shared<MockFixture>();
  f->pseudo_captions = {{"img1", "a dog on grass"},
                        {"img2", "a dog on grass at night"},
                        {"img3", "two cats indoors"}};
  f->captions = f->pseudo_captions;
  f->replies = {{"928342cfe72f9137afe6582f048f017daeb272022bf3f8438b9e0886a30a8d1f",
                 "Edited Description: a dog on grass at night"}};
  f->dim = 64;
  return f;
}

inline CanonicalDataset dog_dataset() {
  CanonicalDataset ds;
  ds.name = "mock-3";
  ds.images = {{"img1", "img1.png", {}}, {"img2", "img2.png", {}}, {"img3", "img3.png", {}}};
  CompositionalQuery q;
  q.id = "q1";
  q.reference_image_id = "img1";
  q.instruction = "make it night-time";
  q.positives = {"img2"};
  ds.queries = {q};
  ds.reindex();
  return ds;
}

inline GalleryIndex index_for(const CanonicalDataset& ds, const Embedder& embedder) {
  CallCounters counters;
  return GalleryIndex::build(embed_gallery(ds, embedder, nullptr, counters), embedder.model_id());
}

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (;;) {
    double sq = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      sq += double(x) * x;
    }
    if (sq > 1e-6) return v;
  }
}

inline std::vector<GalleryIndex::Item> random_gallery(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::vector<GalleryIndex::Item> items;
  for (std::size_t i = 0; i < n; ++i) {
    items.emplace_back("g" + std::to_string(i), EmbeddingVector(random_vector(rng, dim)));
  }
  return items;
}

}  // namespace cirevl::testing
