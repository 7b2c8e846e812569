#pragma once

#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cirevl/types.hpp"

namespace cirevl {

/// Immutable exact cosine index over a gallery of unit-normalized vectors.
///
/// Entries are stored contiguously in ascending id order so that the
/// tie-break rule (equal scores -> ascending id) falls out of index order.
/// Concurrent read-only queries are safe.
class GalleryIndex {
 public:
  using Item = std::pair<std::string, EmbeddingVector>;

  /// Throws DuplicateId, DimMismatch, DegenerateVector, or InvalidArgument
  /// for an empty item list.
  static GalleryIndex build(std::vector<Item> items, std::string backend_model_id);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  std::size_t insertion_count() const { return insertion_count_; }
  const std::string& backend_model_id() const { return backend_model_id_; }
  const std::vector<std::string>& ids() const { return ids_; }

  bool contains(const std::string& id) const { return position(id).has_value(); }
  /// Stored (normalized) vector for `id`; throws UnknownId.
  EmbeddingVector vector(const std::string& id) const;

  /// Best `k` non-excluded entries by cosine with `query`, scores
  /// non-increasing, ties by ascending id. Excluded ids never take a slot.
  std::vector<ScoredId> top_k(const EmbeddingVector& query, std::size_t k,
                              const std::set<std::string>& exclude = {}) const;

  /// Ranks exactly `member_ids`; equals the full ranking restricted to them.
  std::vector<ScoredId> rank_subset(const EmbeddingVector& query,
                                    const std::vector<std::string>& member_ids) const;

 private:
  std::optional<std::size_t> position(const std::string& id) const;
  std::vector<double> unit_query(const EmbeddingVector& query) const;
  double score_at(const std::vector<double>& q, std::size_t row) const;

  std::size_t dim_ = 0;
  std::size_t insertion_count_ = 0;
  std::string backend_model_id_;
  std::vector<std::string> ids_;
  std::vector<float> data_;
};

}  // namespace cirevl
