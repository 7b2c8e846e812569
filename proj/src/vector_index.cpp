#include "cirevl/vector_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cirevl {

GalleryIndex GalleryIndex::build(std::vector<Item> items, std::string backend_model_id) {
  if (items.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "cannot build an index from zero items");
  }
  const std::size_t dim = items.front().second.dim();
  for (const auto& [id, vec] : items) {
    if (vec.dim() != dim) {
      throw Error(ErrorCode::kDimMismatch, "item '" + id + "' has dim " +
                                               std::to_string(vec.dim()) + ", expected " +
                                               std::to_string(dim));
    }
  }
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (items[i].first == items[i - 1].first) {
      throw Error(ErrorCode::kDuplicateId, "duplicate gallery id '" + items[i].first + "'");
    }
  }

  GalleryIndex index;
  index.dim_ = dim;
  index.insertion_count_ = items.size();
  index.backend_model_id_ = std::move(backend_model_id);
  index.ids_.reserve(items.size());
  index.data_.reserve(items.size() * dim);
  for (auto& [id, vec] : items) {
    const EmbeddingVector unit = normalize(vec);
    index.ids_.push_back(std::move(id));
    index.data_.insert(index.data_.end(), unit.values().begin(), unit.values().end());
  }
  return index;
}

std::optional<std::size_t> GalleryIndex::position(const std::string& id) const {
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

EmbeddingVector GalleryIndex::vector(const std::string& id) const {
  const auto pos = position(id);
  if (!pos) throw Error(ErrorCode::kUnknownId, "unknown gallery id '" + id + "'");
  const float* row = data_.data() + *pos * dim_;
  return EmbeddingVector(std::vector<float>(row, row + dim_));
}

std::vector<double> GalleryIndex::unit_query(const EmbeddingVector& query) const {
  if (query.dim() != dim_) {
    throw Error(ErrorCode::kDimMismatch, "query dim " + std::to_string(query.dim()) +
                                             " vs index dim " + std::to_string(dim_));
  }
  const double n = query.norm();
  if (!(n > kDegenerateNorm)) {
    throw Error(ErrorCode::kDegenerateVector, "query vector has zero norm");
  }
  std::vector<double> q(dim_);
  for (std::size_t i = 0; i < dim_; ++i) q[i] = query[i] / n;
  return q;
}

double GalleryIndex::score_at(const std::vector<double>& q, std::size_t row) const {
  const float* v = data_.data() + row * dim_;
  double dot = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) dot += q[i] * v[i];
  return std::clamp(dot, -1.0, 1.0);
}

namespace {

struct Candidate {
  double score;
  std::size_t row;
};

// Score descending, then row ascending (rows are in id order).
bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.row < b.row;
}

}  // namespace

std::vector<ScoredId> GalleryIndex::top_k(const EmbeddingVector& query, std::size_t k,
                                          const std::set<std::string>& exclude) const {
  if (k < 1) throw Error(ErrorCode::kInvalidK, "top_k requires k >= 1");
  const auto q = unit_query(query);

  std::vector<char> skip(size(), 0);
  for (const auto& id : exclude) {
    if (const auto pos = position(id)) skip[*pos] = 1;
  }

  std::vector<Candidate> candidates;
  candidates.reserve(size());
  for (std::size_t row = 0; row < size(); ++row) {
    if (!skip[row]) candidates.push_back({score_at(q, row), row});
  }
  if (candidates.empty()) {
    throw Error(ErrorCode::kEmptyGallery, "no candidates left after exclusion");
  }

  const std::size_t take = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                    candidates.end(), ranks_before);

  std::vector<ScoredId> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back({ids_[candidates[i].row], candidates[i].score});
  }
  return out;
}

std::vector<ScoredId> GalleryIndex::rank_subset(
    const EmbeddingVector& query, const std::vector<std::string>& member_ids) const {
  std::vector<std::size_t> rows;
  rows.reserve(member_ids.size());
  for (const auto& id : member_ids) {
    const auto pos = position(id);
    if (!pos) throw Error(ErrorCode::kUnknownId, "subset member '" + id + "' is not in the index");
    rows.push_back(*pos);
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  if (rows.empty()) throw Error(ErrorCode::kEmptyGallery, "empty subset");

  const auto q = unit_query(query);
  std::vector<Candidate> candidates;
  candidates.reserve(rows.size());
  for (std::size_t row : rows) candidates.push_back({score_at(q, row), row});
  std::sort(candidates.begin(), candidates.end(), ranks_before);

  std::vector<ScoredId> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back({ids_[c.row], c.score});
  return out;
}

}  // namespace cirevl
