#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "abis/fusion.hpp"
#include "abis/template.hpp"

namespace abis {

using GalleryId = std::uint64_t;

/// Contiguous row-major block of templates; the unit of parallel search.
class GalleryShard {
 public:
  explicit GalleryShard(std::size_t capacity);

  /// Appends a row. Throws Capacity when full, IdConflict when the id is
  /// already in this shard or is 0.
  std::size_t insert(const MultiBiometricTemplate& t);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool full() const noexcept { return size() >= capacity_; }

  std::span<const float> matrix() const noexcept { return matrix_; }
  std::span<const float> row(std::size_t i) const;
  std::span<const GalleryId> ids() const noexcept { return ids_; }
  const PresenceMask& presence(std::size_t i) const { return presence_.at(i); }
  const QualityVector& quality(std::size_t i) const { return quality_.at(i); }
  TemplateView view(std::size_t i) const;
  bool contains(GalleryId id) const noexcept { return id_set_.contains(id); }

 private:
  std::size_t capacity_;
  std::vector<float> matrix_;
  std::vector<GalleryId> ids_;
  std::vector<PresenceMask> presence_;
  std::vector<QualityVector> quality_;
  std::unordered_set<GalleryId> id_set_;
};

/// An ordered set of shards with gallery-wide unique ids. Not synchronized:
/// callers hold a readers-writer lock around insert vs. search.
class Gallery {
 public:
  static constexpr std::size_t kDefaultShardSize = 100'000;
  static constexpr std::size_t kUnbounded = static_cast<std::size_t>(-1);

  explicit Gallery(std::size_t shard_size = kDefaultShardSize, std::size_t max_rows = kUnbounded);

  /// Inserts under t.subject_id(), which must be non-zero and unused.
  GalleryId insert(const MultiBiometricTemplate& t);

  std::size_t size() const noexcept { return size_; }
  std::size_t shard_size() const noexcept { return shard_size_; }
  std::size_t max_rows() const noexcept { return max_rows_; }
  std::span<const GalleryShard> shards() const noexcept { return shards_; }
  bool contains(GalleryId id) const noexcept { return locator_.contains(id); }
  /// Throws NotFound / Consistency for unknown ids.
  TemplateView view(GalleryId id) const;
  MultiBiometricTemplate template_of(GalleryId id) const;
  GalleryId max_id() const noexcept { return max_id_; }

  /// Builds a gallery with the same rows in the same order but a different
  /// shard size.
  Gallery resharded(std::size_t shard_size) const;

 private:
  struct RowRef {
    std::uint32_t shard;
    std::uint32_t row;
  };
  std::size_t shard_size_;
  std::size_t max_rows_;
  std::size_t size_ = 0;
  GalleryId max_id_ = 0;
  std::vector<GalleryShard> shards_;
  std::unordered_map<GalleryId, RowRef> locator_;
};

struct Candidate {
  GalleryId id = 0;
  /// Sort key: raw prescaled dot before rescoring, fused value after.
  double score = 0.0;
  float raw_dot = 0.0f;
  FusedScore fused;
};

/// Sorted by score descending, ties by ascending id; ids unique.
using CandidateList = std::vector<Candidate>;

bool candidate_before(const Candidate& a, const Candidate& b) noexcept;

/// Probes prepared for the scan: weight-prescaled vectors, contiguous.
struct ProbeBatch {
  std::vector<float> prescaled;  // size() * kTemplateDim
  std::vector<PresenceMask> presence;
  std::vector<QualityVector> quality;
  /// Segments with positive weight present in at least one probe.
  PresenceMask active;

  std::size_t size() const noexcept { return presence.size(); }
  const float* row(std::size_t i) const noexcept { return prescaled.data() + i * kTemplateDim; }
};

ProbeBatch prepare_probes(std::span<const MultiBiometricTemplate> probes, const FusionWeights& weights);

/// Exact top-k by raw prescaled dot for every probe in the batch. Returns
/// all rows (sorted) when the shard holds fewer than k. Throws Argument on k == 0.
std::vector<CandidateList> shard_search_topk(const GalleryShard& shard, const ProbeBatch& probes,
                                             std::size_t k, std::size_t threads = 1);

/// Global top-k of several sorted lists under the same ordering.
CandidateList merge_topk(std::span<const CandidateList> lists, std::size_t k);

/// Replaces raw scores by fused scores, drops incomparable pairs, re-sorts.
/// Throws Consistency if a candidate id is not in the gallery.
CandidateList rescore_candidates(const MultiBiometricTemplate& probe, const CandidateList& candidates,
                                 const Gallery& gallery, const FusionWeights& weights,
                                 bool quality_adaptive = false);

/// floor(memory_bytes / (dim * bytes_per_element)).
std::uint64_t capacity_estimate(std::uint64_t memory_bytes, std::uint64_t dim,
                                std::uint64_t bytes_per_element);

struct SearchOptions {
  std::size_t k = 50;
  /// Raw scan keeps overscan * k candidates per probe before rescoring.
  std::size_t overscan = 4;
  /// Scan keeps every row; rescoring then sees the whole gallery.
  bool exhaustive = false;
  std::size_t threads = 4;
  bool quality_adaptive = false;
};

/// prescale -> per-shard top-k -> merge -> rescore -> truncate to k.
std::vector<CandidateList> search(const Gallery& gallery, std::span<const MultiBiometricTemplate> probes,
                                  const FusionWeights& weights, const SearchOptions& options);

/// One scan serving several weight profiles at once: per-segment partial
/// inner products are computed once and combined per profile. Result is
/// indexed [profile][probe].
std::vector<std::vector<CandidateList>> search_profiles(const Gallery& gallery,
                                                        std::span<const MultiBiometricTemplate> probes,
                                                        std::span<const FusionWeights> profiles,
                                                        const SearchOptions& options);

// Gallery file: "BGAL" | u16 version=1 | u16 reserved | u64 n_rows | u32 dim=3456 |
// u32 crc32(payload) | n_rows x template record.
inline constexpr std::size_t kGalleryHeaderBytes = 24;

void save_gallery(const Gallery& gallery, const std::filesystem::path& path);
Gallery load_gallery(const std::filesystem::path& path, std::size_t shard_size = Gallery::kDefaultShardSize,
                     std::size_t max_rows = Gallery::kUnbounded);

/// Serializes templates in the gallery file format (used for probe sets).
void save_templates(std::span<const MultiBiometricTemplate> templates, const std::filesystem::path& path);
std::vector<MultiBiometricTemplate> load_templates(const std::filesystem::path& path);

}  // namespace abis
