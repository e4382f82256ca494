#include "abis/index.hpp"

#include <algorithm>
#include <atomic>
#include <string>

#include "abis/detail/parallel.hpp"
#include "abis/error.hpp"
#include "abis/kernels/kernels.hpp"

namespace abis {

// ---------------------------------------------------------------------------
// Storage

GalleryShard::GalleryShard(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) raise(ErrorCode::Argument, "shard capacity must be positive");
  matrix_.reserve(capacity * kTemplateDim);
}

std::size_t GalleryShard::insert(const MultiBiometricTemplate& t) {
  if (full()) raise(ErrorCode::Capacity, "shard is full (" + std::to_string(capacity_) + " rows)");
  const GalleryId id = t.subject_id();
  if (id == 0) raise(ErrorCode::IdConflict, "gallery rows need a non-zero subject id");
  if (id_set_.contains(id)) raise(ErrorCode::IdConflict, "id " + std::to_string(id) + " already enrolled");
  const auto v = t.vector();
  matrix_.insert(matrix_.end(), v.begin(), v.end());
  ids_.push_back(id);
  presence_.push_back(t.presence());
  quality_.push_back(t.quality());
  id_set_.insert(id);
  return ids_.size() - 1;
}

std::span<const float> GalleryShard::row(std::size_t i) const {
  if (i >= size()) raise(ErrorCode::Argument, "row out of range");
  return std::span<const float>(matrix_).subspan(i * kTemplateDim, kTemplateDim);
}

TemplateView GalleryShard::view(std::size_t i) const {
  return {row(i), presence_[i], quality_[i], ids_[i]};
}

Gallery::Gallery(std::size_t shard_size, std::size_t max_rows)
    : shard_size_(shard_size), max_rows_(max_rows) {
  if (shard_size == 0) raise(ErrorCode::Argument, "shard size must be positive");
}

GalleryId Gallery::insert(const MultiBiometricTemplate& t) {
  if (size_ >= max_rows_) raise(ErrorCode::Capacity, "gallery is at capacity");
  const GalleryId id = t.subject_id();
  if (id == 0) raise(ErrorCode::IdConflict, "gallery rows need a non-zero subject id");
  if (locator_.contains(id)) raise(ErrorCode::IdConflict, "id " + std::to_string(id) + " already enrolled");
  if (shards_.empty() || shards_.back().full()) shards_.emplace_back(shard_size_);
  const std::size_t row = shards_.back().insert(t);
  locator_.emplace(id, RowRef{static_cast<std::uint32_t>(shards_.size() - 1), static_cast<std::uint32_t>(row)});
  ++size_;
  max_id_ = std::max(max_id_, id);
  return id;
}

TemplateView Gallery::view(GalleryId id) const {
  const auto it = locator_.find(id);
  if (it == locator_.end()) raise(ErrorCode::NotFound, "gallery id " + std::to_string(id) + " not found");
  return shards_[it->second.shard].view(it->second.row);
}

MultiBiometricTemplate Gallery::template_of(GalleryId id) const {
  const TemplateView v = view(id);
  return make_template(v.vector, v.presence, v.quality, v.subject_id);
}

Gallery Gallery::resharded(std::size_t shard_size) const {
  Gallery out(shard_size, max_rows_);
  for (const auto& shard : shards_) {
    for (std::size_t r = 0; r < shard.size(); ++r) {
      const TemplateView v = shard.view(r);
      out.insert(make_template(v.vector, v.presence, v.quality, v.subject_id));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scan

bool candidate_before(const Candidate& a, const Candidate& b) noexcept {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

namespace {

constexpr std::size_t kRowBlock = 256;
constexpr std::size_t kProbeBlock = 256;
constexpr std::size_t kTaskRows = 4096;
constexpr std::size_t kMaxBatch = 1024;

struct ColumnRange {
  std::size_t begin;
  std::size_t length;
};

// Contiguous column ranges covering the segments in `mask`.
std::vector<ColumnRange> column_ranges(const PresenceMask& mask) {
  std::vector<ColumnRange> out;
  for (std::size_t i = 0; i < kSegmentCount; ++i) {
    if (!mask.test(i)) continue;
    const auto& seg = segment_layout()[i];
    if (!out.empty() && out.back().begin + out.back().length == seg.offset) {
      out.back().length += seg.length;
    } else {
      out.push_back({seg.offset, seg.length});
    }
  }
  return out;
}

// Keeps the k best (score desc, id asc) entries seen.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(std::min<std::size_t>(k, 4096)); }

  void push(float score, GalleryId id) {
    if (heap_.size() < k_) {
      heap_.push_back({score, id});
      std::push_heap(heap_.begin(), heap_.end(), better);
      return;
    }
    const Entry& worst = heap_.front();
    if (score < worst.score || (score == worst.score && id > worst.id)) return;
    std::pop_heap(heap_.begin(), heap_.end(), better);
    heap_.back() = {score, id};
    std::push_heap(heap_.begin(), heap_.end(), better);
  }

  struct Entry {
    float score;
    GalleryId id;
  };
  const std::vector<Entry>& entries() const noexcept { return heap_; }

 private:
  // Heap order: "largest" = worst kept entry, at the front.
  static bool better(const Entry& a, const Entry& b) noexcept {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  }
  std::size_t k_;
  std::vector<Entry> heap_;
};

struct ScanTask {
  const GalleryShard* shard;
  std::size_t row_begin;
  std::size_t row_end;
};

std::vector<ScanTask> make_tasks(std::span<const GalleryShard* const> shards) {
  std::vector<ScanTask> tasks;
  for (const GalleryShard* s : shards) {
    for (std::size_t r = 0; r < s->size(); r += kTaskRows) {
      tasks.push_back({s, r, std::min(s->size(), r + kTaskRows)});
    }
  }
  return tasks;
}

// Raw prescaled-dot scan of rows [row_begin, row_end) into per-probe heaps.
void scan_single(const ScanTask& task, const float* probes, std::size_t n_probes,
                 std::span<const ColumnRange> ranges, std::vector<TopK>& heaps) {
  const auto gemm = kernels::active().gemm_nt;
  const float* matrix = task.shard->matrix().data();
  const auto ids = task.shard->ids();
  std::vector<float> tile(kProbeBlock * kRowBlock);
  for (std::size_t rb = task.row_begin; rb < task.row_end; rb += kRowBlock) {
    const std::size_t nr = std::min(kRowBlock, task.row_end - rb);
    for (std::size_t pb = 0; pb < n_probes; pb += kProbeBlock) {
      const std::size_t np = std::min(kProbeBlock, n_probes - pb);
      std::fill(tile.begin(), tile.begin() + static_cast<std::ptrdiff_t>(np * nr), 0.0f);
      for (const auto& r : ranges) {
        gemm(probes + pb * kTemplateDim + r.begin, kTemplateDim, np,
             matrix + rb * kTemplateDim + r.begin, kTemplateDim, nr, r.length, tile.data(), nr);
      }
      for (std::size_t i = 0; i < np; ++i) {
        TopK& heap = heaps[pb + i];
        const float* row = tile.data() + i * nr;
        for (std::size_t j = 0; j < nr; ++j) heap.push(row[j], ids[rb + j]);
      }
    }
  }
}

// Per-segment partial dots, combined once per profile.
void scan_profiles(const ScanTask& task, const float* probes, std::size_t n_probes,
                   std::span<const std::array<float, kSegmentCount>> profile_weights,
                   const PresenceMask& used, std::vector<TopK>& heaps) {
  const auto gemm = kernels::active().gemm_nt;
  const float* matrix = task.shard->matrix().data();
  const auto ids = task.shard->ids();
  const std::size_t tile_size = kProbeBlock * kRowBlock;
  std::vector<float> partial(kSegmentCount * tile_size);
  std::vector<float> combined(kRowBlock);
  const auto& layout = segment_layout();
  for (std::size_t rb = task.row_begin; rb < task.row_end; rb += kRowBlock) {
    const std::size_t nr = std::min(kRowBlock, task.row_end - rb);
    for (std::size_t pb = 0; pb < n_probes; pb += kProbeBlock) {
      const std::size_t np = std::min(kProbeBlock, n_probes - pb);
      const std::size_t n = np * nr;
      for (std::size_t s = 0; s < kSegmentCount; ++s) {
        if (!used.test(s)) continue;
        float* out = partial.data() + s * tile_size;
        std::fill(out, out + n, 0.0f);
        gemm(probes + pb * kTemplateDim + layout[s].offset, kTemplateDim, np,
             matrix + rb * kTemplateDim + layout[s].offset, kTemplateDim, nr, layout[s].length, out, nr);
      }
      // Probe-major so the probe's partial rows stay cache-resident across profiles.
      for (std::size_t i = 0; i < np; ++i) {
        for (std::size_t p = 0; p < profile_weights.size(); ++p) {
          std::fill(combined.begin(), combined.begin() + static_cast<std::ptrdiff_t>(nr), 0.0f);
          for (std::size_t s = 0; s < kSegmentCount; ++s) {
            const float w = profile_weights[p][s];
            if (w == 0.0f) continue;
            const float* src = partial.data() + s * tile_size + i * nr;
            for (std::size_t j = 0; j < nr; ++j) combined[j] += w * src[j];
          }
          TopK& heap = heaps[p * n_probes + pb + i];
          for (std::size_t j = 0; j < nr; ++j) heap.push(combined[j], ids[rb + j]);
        }
      }
    }
  }
}

std::size_t scan_k_for(const SearchOptions& o, std::size_t gallery_size) {
  if (o.k == 0) raise(ErrorCode::Argument, "k must be at least 1");
  if (o.exhaustive) return std::max<std::size_t>(gallery_size, 1);
  return std::max(o.k, o.k * std::max<std::size_t>(o.overscan, 1));
}

std::vector<const GalleryShard*> shard_pointers(const Gallery& g) {
  std::vector<const GalleryShard*> out;
  for (const auto& s : g.shards()) out.push_back(&s);
  return out;
}

// Each worker folds its tasks into its own heaps; a heap keeps the exact top
// scan_k under a total order, so the merged result does not depend on which
// worker saw which task.
template <typename ScanFn>
std::vector<CandidateList> run_tasks(std::span<const ScanTask> tasks, std::size_t n_lists,
                                     std::size_t scan_k, std::size_t threads, ScanFn&& scan) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, tasks.size()));
  std::vector<std::vector<TopK>> heaps(workers);
  std::atomic<std::size_t> next{0};
  detail::parallel_for(workers, workers, [&](std::size_t w) {
    heaps[w].assign(n_lists, TopK(scan_k));
    for (std::size_t t = next.fetch_add(1); t < tasks.size(); t = next.fetch_add(1)) scan(tasks[t], heaps[w]);
  });
  std::vector<CandidateList> out(n_lists);
  std::vector<TopK::Entry> all;
  for (std::size_t i = 0; i < n_lists; ++i) {
    all.clear();
    for (const auto& h : heaps) {
      if (h.empty()) continue;
      const auto& e = h[i].entries();
      all.insert(all.end(), e.begin(), e.end());
    }
    const std::size_t keep = std::min(scan_k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                      [](const TopK::Entry& a, const TopK::Entry& b) {
                        return a.score > b.score || (a.score == b.score && a.id < b.id);
                      });
    CandidateList& list = out[i];
    list.reserve(keep);
    for (std::size_t j = 0; j < keep; ++j) {
      Candidate c;
      c.id = all[j].id;
      c.score = all[j].score;
      c.raw_dot = all[j].score;
      list.push_back(c);
    }
  }
  return out;
}

}  // namespace

ProbeBatch prepare_probes(std::span<const MultiBiometricTemplate> probes, const FusionWeights& weights) {
  ProbeBatch batch;
  batch.prescaled.resize(probes.size() * kTemplateDim);
  batch.presence.reserve(probes.size());
  batch.quality.reserve(probes.size());
  PresenceMask weighted;
  for (std::size_t i = 0; i < kSegmentCount; ++i) weighted.set(i, weights[i] > 0.0);
  for (std::size_t p = 0; p < probes.size(); ++p) {
    probe_prescale_into(probes[p], weights,
                        std::span<float>(batch.prescaled).subspan(p * kTemplateDim, kTemplateDim));
    batch.presence.push_back(probes[p].presence());
    batch.quality.push_back(probes[p].quality());
    batch.active |= probes[p].presence() & weighted;
  }
  return batch;
}

std::vector<CandidateList> shard_search_topk(const GalleryShard& shard, const ProbeBatch& probes,
                                             std::size_t k, std::size_t threads) {
  if (k == 0) raise(ErrorCode::Argument, "k must be at least 1");
  const GalleryShard* one = &shard;
  const auto tasks = make_tasks(std::span<const GalleryShard* const>(&one, 1));
  const auto ranges = column_ranges(probes.active);
  return run_tasks(tasks, probes.size(), k, threads, [&](const ScanTask& task, std::vector<TopK>& heaps) {
    scan_single(task, probes.prescaled.data(), probes.size(), ranges, heaps);
  });
}

CandidateList merge_topk(std::span<const CandidateList> lists, std::size_t k) {
  CandidateList all;
  std::size_t total = 0;
  for (const auto& l : lists) total += l.size();
  all.reserve(total);
  for (const auto& l : lists) all.insert(all.end(), l.begin(), l.end());
  std::sort(all.begin(), all.end(), candidate_before);
  CandidateList out;
  out.reserve(std::min(k, all.size()));
  std::unordered_set<GalleryId> seen;
  for (const auto& c : all) {
    if (out.size() >= k) break;
    if (seen.insert(c.id).second) out.push_back(c);
  }
  return out;
}

CandidateList rescore_candidates(const MultiBiometricTemplate& probe, const CandidateList& candidates,
                                 const Gallery& gallery, const FusionWeights& weights,
                                 bool quality_adaptive) {
  CandidateList out;
  out.reserve(candidates.size());
  const TemplateView pv = probe.view();
  for (const auto& c : candidates) {
    if (!gallery.contains(c.id)) {
      raise(ErrorCode::Consistency, "candidate id " + std::to_string(c.id) + " is not in the gallery");
    }
    const TemplateView gv = gallery.view(c.id);
    try {
      const FusedScore fs = quality_adaptive
                                ? fused_score(pv, gv, quality_adapted_weights(weights, pv.quality, gv.quality))
                                : fused_score(pv, gv, weights);
      Candidate r = c;
      r.fused = fs;
      r.score = fs.value;
      out.push_back(r);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Incomparable) throw;
    }
  }
  std::sort(out.begin(), out.end(), candidate_before);
  return out;
}

std::uint64_t capacity_estimate(std::uint64_t memory_bytes, std::uint64_t dim,
                                std::uint64_t bytes_per_element) {
  if (memory_bytes == 0 || dim == 0 || bytes_per_element == 0) {
    raise(ErrorCode::Argument, "capacity_estimate needs positive arguments");
  }
  return memory_bytes / (dim * bytes_per_element);
}

std::vector<CandidateList> search(const Gallery& gallery, std::span<const MultiBiometricTemplate> probes,
                                  const FusionWeights& weights, const SearchOptions& options) {
  const std::size_t scan_k = scan_k_for(options, gallery.size());
  const auto shards = shard_pointers(gallery);
  const auto tasks = make_tasks(shards);
  std::vector<CandidateList> out;
  out.reserve(probes.size());
  for (std::size_t b0 = 0; b0 < probes.size(); b0 += kMaxBatch) {
    const auto chunk = probes.subspan(b0, std::min(kMaxBatch, probes.size() - b0));
    const ProbeBatch batch = prepare_probes(chunk, weights);
    const auto ranges = column_ranges(batch.active);
    auto raw = run_tasks(tasks, batch.size(), scan_k, options.threads,
                         [&](const ScanTask& task, std::vector<TopK>& heaps) {
                           scan_single(task, batch.prescaled.data(), batch.size(), ranges, heaps);
                         });
    for (std::size_t p = 0; p < chunk.size(); ++p) {
      auto rescored = rescore_candidates(chunk[p], raw[p], gallery, weights, options.quality_adaptive);
      if (rescored.size() > options.k) rescored.resize(options.k);
      out.push_back(std::move(rescored));
    }
  }
  return out;
}

std::vector<std::vector<CandidateList>> search_profiles(const Gallery& gallery,
                                                        std::span<const MultiBiometricTemplate> probes,
                                                        std::span<const FusionWeights> profiles,
                                                        const SearchOptions& options) {
  if (profiles.empty()) raise(ErrorCode::Argument, "search_profiles needs at least one profile");
  const std::size_t scan_k = scan_k_for(options, gallery.size());
  const std::size_t n_profiles = profiles.size();
  std::vector<std::array<float, kSegmentCount>> pw(n_profiles);
  PresenceMask used;
  for (std::size_t p = 0; p < n_profiles; ++p) {
    for (std::size_t s = 0; s < kSegmentCount; ++s) {
      pw[p][s] = static_cast<float>(profiles[p][s]);
      if (pw[p][s] > 0.0f) used.set(s);
    }
  }
  const auto shards = shard_pointers(gallery);
  const auto tasks = make_tasks(shards);
  std::vector<std::vector<CandidateList>> out(n_profiles);
  std::vector<float> unweighted;
  for (std::size_t b0 = 0; b0 < probes.size(); b0 += kMaxBatch) {
    const std::size_t nb = std::min(kMaxBatch, probes.size() - b0);
    unweighted.resize(nb * kTemplateDim);
    for (std::size_t p = 0; p < nb; ++p) {
      const auto v = probes[b0 + p].vector();
      std::copy(v.begin(), v.end(), unweighted.begin() + static_cast<std::ptrdiff_t>(p * kTemplateDim));
    }
    // Lists are flattened [profile * nb + probe].
    auto raw = run_tasks(tasks, n_profiles * nb, scan_k, options.threads,
                         [&](const ScanTask& task, std::vector<TopK>& heaps) {
                           scan_profiles(task, unweighted.data(), nb, pw, used, heaps);
                         });
    for (std::size_t prof = 0; prof < n_profiles; ++prof) {
      for (std::size_t p = 0; p < nb; ++p) {
        auto rescored = rescore_candidates(probes[b0 + p], raw[prof * nb + p], gallery, profiles[prof],
                                           options.quality_adaptive);
        if (rescored.size() > options.k) rescored.resize(options.k);
        out[prof].push_back(std::move(rescored));
      }
    }
  }
  return out;
}

}  // namespace abis
