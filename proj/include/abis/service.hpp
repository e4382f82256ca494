#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include "abis/fusion.hpp"
#include "abis/index.hpp"
#include "abis/pipeline.hpp"

namespace abis {

enum class CaseState { Pending, Duplicate, Unique };
std::string_view to_string(CaseState s) noexcept;
/// Accepts "pending", "duplicate", "unique" (any case). Throws Argument.
CaseState parse_case_state(std::string_view s);

struct AdjudicationCase {
  std::uint64_t id = 0;
  std::string packet_id;
  /// Template record of the probe; never sent to clients.
  std::vector<std::byte> probe_record;
  PresenceMask probe_presence;
  QualityVector probe_quality{};
  CandidateList candidates;
  /// Per candidate: segments present in both the probe and that row.
  std::vector<PresenceMask> compared;
  CaseState state = CaseState::Pending;
  std::string adjudicator;
  std::string created_at;
  std::string decided_at;
  /// Set when a Unique decision enrolled the probe.
  std::optional<GalleryId> enrolled_id;
  /// Set when a Duplicate decision linked the probe to its top candidate.
  std::optional<GalleryId> linked_id;
};

struct EnrollOutcome {
  enum class Kind { Enrolled, Flagged, Rejected };
  Kind kind = Kind::Rejected;
  GalleryId gallery_id = 0;
  std::uint64_t case_id = 0;
  std::string reason;
  std::vector<PipelineException> exceptions;
  CandidateList candidates;
};
std::string_view to_string(EnrollOutcome::Kind k) noexcept;

struct VerifyOutcome {
  FusedScore score;
  Decision decision = Decision::Unique;
};

struct CasePage {
  std::vector<AdjudicationCase> cases;
  std::optional<std::string> next_cursor;
};

struct ServiceStats {
  std::size_t gallery_size = 0;
  std::size_t shard_count = 0;
  std::size_t pending_cases = 0;
  std::uint64_t enrolls = 0;
  std::uint64_t enrolled = 0;
  std::uint64_t flagged = 0;
  std::uint64_t rejected = 0;
  std::uint64_t searches = 0;
  std::uint64_t verifies = 0;
  std::uint64_t decisions = 0;
  std::uint64_t probes_searched = 0;
  double search_seconds = 0.0;
};

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  /// Loaded at start when present; snapshots are written here.
  std::filesystem::path gallery_path;
  /// cases.jsonl, audit.jsonl and exceptions.jsonl live here; empty keeps
  /// state in memory only.
  std::filesystem::path state_dir;
  /// Static assets served under /ui/ when set.
  std::filesystem::path ui_dir;
  FusionWeights weights = default_weights();
  double adjudication_threshold = 0.2;
  double verification_threshold = 0.2;
  std::size_t shard_size = Gallery::kDefaultShardSize;
  std::size_t max_rows = Gallery::kUnbounded;
  /// Candidates kept on a case and returned by default from search.
  std::size_t candidate_k = 10;
  std::size_t search_threads = 4;
  /// Gallery snapshot after this many committed insertions (0 = only on stop).
  std::size_t snapshot_every = 1000;
  std::size_t max_page_size = 100;
};

/// Threshold at which `flag_rate` of the given non-mated probes would be
/// flagged against `gallery`.
double calibrate_adjudication_threshold(const Gallery& gallery, std::span<const MultiBiometricTemplate> nonmated,
                                        const FusionWeights& weights, double flag_rate = 1e-3,
                                        std::size_t threads = 4);

/// De-duplication service. Writers (enroll, adjudicate) are serialized by one
/// writer mutex, so an enrollment's search always sees every earlier commit;
/// readers (verify, search, listings) run concurrently against committed rows.
class DedupService {
 public:
  DedupService(ServiceConfig config, PipelineStages stages);
  DedupService(ServiceConfig config, PipelineStages stages, Gallery gallery);
  ~DedupService();

  DedupService(const DedupService&) = delete;
  DedupService& operator=(const DedupService&) = delete;

  EnrollOutcome enroll(const EnrollmentPacket& packet);
  VerifyOutcome verify(GalleryId id, const MultiBiometricTemplate& probe);
  CandidateList search(const MultiBiometricTemplate& probe, std::size_t k);
  AdjudicationCase adjudicate(std::uint64_t case_id, CaseState decision, const std::string& adjudicator);
  AdjudicationCase get_case(std::uint64_t case_id) const;
  CasePage list_cases(std::optional<CaseState> filter, std::string_view cursor, std::size_t page_size) const;
  ServiceStats stats() const;
  std::size_t gallery_size() const;
  bool gallery_contains(GalleryId id) const;

  /// Audit records as JSON lines, oldest first.
  std::vector<std::string> audit_records() const;

  /// Writes the gallery file (no-op without gallery_path).
  void snapshot();

  const ServiceConfig& config() const noexcept { return config_; }
  void set_adjudication_threshold(double tau);

 private:
  GalleryId commit(const MultiBiometricTemplate& probe);
  void persist_case(const AdjudicationCase& c);
  void replay_cases();

  ServiceConfig config_;
  PipelineStages stages_;

  mutable std::shared_mutex gallery_mu_;
  Gallery gallery_;
  std::mutex writer_mu_;
  std::atomic<std::size_t> commits_since_snapshot_{0};

  mutable std::mutex cases_mu_;
  std::map<std::uint64_t, AdjudicationCase> cases_;
  std::uint64_t next_case_id_ = 1;
  std::vector<std::string> audit_;

  std::atomic<std::uint64_t> enrolls_{0}, enrolled_{0}, flagged_{0}, rejected_{0};
  std::atomic<std::uint64_t> searches_{0}, verifies_{0}, decisions_{0}, probes_searched_{0};
  std::atomic<std::uint64_t> search_nanos_{0};
};

/// Client view of a case: ids, scores and presence/quality only.
std::string case_to_json(const AdjudicationCase& c);

/// HTTP/JSON front end for DedupService.
class HttpServer {
 public:
  explicit HttpServer(DedupService& service);
  ~HttpServer();

  /// Binds and starts serving on a background thread. port 0 picks a free
  /// port. Throws Io when the address cannot be bound.
  int start(const std::string& host, int port);
  /// Blocks the caller until stop().
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace abis
