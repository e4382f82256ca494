#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "abis/fusion.hpp"
#include "abis/index.hpp"
#include "abis/synth.hpp"

namespace abis {

struct IdentificationResult {
  std::size_t probe = 0;
  CandidateList candidates;
  /// Set for mated probes only.
  std::optional<GalleryId> mate;
};

/// Exact count arithmetic: rate = count / total.
struct RateCount {
  double rate = 0.0;
  std::uint64_t count = 0;
  std::uint64_t total = 0;
};

struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

/// Clopper-Pearson interval. total == 0 gives [0, 1].
Interval binomial_interval(std::uint64_t count, std::uint64_t total, double confidence = 0.95);

inline constexpr std::size_t kDefaultCandidateCount = 50;

/// False positive iff the top fused score >= tau. Throws Argument on empty input.
RateCount compute_fpir(std::span<const IdentificationResult> nonmated, double tau);

/// False negative iff the mate is not among the first k candidates with
/// score >= tau. Throws Argument on empty input or a missing mate label.
RateCount compute_fnir(std::span<const IdentificationResult> mated, double tau,
                       std::size_t k = kDefaultCandidateCount);

/// Rank-1 variant: the mate must be the first candidate, at or above tau.
RateCount compute_fnir_rank1(std::span<const IdentificationResult> mated, double tau);

struct DetPoint {
  double threshold = 0.0;
  double fpir = 0.0;
  double fnir = 0.0;
  std::uint64_t n_fp = 0;
  std::uint64_t n_nonmated = 0;
  std::uint64_t n_fn = 0;
  std::uint64_t n_mated = 0;
};

std::vector<DetPoint> det_curve(std::span<const IdentificationResult> mated,
                                std::span<const IdentificationResult> nonmated, std::span<const double> thresholds,
                                std::size_t k = kDefaultCandidateCount);

/// Ascending unique scores at which the DET staircase can change.
std::vector<double> det_thresholds(std::span<const IdentificationResult> mated,
                                   std::span<const IdentificationResult> nonmated,
                                   std::size_t k = kDefaultCandidateCount);

/// Smallest threshold t with #(scores >= t) <= floor(rate * n). Reads the
/// empirical order statistic; no parametric fit.
double threshold_at_rate(std::span<const double> scores, double rate);

struct OperatingPoint {
  double target_fpir = 0.0;
  double threshold = 0.0;
  RateCount fpir;
  RateCount fnir;
  RateCount fnir_rank1;
  Interval fpir_ci;
  Interval fnir_ci;
  Interval fnir_rank1_ci;
};

OperatingPoint operating_point_at_fpir(std::span<const IdentificationResult> mated,
                                       std::span<const IdentificationResult> nonmated, double target_fpir,
                                       std::size_t k = kDefaultCandidateCount);

/// Metrics at a fixed threshold, with intervals.
OperatingPoint operating_point_at_threshold(std::span<const IdentificationResult> mated,
                                            std::span<const IdentificationResult> nonmated, double tau,
                                            std::size_t k = kDefaultCandidateCount);

struct TmrAtFmr {
  double tmr = 0.0;
  double threshold = 0.0;
};

/// threshold = smallest t with empirical FMR <= fmr_target; tmr = share of
/// mated scores >= t. Throws Resolution when there are fewer than
/// 10 / fmr_target non-mated scores, Argument on empty input or a bad target.
TmrAtFmr tmr_at_fmr(std::span<const float> mated, std::span<const float> nonmated, double fmr_target);

// ---------------------------------------------------------------------------
// Experiments

struct ProbeInputs {
  std::span<const MultiBiometricTemplate> mated;
  std::span<const GalleryId> mate_ids;
  std::span<const MultiBiometricTemplate> nonmated;
};

struct EvalResults {
  std::vector<IdentificationResult> mated;
  std::vector<IdentificationResult> nonmated;
};

EvalResults evaluate(const Gallery& gallery, const ProbeInputs& probes, const FusionWeights& weights,
                     const SearchOptions& options);

struct Subset {
  std::string name;
  PresenceMask mask;
};

/// face, iris, finger, irides, fingers, face+irides, face+fingers,
/// fingers+irides, all.
std::vector<Subset> default_subsets();

struct CombinationRow {
  std::string subset;
  OperatingPoint op;
};

/// Per subset: default weights zeroed outside the subset, then FNIR read at
/// target_fpir. One scan serves all subsets. Throws Argument on an empty subset.
std::vector<CombinationRow> combination_study(const Gallery& gallery, const ProbeInputs& probes,
                                              std::span<const Subset> subsets, const SearchOptions& options,
                                              double target_fpir = 1e-3, const FusionWeights& base = default_weights());

struct SweepSpec {
  std::vector<std::size_t> sizes;
  double tau = 0.0;
  SynthConfig config;
  std::uint64_t seed = 1;
  /// Mated probes come from the first sizes.front() identities.
  std::size_t n_mated = 1000;
  std::size_t n_nonmated = 2000;
  FusionWeights weights = default_weights();
  SearchOptions options;
  std::size_t shard_size = Gallery::kDefaultShardSize;
};

struct SweepRow {
  std::size_t n = 0;
  OperatingPoint op;
};

/// Nested synthetic galleries, the same probe sets for every size, metrics
/// at the fixed tau. Sizes are sorted ascending; zero sizes throw Argument.
std::vector<SweepRow> gallery_size_sweep(const SweepSpec& spec);

// ---------------------------------------------------------------------------
// Reports. Numbers use "{:.9g}"; column order is fixed.

std::string det_to_csv(std::span<const DetPoint> points);
std::string det_to_json(std::span<const DetPoint> points);
std::string combination_to_csv(std::span<const CombinationRow> rows);
std::string combination_to_json(std::span<const CombinationRow> rows);
std::string sweep_to_csv(std::span<const SweepRow> rows);
std::string sweep_to_json(std::span<const SweepRow> rows);
std::string operating_point_to_json(const OperatingPoint& op);

enum class ReportFormat { Csv, Json };

/// Writes `content`; throws Io on an unwritable path.
void emit_report(std::string_view content, const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  std::string tool_version;
  std::uint64_t seed = 0;
  std::string config_sha256;
  std::vector<std::pair<std::string, std::string>> parameters;
  std::vector<std::pair<std::string, std::string>> input_checksums;
  std::vector<std::pair<std::string, std::string>> output_checksums;
  std::vector<std::pair<std::string, double>> timings_seconds;
};

std::string manifest_to_json(const RunManifest& m);

}  // namespace abis
