#include "abis/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/binomial.hpp>
#include <fmt/format.h>

#include "abis/error.hpp"

namespace abis {
namespace {

constexpr double kNoScore = -std::numeric_limits<double>::infinity();

double top_score(const IdentificationResult& r) {
  return r.candidates.empty() ? kNoScore : r.candidates.front().score;
}

// Score of the mate if it is among the first k candidates, else -inf.
double mate_score(const IdentificationResult& r, std::size_t k) {
  if (!r.mate) raise(ErrorCode::Argument, fmt::format("mated probe {} has no mate label", r.probe));
  const std::size_t n = std::min(k, r.candidates.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (r.candidates[i].id == *r.mate) return r.candidates[i].score;
  }
  return kNoScore;
}

double rank1_mate_score(const IdentificationResult& r) {
  if (!r.mate) raise(ErrorCode::Argument, fmt::format("mated probe {} has no mate label", r.probe));
  if (!r.candidates.empty() && r.candidates.front().id == *r.mate) return r.candidates.front().score;
  return kNoScore;
}

RateCount rate(std::uint64_t count, std::uint64_t total) {
  return {static_cast<double>(count) / static_cast<double>(total), count, total};
}

// Ascending copy.
std::vector<double> sorted_scores(std::span<const IdentificationResult> results, auto&& score_of) {
  std::vector<double> s;
  s.reserve(results.size());
  for (const auto& r : results) s.push_back(score_of(r));
  std::sort(s.begin(), s.end());
  return s;
}

std::uint64_t count_at_least(const std::vector<double>& ascending, double tau) {
  return static_cast<std::uint64_t>(ascending.end() - std::lower_bound(ascending.begin(), ascending.end(), tau));
}

}  // namespace

Interval binomial_interval(std::uint64_t count, std::uint64_t total, double confidence) {
  if (total == 0) return {0.0, 1.0};
  if (count > total) raise(ErrorCode::Argument, "count exceeds total");
  using boost::math::binomial_distribution;
  const double alpha = (1.0 - confidence) / 2.0;
  const auto n = static_cast<double>(total), k = static_cast<double>(count);
  Interval ci;
  ci.lo = count == 0 ? 0.0 : binomial_distribution<>::find_lower_bound_on_p(n, k, alpha);
  ci.hi = count == total ? 1.0 : binomial_distribution<>::find_upper_bound_on_p(n, k, alpha);
  return ci;
}

RateCount compute_fpir(std::span<const IdentificationResult> nonmated, double tau) {
  if (nonmated.empty()) raise(ErrorCode::Argument, "FPIR needs at least one non-mated probe");
  std::uint64_t fp = 0;
  for (const auto& r : nonmated) fp += top_score(r) >= tau ? 1 : 0;
  return rate(fp, nonmated.size());
}

RateCount compute_fnir(std::span<const IdentificationResult> mated, double tau, std::size_t k) {
  if (mated.empty()) raise(ErrorCode::Argument, "FNIR needs at least one mated probe");
  std::uint64_t fn = 0;
  for (const auto& r : mated) fn += mate_score(r, k) >= tau ? 0 : 1;
  return rate(fn, mated.size());
}

RateCount compute_fnir_rank1(std::span<const IdentificationResult> mated, double tau) {
  if (mated.empty()) raise(ErrorCode::Argument, "FNIR needs at least one mated probe");
  std::uint64_t fn = 0;
  for (const auto& r : mated) fn += rank1_mate_score(r) >= tau ? 0 : 1;
  return rate(fn, mated.size());
}

std::vector<DetPoint> det_curve(std::span<const IdentificationResult> mated,
                                std::span<const IdentificationResult> nonmated, std::span<const double> thresholds,
                                std::size_t k) {
  if (mated.empty() || nonmated.empty()) raise(ErrorCode::Argument, "DET needs mated and non-mated probes");
  const auto top = sorted_scores(nonmated, top_score);
  const auto mates = sorted_scores(mated, [k](const IdentificationResult& r) { return mate_score(r, k); });
  std::vector<DetPoint> out;
  out.reserve(thresholds.size());
  for (const double tau : thresholds) {
    DetPoint p;
    p.threshold = tau;
    p.n_nonmated = nonmated.size();
    p.n_mated = mated.size();
    p.n_fp = count_at_least(top, tau);
    p.n_fn = p.n_mated - count_at_least(mates, tau);
    p.fpir = static_cast<double>(p.n_fp) / static_cast<double>(p.n_nonmated);
    p.fnir = static_cast<double>(p.n_fn) / static_cast<double>(p.n_mated);
    out.push_back(p);
  }
  return out;
}

std::vector<double> det_thresholds(std::span<const IdentificationResult> mated,
                                   std::span<const IdentificationResult> nonmated, std::size_t k) {
  std::vector<double> t;
  for (const auto& r : nonmated) {
    if (const double s = top_score(r); std::isfinite(s)) t.push_back(s);
  }
  for (const auto& r : mated) {
    if (const double s = mate_score(r, k); std::isfinite(s)) t.push_back(s);
  }
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

double threshold_at_rate(std::span<const double> scores, double target) {
  if (scores.empty()) raise(ErrorCode::Argument, "threshold_at_rate needs scores");
  if (!(target >= 0.0 && target <= 1.0)) raise(ErrorCode::Argument, "rate must lie in [0, 1]");
  std::vector<double> desc(scores.begin(), scores.end());
  const std::size_t n = desc.size();
  // Tolerate representation error in target * n (e.g. 0.001 * 5000).
  const auto allowed = static_cast<std::size_t>(std::floor(target * static_cast<double>(n) * (1.0 + 1e-12)));
  if (allowed >= n) return *std::min_element(desc.begin(), desc.end());
  std::nth_element(desc.begin(), desc.begin() + static_cast<std::ptrdiff_t>(allowed), desc.end(),
                   std::greater<>());
  // Just above the (allowed+1)-th largest score: at most `allowed` scores remain.
  return std::nextafter(desc[allowed], std::numeric_limits<double>::infinity());
}

OperatingPoint operating_point_at_threshold(std::span<const IdentificationResult> mated,
                                            std::span<const IdentificationResult> nonmated, double tau,
                                            std::size_t k) {
  OperatingPoint op;
  op.threshold = tau;
  op.fpir = compute_fpir(nonmated, tau);
  op.fnir = compute_fnir(mated, tau, k);
  op.fnir_rank1 = compute_fnir_rank1(mated, tau);
  op.fpir_ci = binomial_interval(op.fpir.count, op.fpir.total);
  op.fnir_ci = binomial_interval(op.fnir.count, op.fnir.total);
  op.fnir_rank1_ci = binomial_interval(op.fnir_rank1.count, op.fnir_rank1.total);
  op.target_fpir = op.fpir.rate;
  return op;
}

OperatingPoint operating_point_at_fpir(std::span<const IdentificationResult> mated,
                                       std::span<const IdentificationResult> nonmated, double target_fpir,
                                       std::size_t k) {
  if (nonmated.empty()) raise(ErrorCode::Argument, "operating point needs non-mated probes");
  std::vector<double> top;
  top.reserve(nonmated.size());
  for (const auto& r : nonmated) top.push_back(top_score(r));
  const double tau = threshold_at_rate(top, target_fpir);
  OperatingPoint op = operating_point_at_threshold(mated, nonmated, tau, k);
  op.target_fpir = target_fpir;
  return op;
}

TmrAtFmr tmr_at_fmr(std::span<const float> mated, std::span<const float> nonmated, double fmr_target) {
  if (mated.empty() || nonmated.empty()) raise(ErrorCode::Argument, "tmr_at_fmr needs mated and non-mated scores");
  if (!(fmr_target > 0.0 && fmr_target < 1.0)) raise(ErrorCode::Argument, "fmr target must lie in (0, 1)");
  const double needed = std::ceil(10.0 / fmr_target - 1e-9);
  if (static_cast<double>(nonmated.size()) < needed) {
    raise(ErrorCode::Resolution, fmt::format("{} non-mated scores cannot resolve FMR {:.3g}; need at least {:.0f}",
                                             nonmated.size(), fmr_target, needed));
  }
  const std::vector<double> nm(nonmated.begin(), nonmated.end());
  TmrAtFmr r;
  r.threshold = threshold_at_rate(nm, fmr_target);
  std::size_t hits = 0;
  for (const float s : mated) hits += static_cast<double>(s) >= r.threshold ? 1 : 0;
  r.tmr = static_cast<double>(hits) / static_cast<double>(mated.size());
  return r;
}

// ---------------------------------------------------------------------------
// Experiments

namespace {

std::vector<IdentificationResult> to_results(std::vector<CandidateList>&& lists,
                                             std::span<const GalleryId> mates) {
  std::vector<IdentificationResult> out(lists.size());
  for (std::size_t i = 0; i < lists.size(); ++i) {
    out[i].probe = i;
    out[i].candidates = std::move(lists[i]);
    if (!mates.empty()) out[i].mate = mates[i];
  }
  return out;
}

void check_probe_inputs(const ProbeInputs& p) {
  if (p.mated.size() != p.mate_ids.size()) raise(ErrorCode::Argument, "every mated probe needs a mate id");
  if (p.mated.empty() || p.nonmated.empty()) raise(ErrorCode::Argument, "need mated and non-mated probes");
}

}  // namespace

EvalResults evaluate(const Gallery& gallery, const ProbeInputs& probes, const FusionWeights& weights,
                     const SearchOptions& options) {
  check_probe_inputs(probes);
  EvalResults r;
  r.mated = to_results(search(gallery, probes.mated, weights, options), probes.mate_ids);
  r.nonmated = to_results(search(gallery, probes.nonmated, weights, options), {});
  return r;
}

std::vector<Subset> default_subsets() {
  return {
      {"face", parse_modality_subset("face")},
      {"iris", parse_modality_subset("iris")},
      {"finger", parse_modality_subset("finger")},
      {"irides", parse_modality_subset("irides")},
      {"fingers", parse_modality_subset("fingers")},
      {"face+irides", parse_modality_subset("face+irides")},
      {"face+fingers", parse_modality_subset("face+fingers")},
      {"fingers+irides", parse_modality_subset("fingers+irides")},
      {"all", parse_modality_subset("all")},
  };
}

std::vector<CombinationRow> combination_study(const Gallery& gallery, const ProbeInputs& probes,
                                              std::span<const Subset> subsets, const SearchOptions& options,
                                              double target_fpir, const FusionWeights& base) {
  check_probe_inputs(probes);
  if (subsets.empty()) raise(ErrorCode::Argument, "combination study needs at least one subset");
  std::vector<FusionWeights> profiles;
  for (const auto& s : subsets) {
    if (s.mask.none()) raise(ErrorCode::Argument, "subset \"" + s.name + "\" is empty");
    if (base.mass(s.mask) <= 0.0) raise(ErrorCode::Argument, "subset \"" + s.name + "\" carries no weight");
    profiles.push_back(base.restricted(s.mask, s.name));
  }
  auto mated = search_profiles(gallery, probes.mated, profiles, options);
  auto nonmated = search_profiles(gallery, probes.nonmated, profiles, options);
  std::vector<CombinationRow> rows;
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    const auto m = to_results(std::move(mated[p]), probes.mate_ids);
    const auto n = to_results(std::move(nonmated[p]), {});
    rows.push_back({subsets[p].name, operating_point_at_fpir(m, n, target_fpir, options.k)});
  }
  return rows;
}

std::vector<SweepRow> gallery_size_sweep(const SweepSpec& spec) {
  if (spec.sizes.empty()) raise(ErrorCode::Argument, "sweep needs at least one gallery size");
  std::vector<std::size_t> sizes = spec.sizes;
  std::sort(sizes.begin(), sizes.end());
  if (sizes.front() == 0) raise(ErrorCode::Argument, "gallery sizes must be positive");

  Gallery gallery(spec.shard_size);
  std::vector<RegistryEntry> registry;
  extend_gallery(gallery, registry, 0, sizes.front(), spec.config, spec.seed, spec.options.threads);
  const ProbeSets probes = generate_probe_sets(registry, spec.n_mated, spec.n_nonmated, spec.config, spec.seed,
                                               spec.options.threads);
  const ProbeInputs inputs{probes.mated, probes.mate_ids, probes.nonmated};

  std::vector<SweepRow> rows;
  for (const std::size_t n : sizes) {
    if (n > gallery.size()) {
      extend_gallery(gallery, registry, gallery.size(), n - gallery.size(), spec.config, spec.seed,
                     spec.options.threads);
    }
    const EvalResults r = evaluate(gallery, inputs, spec.weights, spec.options);
    rows.push_back({n, operating_point_at_threshold(r.mated, r.nonmated, spec.tau, spec.options.k)});
  }
  return rows;
}

}  // namespace abis
