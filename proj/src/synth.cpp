#include "abis/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "abis/detail/parallel.hpp"
#include "abis/error.hpp"
#include "abis/eval.hpp"
#include "abis/kernels/kernels.hpp"
#include "abis/util.hpp"

namespace abis {

double SynthConfig::kappa(Modality m) const noexcept {
  switch (m) {
    case Modality::Finger: return kappa_finger;
    case Modality::Face: return kappa_face;
    case Modality::Iris: return kappa_iris;
  }
  return 0.0;
}

OperatingTarget SynthConfig::target(Modality m) const noexcept {
  switch (m) {
    case Modality::Finger: return finger_target;
    case Modality::Face: return face_target;
    case Modality::Iris: return iris_target;
  }
  return face_target;
}

SynthConfig default_synth_config() {
  SynthConfig c;
  c.kappa_finger = 246.15102800661714;
  c.kappa_face = 2109.1032470041973;
  c.kappa_iris = 413.09249303009204;
  return c;
}

namespace {

// Stream tags: traits, per-segment latents, per-(observation, segment) noise.
constexpr std::uint64_t kTraitsTag = 0;
constexpr std::uint64_t latent_tag(std::size_t segment) { return 0x100 + segment; }
constexpr std::uint64_t observation_tag(std::uint64_t obs, std::size_t segment) {
  return ((obs + 2) << 8) + segment;
}

constexpr std::uint64_t kProbeSelectionKey = 0x5E1EC7ull;

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) raise(ErrorCode::Argument, fmt::format("{} must lie in [0, 1]", name));
}

void validate(const SynthConfig& c) {
  const auto& q = c.quality;
  check_probability(c.missing_finger_rate, "missing_finger_rate");
  check_probability(c.missing_face_rate, "missing_face_rate");
  check_probability(c.missing_iris_rate, "missing_iris_rate");
  check_probability(q.joint_face_finger + q.joint_face_iris + q.joint_finger_iris, "sum of joint degradation rates");
  check_probability(q.joint_face_finger, "joint_face_finger");
  check_probability(q.joint_face_iris, "joint_face_iris");
  check_probability(q.joint_finger_iris, "joint_finger_iris");
  check_probability(q.degraded_finger, "degraded_finger");
  check_probability(q.degraded_face, "degraded_face");
  check_probability(q.degraded_iris, "degraded_iris");
  check_probability(q.floor_finger, "floor_finger");
  check_probability(q.floor_face, "floor_face");
  check_probability(q.floor_iris, "floor_iris");
  check_probability(q.finger_correlation, "finger_correlation");
  check_probability(q.iris_correlation, "iris_correlation");
  if (!(q.degraded_lo >= 0.0 && q.degraded_lo <= q.degraded_hi && q.degraded_hi <= 1.0)) {
    raise(ErrorCode::Argument, "need 0 <= degraded_lo <= degraded_hi <= 1");
  }
  if (!(q.jitter >= 0.0)) raise(ErrorCode::Argument, "jitter must be non-negative");
  for (double k : {c.kappa_finger, c.kappa_face, c.kappa_iris}) {
    if (!(k >= 0.0)) raise(ErrorCode::Argument, "kappa must be non-negative");
  }
}

double kappa_for(const SynthConfig& c, std::size_t segment) {
  const double k = c.kappa(segment_layout()[segment].modality());
  if (!(k > 0.0)) {
    raise(ErrorCode::Argument, fmt::format("no noise concentration configured for {}", segment_name(segment)));
  }
  return k;
}

std::vector<float> latent_segment(std::uint64_t seed, std::uint64_t identity, std::size_t segment) {
  auto rng = stream(seed, identity, latent_tag(segment));
  return sample_unit(segment_layout()[segment].length, rng);
}

// Observation `obs` of one segment under the keyed streams.
std::pair<std::vector<float>, double> observe_segment(const SynthConfig& c, std::uint64_t seed, std::uint64_t identity,
                                                      std::uint64_t obs, std::size_t segment,
                                                      std::span<const float> latent, double base_quality) {
  auto rng = stream(seed, identity, observation_tag(obs, segment));
  const double q = jitter_quality(base_quality, c.quality.jitter, rng);
  return {perturb(latent, kappa_for(c, segment), q, rng), q};
}

MultiBiometricTemplate keyed_observation(const SynthConfig& c, std::uint64_t seed, std::uint64_t identity,
                                         std::uint64_t obs, std::uint64_t subject_id) {
  auto traits_rng = stream(seed, identity, kTraitsTag);
  const IdentityTraits traits = sample_traits(traits_rng, c);
  std::map<std::size_t, std::vector<float>> segments;
  std::map<std::size_t, float> quality;
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (!traits.presence.test(s)) continue;
    const auto latent = latent_segment(seed, identity, s);
    auto [v, q] = observe_segment(c, seed, identity, obs, s, latent, traits.base_quality[s]);
    segments.emplace(s, std::move(v));
    quality.emplace(s, static_cast<float>(q));
  }
  return assemble_template(segments, quality, subject_id);
}

}  // namespace

// ---------------------------------------------------------------------------
// Identity model

std::vector<float> sample_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      norm2 += x * x;
    }
  } while (norm2 <= 1e-24);
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

std::vector<float> perturb(std::span<const float> latent, double kappa, double quality, std::mt19937_64& rng) {
  if (!(kappa > 0.0) || !(quality > 0.0)) raise(ErrorCode::Argument, "perturb needs kappa > 0 and quality > 0");
  const double sigma = 1.0 / std::sqrt(kappa * quality);
  std::normal_distribution<double> normal;
  const std::size_t d = latent.size();
  std::vector<double> noise(d);
  double along = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    noise[i] = sigma * normal(rng);
    along += noise[i] * latent[i];
  }
  std::vector<double> x(d);
  double norm2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    x[i] = latent[i] + (noise[i] - along * latent[i]);  // tangent component only
    norm2 += x[i] * x[i];
  }
  const double inv = 1.0 / std::sqrt(norm2);
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(x[i] * inv);
  return out;
}

double jitter_quality(double base, double jitter, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const double z = normal(rng);
  return std::clamp(base * std::exp(jitter * z), 0.01, 1.0);
}

IdentityTraits sample_traits(std::mt19937_64& rng, const SynthConfig& c) {
  const auto& q = c.quality;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal;
  // Every draw happens unconditionally so the stream layout never depends
  // on parameter values.
  const double joint = unif(rng);
  bool deg_finger = false, deg_face = false, deg_iris = false;
  if (joint < q.joint_face_finger) {
    deg_face = deg_finger = true;
  } else if (joint < q.joint_face_finger + q.joint_face_iris) {
    deg_face = deg_iris = true;
  } else if (joint < q.joint_face_finger + q.joint_face_iris + q.joint_finger_iris) {
    deg_finger = deg_iris = true;
  }
  deg_finger = (unif(rng) < q.degraded_finger) || deg_finger;
  deg_face = (unif(rng) < q.degraded_face) || deg_face;
  deg_iris = (unif(rng) < q.degraded_iris) || deg_iris;

  auto level = [&](double u, bool degraded, double floor) {
    return degraded ? q.degraded_lo + (q.degraded_hi - q.degraded_lo) * u : floor + (1.0 - floor) * u;
  };

  IdentityTraits t;
  const double zf = normal(rng);
  for (std::size_t f = 0; f < kFingerCount; ++f) {
    const double x = std::sqrt(q.finger_correlation) * zf + std::sqrt(1.0 - q.finger_correlation) * normal(rng);
    t.base_quality[f] = static_cast<float>(level(phi(x), deg_finger, q.floor_finger));
  }
  t.base_quality[kFaceSegment] = static_cast<float>(level(phi(normal(rng)), deg_face, q.floor_face));
  const double zi = normal(rng);
  for (std::size_t s : {kIrisLeftSegment, kIrisRightSegment}) {
    const double x = std::sqrt(q.iris_correlation) * zi + std::sqrt(1.0 - q.iris_correlation) * normal(rng);
    t.base_quality[s] = static_cast<float>(level(phi(x), deg_iris, q.floor_iris));
  }

  t.presence.set();
  for (std::size_t f = 0; f < kFingerCount; ++f) {
    if (unif(rng) < c.missing_finger_rate) t.presence.reset(f);
  }
  if (unif(rng) < c.missing_face_rate) t.presence.reset(kFaceSegment);
  if (unif(rng) < c.missing_iris_rate) {
    t.presence.reset(kIrisLeftSegment);
    t.presence.reset(kIrisRightSegment);
  }
  if (t.presence.none()) t.presence.set(kFaceSegment);
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (!t.presence.test(s)) t.base_quality[s] = 0.0f;
  }
  return t;
}

SyntheticIdentityModel sample_identity(std::mt19937_64& rng, const SynthConfig& config) {
  validate(config);
  SyntheticIdentityModel m;
  const IdentityTraits t = sample_traits(rng, config);
  m.base_quality = t.base_quality;
  m.presence = t.presence;
  m.latent.resize(kTemplateDim);
  for (const auto& seg : segment_layout()) {
    const auto u = sample_unit(seg.length, rng);
    std::copy(u.begin(), u.end(), m.latent.begin() + static_cast<std::ptrdiff_t>(seg.offset));
  }
  return m;
}

MultiBiometricTemplate sample_observation(const SyntheticIdentityModel& identity, std::mt19937_64& rng,
                                          const SynthConfig& config, std::optional<double> quality_draw) {
  if (quality_draw && !(*quality_draw > 0.0 && *quality_draw <= 1.0)) {
    raise(ErrorCode::Argument, "quality_draw must lie in (0, 1]");
  }
  std::map<std::size_t, std::vector<float>> segments;
  std::map<std::size_t, float> quality;
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (!identity.presence.test(s)) continue;
    const auto& seg = segment_layout()[s];
    const std::span<const float> latent(identity.latent.data() + seg.offset, seg.length);
    const double q = quality_draw ? *quality_draw
                                  : jitter_quality(identity.base_quality[s], config.quality.jitter, rng);
    segments.emplace(s, perturb(latent, kappa_for(config, s), q, rng));
    quality.emplace(s, static_cast<float>(q));
  }
  return assemble_template(segments, quality, 0);
}

// ---------------------------------------------------------------------------
// Calibration

QualityPairSampler quality_pair_sampler(const SynthConfig& config, std::size_t segment) {
  if (segment >= kSegmentCount) raise(ErrorCode::Argument, "segment out of range");
  validate(config);
  SynthConfig c = config;
  // Presence does not matter for the quality distribution.
  c.missing_finger_rate = c.missing_face_rate = c.missing_iris_rate = 0.0;
  return [c, segment](std::mt19937_64& rng) {
    const IdentityTraits t = sample_traits(rng, c);
    const double base = t.base_quality[segment];
    const double q1 = jitter_quality(base, c.quality.jitter, rng);
    const double q2 = jitter_quality(base, c.quality.jitter, rng);
    return std::pair{q1, q2};
  };
}

namespace {

// Cosines of all pairs between two disjoint sets of uniform unit vectors.
std::vector<float> nonmated_cosines(std::size_t dim, std::size_t side, std::mt19937_64& rng) {
  std::vector<float> a(side * dim), b(side * dim);
  for (std::size_t i = 0; i < side; ++i) {
    auto u = sample_unit(dim, rng);
    std::copy(u.begin(), u.end(), a.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  for (std::size_t i = 0; i < side; ++i) {
    auto u = sample_unit(dim, rng);
    std::copy(u.begin(), u.end(), b.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  std::vector<float> c(side * side, 0.0f);
  kernels::active().gemm_nt(a.data(), dim, side, b.data(), dim, side, dim, c.data(), side);
  return c;
}

// Sufficient statistics of one mated pair under the tangent-noise model:
// |g1|^2, |g2|^2 and g1.g2 for unit-variance tangent noise g1, g2.
struct PairStats {
  double a, b, p, q1, q2;
};

double mated_cosine(const PairStats& s, double kappa) {
  const double k1 = kappa * s.q1, k2 = kappa * s.q2;
  return (1.0 + s.p / std::sqrt(k1 * k2)) / std::sqrt((1.0 + s.a / k1) * (1.0 + s.b / k2));
}

double tmr_for(std::span<const PairStats> pairs, double kappa, double threshold) {
  std::size_t hits = 0;
  for (const auto& s : pairs) hits += mated_cosine(s, kappa) >= threshold ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace

CalibrationResult calibrate_noise(std::size_t dim, OperatingTarget target, std::mt19937_64& rng,
                                  const QualityPairSampler& sampler, const CalibrationOptions& options) {
  if (dim < 3) raise(ErrorCode::Argument, "dimension must be at least 3");
  if (!(target.fmr > 0.0 && target.fmr < target.tmr && target.tmr <= 1.0)) {
    raise(ErrorCode::Argument, "calibration needs 0 < fmr < tmr <= 1");
  }
  if (options.n_mated == 0 || !(options.kappa_lo > 0.0 && options.kappa_lo < options.kappa_hi)) {
    raise(ErrorCode::Argument, "invalid calibration options");
  }
  const auto nonmated = nonmated_cosines(dim, options.nonmated_side, rng);
  // Non-mated observations are uniform on the sphere whatever kappa is, so
  // the threshold is fixed before the search.
  const std::vector<float> none{1.0f};
  const double threshold = tmr_at_fmr(none, nonmated, target.fmr).threshold;

  std::chi_squared_distribution<double> chi_tangent(static_cast<double>(dim - 1));
  std::chi_squared_distribution<double> chi_rest(static_cast<double>(dim - 2));
  std::normal_distribution<double> normal;
  std::vector<PairStats> pairs(options.n_mated);
  for (auto& s : pairs) {
    s.a = chi_tangent(rng);
    s.b = chi_tangent(rng);
    // Cosine between two independent tangent directions in dim-1 dimensions.
    const double z = normal(rng);
    const double t = z / std::sqrt(z * z + chi_rest(rng));
    s.p = std::sqrt(s.a * s.b) * t;
    if (sampler) {
      std::tie(s.q1, s.q2) = sampler(rng);
    } else {
      s.q1 = s.q2 = 1.0;
    }
  }

  double lo = options.kappa_lo, hi = options.kappa_hi;
  const double tmr_hi = tmr_for(pairs, hi, threshold);
  auto fail = [&](double kappa, double tmr) {
    raise(ErrorCode::CalibrationFailure,
          fmt::format("target TMR {:.6g} at FMR {:.3g} is unreachable; best achieved TMR {:.6g} at kappa {:.6g}",
                      target.tmr, target.fmr, tmr, kappa));
  };
  if (target.tmr >= 1.0 || tmr_hi < target.tmr) fail(hi, tmr_hi);
  if (tmr_for(pairs, lo, threshold) >= target.tmr) fail(lo, tmr_for(pairs, lo, threshold));
  for (std::size_t it = 0; it < options.iterations; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (tmr_for(pairs, mid, threshold) >= target.tmr) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  CalibrationResult r;
  r.kappa = hi;
  r.threshold = threshold;
  r.achieved_tmr = tmr_for(pairs, hi, threshold);
  r.n_mated = pairs.size();
  r.n_nonmated = nonmated.size();
  return r;
}

SynthConfig calibrate_config(const SynthConfig& config, std::uint64_t seed, const CalibrationOptions& options) {
  SynthConfig out = config;
  struct Job {
    std::size_t segment;
    double* kappa;
  };
  const Job jobs[] = {{kFaceSegment, &out.kappa_face},
                      {kIrisLeftSegment, &out.kappa_iris},
                      {finger_segment(7), &out.kappa_finger}};
  for (const auto& job : jobs) {
    const auto& seg = segment_layout()[job.segment];
    auto rng = stream(seed, 0xCA11B, job.segment);
    *job.kappa = calibrate_noise(seg.length, config.target(seg.modality()), rng,
                                 quality_pair_sampler(config, job.segment), options)
                     .kappa;
  }
  return out;
}

VerificationResult verify_segment(const SynthConfig& config, std::size_t segment, double fmr, std::uint64_t seed,
                                  std::size_t n_mated, std::size_t nonmated_side, std::size_t threads) {
  if (segment >= kSegmentCount) raise(ErrorCode::Argument, "segment out of range");
  validate(config);
  SynthConfig c = config;
  c.missing_finger_rate = c.missing_face_rate = c.missing_iris_rate = 0.0;
  const std::size_t dim = segment_layout()[segment].length;

  std::vector<float> mated(n_mated);
  constexpr std::size_t kChunk = 1024;
  detail::parallel_for((n_mated + kChunk - 1) / kChunk, threads, [&](std::size_t chunk) {
    const auto dot = kernels::active().dot;
    for (std::size_t i = chunk * kChunk; i < std::min(n_mated, (chunk + 1) * kChunk); ++i) {
      auto traits_rng = stream(seed, i, kTraitsTag);
      const IdentityTraits t = sample_traits(traits_rng, c);
      const auto latent = latent_segment(seed, i, segment);
      const auto first = observe_segment(c, seed, i, 0, segment, latent, t.base_quality[segment]).first;
      const auto second = observe_segment(c, seed, i, 1, segment, latent, t.base_quality[segment]).first;
      mated[i] = dot(first.data(), second.data(), dim);
    }
  });

  // Two disjoint identity sets; every cross pair is a non-mated comparison.
  std::vector<float> a(nonmated_side * dim), b(nonmated_side * dim);
  detail::parallel_for(2 * nonmated_side, threads, [&](std::size_t j) {
    const std::uint64_t identity = n_mated + j;
    auto traits_rng = stream(seed, identity, kTraitsTag);
    const IdentityTraits t = sample_traits(traits_rng, c);
    const auto latent = latent_segment(seed, identity, segment);
    const auto v = observe_segment(c, seed, identity, 0, segment, latent, t.base_quality[segment]).first;
    float* dst = j < nonmated_side ? a.data() + j * dim : b.data() + (j - nonmated_side) * dim;
    std::copy(v.begin(), v.end(), dst);
  });
  std::vector<float> nonmated(nonmated_side * nonmated_side, 0.0f);
  kernels::active().gemm_nt(a.data(), dim, nonmated_side, b.data(), dim, nonmated_side, dim, nonmated.data(),
                            nonmated_side);

  const auto r = tmr_at_fmr(mated, nonmated, fmr);
  return {r.tmr, r.threshold, mated.size(), nonmated.size()};
}

// ---------------------------------------------------------------------------
// Galleries and probes

MultiBiometricTemplate gallery_observation(const SynthConfig& config, std::uint64_t seed, std::uint64_t identity) {
  return keyed_observation(config, seed, identity, 0, identity + 1);
}

MultiBiometricTemplate probe_observation(const SynthConfig& config, std::uint64_t seed, std::uint64_t identity,
                                         std::uint64_t observation) {
  if (observation == 0) raise(ErrorCode::Argument, "observation 0 is the enrolled capture");
  return keyed_observation(config, seed, identity, observation, 0);
}

void extend_gallery(Gallery& gallery, std::vector<RegistryEntry>& registry, std::uint64_t first, std::size_t n,
                    const SynthConfig& config, std::uint64_t seed, std::size_t threads) {
  validate(config);
  constexpr std::size_t kBatch = 2048;
  std::vector<std::optional<MultiBiometricTemplate>> batch;
  for (std::size_t done = 0; done < n; done += kBatch) {
    const std::size_t m = std::min(kBatch, n - done);
    batch.assign(m, std::nullopt);
    detail::parallel_for(m, threads, [&](std::size_t i) {
      batch[i].emplace(gallery_observation(config, seed, first + done + i));
    });
    for (std::size_t i = 0; i < m; ++i) {
      const GalleryId id = gallery.insert(*batch[i]);
      registry.push_back({id, first + done + i});
    }
  }
}

GeneratedGallery generate_gallery(std::size_t n, const SynthConfig& config, std::uint64_t seed,
                                  std::size_t shard_size, std::size_t threads) {
  if (n == 0) raise(ErrorCode::Argument, "gallery size must be at least 1");
  GeneratedGallery g{Gallery(shard_size), {}};
  g.registry.reserve(n);
  extend_gallery(g.gallery, g.registry, 0, n, config, seed, threads);
  return g;
}

ProbeSets generate_probe_sets(std::span<const RegistryEntry> registry, std::size_t n_mated,
                              std::size_t n_nonmated, const SynthConfig& config, std::uint64_t seed,
                              std::size_t threads) {
  if (n_mated > registry.size()) {
    raise(ErrorCode::Argument, fmt::format("{} mated probes requested from a registry of {}", n_mated,
                                           registry.size()));
  }
  validate(config);
  // Partial Fisher-Yates: the first n_mated positions are a uniform sample.
  std::vector<std::size_t> order(registry.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = stream(seed, kProbeSelectionKey);
  for (std::size_t i = 0; i < n_mated; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
    std::swap(order[i], order[pick(rng)]);
  }

  ProbeSets p;
  std::vector<std::optional<MultiBiometricTemplate>> mated(n_mated), nonmated(n_nonmated);
  p.mate_ids.resize(n_mated);
  p.mated_identities.resize(n_mated);
  for (std::size_t i = 0; i < n_mated; ++i) {
    p.mate_ids[i] = registry[order[i]].gallery_id;
    p.mated_identities[i] = registry[order[i]].identity;
  }
  p.nonmated_identities.resize(n_nonmated);
  for (std::size_t j = 0; j < n_nonmated; ++j) p.nonmated_identities[j] = kNonMatedIdentityOffset + j;

  detail::parallel_for(n_mated + n_nonmated, threads, [&](std::size_t i) {
    if (i < n_mated) {
      mated[i].emplace(probe_observation(config, seed, p.mated_identities[i]));
    } else {
      nonmated[i - n_mated].emplace(probe_observation(config, seed, p.nonmated_identities[i - n_mated]));
    }
  });
  p.mated.reserve(n_mated);
  for (auto& t : mated) p.mated.push_back(std::move(*t));
  p.nonmated.reserve(n_nonmated);
  for (auto& t : nonmated) p.nonmated.push_back(std::move(*t));
  return p;
}

std::string registry_to_jsonl(std::span<const RegistryEntry> registry) {
  std::string out;
  for (const auto& e : registry) out += fmt::format("{{\"gallery_id\":{},\"identity\":{}}}\n", e.gallery_id, e.identity);
  return out;
}

std::vector<RegistryEntry> parse_registry_jsonl(std::string_view text) {
  std::vector<RegistryEntry> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("gallery_id").get<GalleryId>(), j.at("identity").get<std::uint64_t>()});
    } catch (const nlohmann::json::exception& e) {
      raise(ErrorCode::Format, fmt::format("registry line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

std::string probe_labels_to_jsonl(std::span<const GalleryId> mate_ids, std::span<const std::uint64_t> identities) {
  std::string out;
  for (std::size_t i = 0; i < identities.size(); ++i) {
    if (i < mate_ids.size()) {
      out += fmt::format("{{\"probe\":{},\"mate_id\":{},\"identity\":{}}}\n", i, mate_ids[i], identities[i]);
    } else {
      out += fmt::format("{{\"probe\":{},\"mate_id\":null,\"identity\":{}}}\n", i, identities[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config files

namespace {

template <typename Json>
void read_number(const Json& j, const char* key, double& out) {
  if (j.contains(key)) {
    if (!j.at(key).is_number()) raise(ErrorCode::Argument, fmt::format("config key {} must be a number", key));
    out = j.at(key).template get<double>();
  }
}

}  // namespace

SynthConfig parse_synth_config(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Argument, std::string("generator config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) raise(ErrorCode::Argument, "generator config must be a JSON object");
  SynthConfig c = default_synth_config();
  read_number(j, "missing_finger_rate", c.missing_finger_rate);
  read_number(j, "missing_face_rate", c.missing_face_rate);
  read_number(j, "missing_iris_rate", c.missing_iris_rate);
  read_number(j, "kappa_finger", c.kappa_finger);
  read_number(j, "kappa_face", c.kappa_face);
  read_number(j, "kappa_iris", c.kappa_iris);
  if (j.contains("targets")) {
    const auto& t = j.at("targets");
    for (auto [key, target] : {std::pair{"finger", &c.finger_target}, std::pair{"face", &c.face_target},
                               std::pair{"iris", &c.iris_target}}) {
      if (t.contains(key)) {
        read_number(t.at(key), "tmr", target->tmr);
        read_number(t.at(key), "fmr", target->fmr);
      }
    }
  }
  if (j.contains("quality")) {
    const auto& q = j.at("quality");
    auto& m = c.quality;
    read_number(q, "joint_face_finger", m.joint_face_finger);
    read_number(q, "joint_face_iris", m.joint_face_iris);
    read_number(q, "joint_finger_iris", m.joint_finger_iris);
    read_number(q, "degraded_finger", m.degraded_finger);
    read_number(q, "degraded_face", m.degraded_face);
    read_number(q, "degraded_iris", m.degraded_iris);
    read_number(q, "floor_finger", m.floor_finger);
    read_number(q, "floor_face", m.floor_face);
    read_number(q, "floor_iris", m.floor_iris);
    read_number(q, "degraded_lo", m.degraded_lo);
    read_number(q, "degraded_hi", m.degraded_hi);
    read_number(q, "finger_correlation", m.finger_correlation);
    read_number(q, "iris_correlation", m.iris_correlation);
    read_number(q, "jitter", m.jitter);
  }
  validate(c);
  return c;
}

std::string synth_config_to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["missing_finger_rate"] = c.missing_finger_rate;
  j["missing_face_rate"] = c.missing_face_rate;
  j["missing_iris_rate"] = c.missing_iris_rate;
  j["kappa_finger"] = c.kappa_finger;
  j["kappa_face"] = c.kappa_face;
  j["kappa_iris"] = c.kappa_iris;
  j["targets"]["finger"] = {{"tmr", c.finger_target.tmr}, {"fmr", c.finger_target.fmr}};
  j["targets"]["face"] = {{"tmr", c.face_target.tmr}, {"fmr", c.face_target.fmr}};
  j["targets"]["iris"] = {{"tmr", c.iris_target.tmr}, {"fmr", c.iris_target.fmr}};
  const auto& m = c.quality;
  j["quality"] = {{"joint_face_finger", m.joint_face_finger}, {"joint_face_iris", m.joint_face_iris},
                  {"joint_finger_iris", m.joint_finger_iris}, {"degraded_finger", m.degraded_finger},
                  {"degraded_face", m.degraded_face},         {"degraded_iris", m.degraded_iris},
                  {"floor_finger", m.floor_finger},           {"floor_face", m.floor_face},
                  {"floor_iris", m.floor_iris},               {"degraded_lo", m.degraded_lo},
                  {"degraded_hi", m.degraded_hi},             {"finger_correlation", m.finger_correlation},
                  {"iris_correlation", m.iris_correlation},   {"jitter", m.jitter}};
  return j.dump(2);
}

}  // namespace abis
