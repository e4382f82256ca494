#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "abis/index.hpp"
#include "abis/template.hpp"

namespace abis {

/// Per-identity quality model. Each identity is either in a good state for a
/// modality, with quality floor + (1 - floor) * u, or a degraded state with
/// quality in [degraded_lo, degraded_hi]. Degradation comes from independent
/// per-modality events and from joint events hitting two modalities at once;
/// u is a Gaussian-copula uniform shared across fingers (and across irides).
struct QualityModel {
  double joint_face_finger = 0.003;
  double joint_face_iris = 0.0017;
  double joint_finger_iris = 0.0021;
  double degraded_finger = 0.0001;
  double degraded_face = 0.0136;
  double degraded_iris = 0.009;
  double floor_finger = 0.327;
  double floor_face = 0.656;
  double floor_iris = 0.278;
  double degraded_lo = 0.0445;
  double degraded_hi = 0.0673;
  /// Copula correlation between fingers of one identity.
  double finger_correlation = 0.762;
  double iris_correlation = 0.612;
  /// Per-observation log-normal jitter of the base quality.
  double jitter = 0.139;
};

struct OperatingTarget {
  double tmr;
  double fmr;
};

struct SynthConfig {
  QualityModel quality;
  /// Per-finger, per-identity probability that the finger is missing.
  double missing_finger_rate = 0.0;
  double missing_face_rate = 0.0;
  /// Probability that both irides are missing.
  double missing_iris_rate = 0.0;
  /// Angular noise concentrations; per-coordinate tangent noise has
  /// standard deviation 1 / sqrt(kappa * quality).
  double kappa_finger = 0.0;
  double kappa_face = 0.0;
  double kappa_iris = 0.0;
  OperatingTarget finger_target{0.97, 1e-4};
  OperatingTarget face_target{0.995, 1e-4};
  OperatingTarget iris_target{0.9685, 1e-4};

  double kappa(Modality m) const noexcept;
  OperatingTarget target(Modality m) const noexcept;
};

/// Concentrations calibrated for the default QualityModel (seed 1); the
/// calibration tests re-derive and re-verify them.
SynthConfig default_synth_config();

/// Reads a JSON generator config; absent keys keep their defaults.
SynthConfig parse_synth_config(std::string_view json_text);
std::string synth_config_to_json(const SynthConfig& config);

struct SyntheticIdentityModel {
  std::uint64_t identity = 0;
  std::vector<float> latent;  // kTemplateDim, unit segments (all 13 filled)
  QualityVector base_quality{};
  PresenceMask presence;
};

/// Per-identity base qualities and presence, without latent directions.
struct IdentityTraits {
  QualityVector base_quality{};
  PresenceMask presence;
};

IdentityTraits sample_traits(std::mt19937_64& rng, const SynthConfig& config);
SyntheticIdentityModel sample_identity(std::mt19937_64& rng, const SynthConfig& config);

/// Unit direction of length `dim`, uniform on the sphere.
std::vector<float> sample_unit(std::size_t dim, std::mt19937_64& rng);

/// latent + tangent Gaussian noise (per-coordinate sd 1/sqrt(kappa*q)), renormalized.
std::vector<float> perturb(std::span<const float> latent, double kappa, double quality, std::mt19937_64& rng);

/// Observation quality: base * exp(jitter * N(0,1)), clamped to [0.01, 1].
double jitter_quality(double base, double jitter, std::mt19937_64& rng);

/// One observation. `quality_draw`, when given, replaces the per-segment
/// observation quality for every present segment.
MultiBiometricTemplate sample_observation(const SyntheticIdentityModel& identity, std::mt19937_64& rng,
                                          const SynthConfig& config,
                                          std::optional<double> quality_draw = std::nullopt);

// ---------------------------------------------------------------------------
// Calibration

/// Draws (q1, q2): observation qualities of two captures of one identity.
using QualityPairSampler = std::function<std::pair<double, double>(std::mt19937_64&)>;

/// The model's sampler for one segment.
QualityPairSampler quality_pair_sampler(const SynthConfig& config, std::size_t segment);

struct CalibrationResult {
  double kappa = 0.0;
  double threshold = 0.0;
  double achieved_tmr = 0.0;
  std::size_t n_mated = 0;
  std::size_t n_nonmated = 0;
};

struct CalibrationOptions {
  std::size_t n_mated = 200'000;
  /// Non-mated pairs come from an all-pairs product of two disjoint sets.
  std::size_t nonmated_side = 1100;
  std::size_t iterations = 64;
  double kappa_lo = 1e-2;
  double kappa_hi = 1e8;
};

/// Bisection on kappa for the target TMR at the target FMR. With no sampler,
/// both captures have quality 1. Throws Argument unless 0 < fmr < tmr <= 1;
/// CalibrationFailure when the target is unreachable (including tmr == 1,
/// where kappa is not identifiable), with the best achieved point in the message.
CalibrationResult calibrate_noise(std::size_t dim, OperatingTarget target, std::mt19937_64& rng,
                                  const QualityPairSampler& sampler = {}, const CalibrationOptions& options = {});

/// Calibrates face, iris (left) and finger 7 (left index) under the config's
/// quality model and writes the three kappas into the returned config.
SynthConfig calibrate_config(const SynthConfig& config, std::uint64_t seed, const CalibrationOptions& options = {});

struct VerificationResult {
  double tmr = 0.0;
  double threshold = 0.0;
  std::size_t n_mated = 0;
  std::size_t n_nonmated = 0;
};

/// Independent check of one segment's operating point through the
/// generator itself: fresh identities, fresh observations, empirical TMR at
/// the empirical FMR threshold.
VerificationResult verify_segment(const SynthConfig& config, std::size_t segment, double fmr, std::uint64_t seed,
                                  std::size_t n_mated = 100'000, std::size_t nonmated_side = 1100,
                                  std::size_t threads = 4);

// ---------------------------------------------------------------------------
// Galleries and probes

/// Identity indices at or above this offset are never enrolled.
inline constexpr std::uint64_t kNonMatedIdentityOffset = 1ull << 40;

struct RegistryEntry {
  GalleryId gallery_id;
  std::uint64_t identity;
};

/// Gallery observation (index 0) of identity i has gallery id i + 1.
MultiBiometricTemplate gallery_observation(const SynthConfig& config, std::uint64_t seed, std::uint64_t identity);
/// Fresh capture `observation` (>= 1) of identity i, without subject id.
MultiBiometricTemplate probe_observation(const SynthConfig& config, std::uint64_t seed, std::uint64_t identity,
                                         std::uint64_t observation = 1);

struct GeneratedGallery {
  Gallery gallery;
  std::vector<RegistryEntry> registry;
};

/// Enrolls identities [first, first + n) into `gallery`.
void extend_gallery(Gallery& gallery, std::vector<RegistryEntry>& registry, std::uint64_t first, std::size_t n,
                    const SynthConfig& config, std::uint64_t seed, std::size_t threads = 4);

GeneratedGallery generate_gallery(std::size_t n, const SynthConfig& config, std::uint64_t seed,
                                  std::size_t shard_size = Gallery::kDefaultShardSize, std::size_t threads = 4);

struct ProbeSets {
  std::vector<MultiBiometricTemplate> mated;
  std::vector<GalleryId> mate_ids;
  std::vector<std::uint64_t> mated_identities;
  std::vector<MultiBiometricTemplate> nonmated;
  std::vector<std::uint64_t> nonmated_identities;
};

/// Mated probes: fresh captures of distinct registry entries chosen by the
/// seed. Non-mated probes: fresh identities from kNonMatedIdentityOffset on.
/// Throws Argument when n_mated exceeds the registry.
ProbeSets generate_probe_sets(std::span<const RegistryEntry> registry, std::size_t n_mated,
                              std::size_t n_nonmated, const SynthConfig& config, std::uint64_t seed,
                              std::size_t threads = 4);

std::string registry_to_jsonl(std::span<const RegistryEntry> registry);
std::vector<RegistryEntry> parse_registry_jsonl(std::string_view text);

/// Labels file for a probe set: one JSON line per probe,
/// {"probe": i, "mate_id": id|null, "identity": n}.
std::string probe_labels_to_jsonl(std::span<const GalleryId> mate_ids, std::span<const std::uint64_t> identities);

}  // namespace abis
