#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abis/template.hpp"

namespace abis {

/// Per-segment non-negative fusion weights, canonical segment order.
class FusionWeights {
 public:
  /// Throws Argument if any weight is negative/non-finite or all are zero.
  explicit FusionWeights(const std::array<double, kSegmentCount>& weights,
                         std::string profile = "custom");

  double operator[](std::size_t segment) const { return weights_.at(segment); }
  const std::array<double, kSegmentCount>& values() const noexcept { return weights_; }
  const std::string& profile() const noexcept { return profile_; }
  double raw_sum() const noexcept;
  /// Sum of weights over segments flagged in `mask`.
  double mass(const PresenceMask& mask) const noexcept;

  FusionWeights scaled(double factor) const;
  /// Zeroes every weight outside `keep`.
  FusionWeights restricted(const PresenceMask& keep, std::string profile) const;

 private:
  std::array<double, kSegmentCount> weights_;
  std::string profile_;
};

/// Face 12.5, each iris 6.25, thumbs and index fingers 2.3, other fingers 1.0.
FusionWeights default_weights();

struct FusedScore {
  double value = 0.0;
  std::array<float, kSegmentCount> per_segment{};
  double effective_weight_sum = 0.0;
};

/// Weighted mean of per-segment cosines over segments present in both
/// templates (and carrying positive weight). Throws Incomparable otherwise.
FusedScore fused_score(const TemplateView& probe, const TemplateView& gallery,
                       const FusionWeights& weights);
inline FusedScore fused_score(const MultiBiometricTemplate& probe, const MultiBiometricTemplate& gallery,
                              const FusionWeights& weights) {
  return fused_score(probe.view(), gallery.view(), weights);
}

/// w_i * min(q_probe_i, q_gallery_i).
FusionWeights quality_adapted_weights(const FusionWeights& weights, const QualityVector& probe,
                                      const QualityVector& gallery);

/// q'_i = w_i * q_i, so that <q', g> = sum_i w_i <q_i, g_i> (unnormalized).
std::vector<float> probe_prescale(const MultiBiometricTemplate& probe, const FusionWeights& weights);
void probe_prescale_into(const MultiBiometricTemplate& probe, const FusionWeights& weights,
                         std::span<float> out);

enum class Decision { Duplicate, Unique };

std::string_view to_string(Decision d) noexcept;

struct DecisionThreshold {
  double tau;
  explicit DecisionThreshold(double t);
};

/// Duplicate iff score >= tau.
Decision decide(const FusedScore& score, DecisionThreshold tau) noexcept;

/// Parses a modality subset such as "face,irides" or "fingers+face".
/// Tokens: face, iris (left iris), irides, finger (left index), fingers, all,
/// or any canonical segment name.
PresenceMask parse_modality_subset(std::string_view spec);

/// Weight profile file (JSON):
///   {"profiles": [{"name": "adult", "weights": {"finger1": 2.3, ..., "iris_right": 6.25}}]}
/// Every profile must list all 13 segment names.
std::vector<FusionWeights> parse_weight_profiles(std::string_view json_text);
FusionWeights load_weight_profile(const std::filesystem::path& path, std::string_view name);
std::string weight_profiles_to_json(std::span<const FusionWeights> profiles);

}  // namespace abis
