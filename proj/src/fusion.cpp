#include "abis/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "abis/error.hpp"
#include "abis/kernels/kernels.hpp"

namespace abis {

FusionWeights::FusionWeights(const std::array<double, kSegmentCount>& weights, std::string profile)
    : weights_(weights), profile_(std::move(profile)) {
  bool any_positive = false;
  for (double w : weights_) {
    if (!std::isfinite(w) || w < 0.0) raise(ErrorCode::Argument, "fusion weights must be finite and >= 0");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) raise(ErrorCode::Argument, "at least one fusion weight must be positive");
}

double FusionWeights::raw_sum() const noexcept {
  double s = 0.0;
  for (double w : weights_) s += w;
  return s;
}

double FusionWeights::mass(const PresenceMask& mask) const noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < kSegmentCount; ++i) {
    if (mask.test(i)) s += weights_[i];
  }
  return s;
}

FusionWeights FusionWeights::scaled(double factor) const {
  auto w = weights_;
  for (double& x : w) x *= factor;
  return FusionWeights(w, profile_);
}

FusionWeights FusionWeights::restricted(const PresenceMask& keep, std::string profile) const {
  auto w = weights_;
  for (std::size_t i = 0; i < kSegmentCount; ++i) {
    if (!keep.test(i)) w[i] = 0.0;
  }
  return FusionWeights(w, std::move(profile));
}

FusionWeights default_weights() {
  std::array<double, kSegmentCount> w{};
  for (int p = 1; p <= 10; ++p) {
    // Thumb and index on both hands.
    const bool strong = p == 1 || p == 2 || p == 6 || p == 7;
    w[finger_segment(p)] = strong ? 2.3 : 1.0;
  }
  w[kFaceSegment] = 12.5;
  w[kIrisLeftSegment] = 6.25;
  w[kIrisRightSegment] = 6.25;
  return FusionWeights(w, "adult");
}

FusedScore fused_score(const TemplateView& probe, const TemplateView& gallery,
                       const FusionWeights& weights) {
  const auto& dot = kernels::active().dot_f64;
  const auto& layout = segment_layout();
  const PresenceMask common = probe.presence & gallery.presence;
  FusedScore out;
  double numerator = 0.0;
  for (std::size_t i = 0; i < kSegmentCount; ++i) {
    if (!common.test(i)) continue;
    const auto& seg = layout[i];
    const double p = dot(probe.vector.data() + seg.offset, gallery.vector.data() + seg.offset, seg.length);
    out.per_segment[i] = static_cast<float>(p);
    numerator += weights[i] * p;
    out.effective_weight_sum += weights[i];
  }
  if (!(out.effective_weight_sum > 0.0)) {
    raise(ErrorCode::Incomparable, "templates share no weighted present segment");
  }
  out.value = std::clamp(numerator / out.effective_weight_sum, -1.0, 1.0);
  return out;
}

FusionWeights quality_adapted_weights(const FusionWeights& weights, const QualityVector& probe,
                                      const QualityVector& gallery) {
  std::array<double, kSegmentCount> w{};
  for (std::size_t i = 0; i < kSegmentCount; ++i) {
    w[i] = weights[i] * std::min(probe[i], gallery[i]);
  }
  bool any = std::any_of(w.begin(), w.end(), [](double x) { return x > 0.0; });
  if (!any) raise(ErrorCode::Incomparable, "quality adaptation left no positive weight");
  return FusionWeights(w, weights.profile() + "+quality");
}

void probe_prescale_into(const MultiBiometricTemplate& probe, const FusionWeights& weights,
                         std::span<float> out) {
  if (out.size() != kTemplateDim) raise(ErrorCode::Dimension, "prescale buffer must hold 3456 values");
  const auto v = probe.vector();
  for (const auto& seg : segment_layout()) {
    const auto index = static_cast<std::size_t>(&seg - segment_layout().data());
    const float w = static_cast<float>(weights[index]);
    for (std::size_t k = seg.offset; k < seg.offset + seg.length; ++k) out[k] = w * v[k];
  }
}

std::vector<float> probe_prescale(const MultiBiometricTemplate& probe, const FusionWeights& weights) {
  std::vector<float> out(kTemplateDim);
  probe_prescale_into(probe, weights, out);
  return out;
}

std::string_view to_string(Decision d) noexcept {
  return d == Decision::Duplicate ? "duplicate" : "unique";
}

DecisionThreshold::DecisionThreshold(double t) : tau(t) {
  if (!(t >= -1.0 && t <= 1.0)) raise(ErrorCode::Argument, "threshold must be in [-1, 1]");
}

Decision decide(const FusedScore& score, DecisionThreshold tau) noexcept {
  return score.value >= tau.tau ? Decision::Duplicate : Decision::Unique;
}

PresenceMask parse_modality_subset(std::string_view spec) {
  PresenceMask mask;
  std::size_t start = 0;
  while (start <= spec.size()) {
    std::size_t end = spec.find_first_of(",+", start);
    if (end == std::string_view::npos) end = spec.size();
    const std::string_view token = spec.substr(start, end - start);
    if (token.empty()) raise(ErrorCode::Argument, "empty token in modality subset '" + std::string(spec) + "'");
    if (token == "face") {
      mask.set(kFaceSegment);
    } else if (token == "iris") {
      mask.set(kIrisLeftSegment);
    } else if (token == "irides") {
      mask.set(kIrisLeftSegment).set(kIrisRightSegment);
    } else if (token == "finger") {
      mask.set(finger_segment(7));
    } else if (token == "fingers") {
      for (std::size_t i = 0; i < kFingerCount; ++i) mask.set(i);
    } else if (token == "all") {
      mask.set();
    } else if (auto idx = segment_from_name(token)) {
      mask.set(*idx);
    } else {
      raise(ErrorCode::Argument, "unknown modality '" + std::string(token) + "'");
    }
    start = end + 1;
  }
  if (mask.none()) raise(ErrorCode::Argument, "empty modality subset");
  return mask;
}

std::vector<FusionWeights> parse_weight_profiles(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Format, std::string("weight profile file: ") + e.what());
  }
  if (!doc.contains("profiles") || !doc["profiles"].is_array()) {
    raise(ErrorCode::Format, "weight profile file needs a 'profiles' array");
  }
  std::vector<FusionWeights> out;
  for (const auto& p : doc["profiles"]) {
    if (!p.contains("name") || !p.contains("weights") || !p["weights"].is_object()) {
      raise(ErrorCode::Format, "each profile needs 'name' and 'weights'");
    }
    std::array<double, kSegmentCount> w{};
    const auto& obj = p["weights"];
    if (obj.size() != kSegmentCount) raise(ErrorCode::Format, "profile must list exactly 13 segments");
    for (std::size_t i = 0; i < kSegmentCount; ++i) {
      const std::string key(segment_name(i));
      if (!obj.contains(key) || !obj[key].is_number()) {
        raise(ErrorCode::Format, "profile missing numeric weight for '" + key + "'");
      }
      w[i] = obj[key].get<double>();
    }
    out.emplace_back(w, p["name"].get<std::string>());
  }
  return out;
}

FusionWeights load_weight_profile(const std::filesystem::path& path, std::string_view name) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::Io, "cannot read weight profile file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  for (auto& w : parse_weight_profiles(ss.str())) {
    if (w.profile() == name) return w;
  }
  raise(ErrorCode::NotFound, "weight profile '" + std::string(name) + "' not in " + path.string());
}

std::string weight_profiles_to_json(std::span<const FusionWeights> profiles) {
  nlohmann::ordered_json doc;
  doc["profiles"] = nlohmann::ordered_json::array();
  for (const auto& w : profiles) {
    nlohmann::ordered_json p;
    p["name"] = w.profile();
    for (std::size_t i = 0; i < kSegmentCount; ++i) p["weights"][std::string(segment_name(i))] = w[i];
    doc["profiles"].push_back(p);
  }
  return doc.dump(2);
}

}  // namespace abis
