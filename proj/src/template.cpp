#include "abis/template.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "abis/detail/bytes.hpp"
#include "abis/error.hpp"

namespace abis {
namespace {

constexpr std::array<std::string_view, kSegmentCount> kSegmentNames = {
    "finger1", "finger2", "finger3", "finger4", "finger5", "finger6", "finger7",
    "finger8", "finger9", "finger10", "face", "iris_left", "iris_right"};

constexpr std::array<ModalitySegment, kSegmentCount> make_layout() {
  std::array<ModalitySegment, kSegmentCount> out{};
  std::size_t offset = 0;
  for (int p = 1; p <= 10; ++p) {
    out[p - 1] = {SegmentKind::Finger, p, offset, kFingerDim};
    offset += kFingerDim;
  }
  out[kFaceSegment] = {SegmentKind::Face, 0, offset, kFaceDim};
  offset += kFaceDim;
  out[kIrisLeftSegment] = {SegmentKind::IrisLeft, 0, offset, kIrisDim};
  offset += kIrisDim;
  out[kIrisRightSegment] = {SegmentKind::IrisRight, 0, offset, kIrisDim};
  return out;
}

constexpr auto kLayout = make_layout();
static_assert(kLayout[12].offset + kLayout[12].length == kTemplateDim);

constexpr char kMagic[4] = {'B', 'T', 'P', 'L'};
constexpr std::uint16_t kVersion = 1;
constexpr double kNormTolerance = 1e-5;

double norm_of(std::span<const float> v) {
  double acc = 0.0;
  for (float x : v) acc += static_cast<double>(x) * x;
  return std::sqrt(acc);
}

}  // namespace

Modality ModalitySegment::modality() const noexcept {
  switch (kind) {
    case SegmentKind::Finger: return Modality::Finger;
    case SegmentKind::Face: return Modality::Face;
    default: return Modality::Iris;
  }
}

std::string_view ModalitySegment::name() const noexcept {
  switch (kind) {
    case SegmentKind::Finger: return kSegmentNames[static_cast<std::size_t>(finger_position - 1)];
    case SegmentKind::Face: return kSegmentNames[kFaceSegment];
    case SegmentKind::IrisLeft: return kSegmentNames[kIrisLeftSegment];
    case SegmentKind::IrisRight: return kSegmentNames[kIrisRightSegment];
  }
  return {};
}

const std::array<ModalitySegment, kSegmentCount>& segment_layout() noexcept { return kLayout; }

std::size_t finger_segment(int position) {
  if (position < 1 || position > 10) {
    raise(ErrorCode::Argument, "finger position must be in 1..10, got " + std::to_string(position));
  }
  return static_cast<std::size_t>(position - 1);
}

std::string_view segment_name(std::size_t index) {
  if (index >= kSegmentCount) raise(ErrorCode::Argument, "segment index out of range");
  return kSegmentNames[index];
}

std::optional<std::size_t> segment_from_name(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kSegmentCount; ++i) {
    if (kSegmentNames[i] == name) return i;
  }
  return std::nullopt;
}

std::span<const float> MultiBiometricTemplate::segment(std::size_t index) const {
  if (index >= kSegmentCount) raise(ErrorCode::Argument, "segment index out of range");
  const auto& s = kLayout[index];
  return std::span<const float>(values_).subspan(s.offset, s.length);
}

MultiBiometricTemplate MultiBiometricTemplate::with_subject_id(std::uint64_t id) const {
  MultiBiometricTemplate copy = *this;
  copy.subject_id_ = id;
  return copy;
}

std::vector<float> normalize_segment(std::span<const float> v) {
  const double n = norm_of(v);
  if (!(n > 1e-12) || !std::isfinite(n)) {
    raise(ErrorCode::DegenerateSegment, "segment norm is zero or not finite");
  }
  std::vector<float> out(v.size());
  const double inv = 1.0 / n;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

MultiBiometricTemplate assemble_template(const std::map<std::size_t, std::vector<float>>& segments,
                                         const std::map<std::size_t, float>& quality,
                                         std::uint64_t subject_id) {
  if (segments.empty()) raise(ErrorCode::EmptyTemplate, "no segments provided");
  MultiBiometricTemplate t;
  t.subject_id_ = subject_id;
  for (const auto& [index, values] : segments) {
    if (index >= kSegmentCount) raise(ErrorCode::Argument, "segment index out of range");
    const auto& seg = kLayout[index];
    if (values.size() != seg.length) {
      raise(ErrorCode::Dimension, std::string(seg.name()) + ": expected " +
                                      std::to_string(seg.length) + " values, got " +
                                      std::to_string(values.size()));
    }
    const auto unit = normalize_segment(values);
    std::copy(unit.begin(), unit.end(), t.values_.begin() + static_cast<std::ptrdiff_t>(seg.offset));
    t.presence_.set(index);
    float q = 1.0f;
    if (auto it = quality.find(index); it != quality.end()) q = it->second;
    if (!(q >= 0.0f && q <= 1.0f)) {
      raise(ErrorCode::Argument, std::string(seg.name()) + ": quality must be in [0,1]");
    }
    t.quality_[index] = q;
  }
  return t;
}

void serialize_template_into(const MultiBiometricTemplate& t, std::span<std::byte> out) {
  using detail::put_le;
  if (out.size() < kRecordBytes) raise(ErrorCode::Argument, "output buffer too small");
  std::byte* p = out.data();
  std::memcpy(p, kMagic, 4);
  put_le<std::uint16_t>(p + 4, kVersion);
  put_le<std::uint16_t>(p + 6, 0);
  put_le<std::uint64_t>(p + 8, t.subject_id());
  put_le<std::uint16_t>(p + 16, static_cast<std::uint16_t>(t.presence().to_ulong()));
  put_le<std::uint16_t>(p + 18, static_cast<std::uint16_t>(kTemplateDim));
  put_le<std::uint16_t>(p + 20, static_cast<std::uint16_t>(kSegmentCount));
  put_le<std::uint32_t>(p + 22, 0);
  p += kRecordHeaderBytes;
  detail::put_floats(p, t.quality());
  p += kSegmentCount * sizeof(float);
  detail::put_floats(p, t.vector());
}

std::vector<std::byte> serialize_template(const MultiBiometricTemplate& t) {
  std::vector<std::byte> out(kRecordBytes);
  serialize_template_into(t, out);
  return out;
}

MultiBiometricTemplate make_template(std::span<const float> vector, const PresenceMask& presence,
                                     const QualityVector& quality, std::uint64_t subject_id) {
  if (vector.size() != kTemplateDim) raise(ErrorCode::Format, "template vector must have 3456 values");
  if (presence.none()) raise(ErrorCode::Format, "template has no present segment");
  MultiBiometricTemplate t;
  t.subject_id_ = subject_id;
  t.presence_ = presence;
  t.quality_ = quality;
  std::copy(vector.begin(), vector.end(), t.values_.begin());
  for (std::size_t i = 0; i < kSegmentCount; ++i) {
    const auto seg = t.segment(i);
    const float q = t.quality_[i];
    if (t.presence_.test(i)) {
      if (std::abs(norm_of(seg) - 1.0) > kNormTolerance) {
        raise(ErrorCode::Format, std::string(segment_name(i)) + ": present segment is not unit norm");
      }
      if (!(q >= 0.0f && q <= 1.0f)) raise(ErrorCode::Format, "quality out of range");
    } else {
      for (float x : seg) {
        if (x != 0.0f) raise(ErrorCode::Format, std::string(segment_name(i)) + ": absent segment not zero");
      }
      if (q != 0.0f) raise(ErrorCode::Format, "absent segment has non-zero quality");
    }
  }
  return t;
}

MultiBiometricTemplate deserialize_template(std::span<const std::byte> bytes) {
  using detail::get_le;
  if (bytes.size() < kRecordBytes) {
    raise(ErrorCode::Format, "template record truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  const std::byte* p = bytes.data();
  if (std::memcmp(p, kMagic, 4) != 0) raise(ErrorCode::Format, "bad template magic");
  if (get_le<std::uint16_t>(p + 4) != kVersion) raise(ErrorCode::Format, "unsupported template version");
  const auto presence_bits = get_le<std::uint16_t>(p + 16);
  if (presence_bits >> kSegmentCount) raise(ErrorCode::Format, "presence bits 13-15 must be zero");
  if (get_le<std::uint16_t>(p + 18) != kTemplateDim || get_le<std::uint16_t>(p + 20) != kSegmentCount) {
    raise(ErrorCode::Format, "template layout mismatch");
  }
  QualityVector quality{};
  detail::get_floats(p + kRecordHeaderBytes, quality);
  std::vector<float> values(kTemplateDim);
  detail::get_floats(p + kRecordHeaderBytes + kSegmentCount * sizeof(float), values);
  return make_template(values, PresenceMask(presence_bits), quality, get_le<std::uint64_t>(p + 8));
}

}  // namespace abis
