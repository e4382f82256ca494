#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace abis {

inline constexpr std::size_t kFingerDim = 192;
inline constexpr std::size_t kFaceDim = 512;
inline constexpr std::size_t kIrisDim = 512;
inline constexpr std::size_t kSegmentCount = 13;
inline constexpr std::size_t kFingerCount = 10;
inline constexpr std::size_t kTemplateDim = kFingerCount * kFingerDim + kFaceDim + 2 * kIrisDim;
inline constexpr std::size_t kVectorBytes = kTemplateDim * sizeof(float);

/// Canonical segment indices. Fingers 0..9 are positions 1..10
/// (1-5 right thumb..little, 6-10 left thumb..little).
inline constexpr std::size_t kFaceSegment = 10;
inline constexpr std::size_t kIrisLeftSegment = 11;
inline constexpr std::size_t kIrisRightSegment = 12;

enum class SegmentKind : std::uint8_t { Finger, Face, IrisLeft, IrisRight };
enum class Modality : std::uint8_t { Finger, Face, Iris };

struct ModalitySegment {
  SegmentKind kind;
  int finger_position;  // 1..10 for fingers, 0 otherwise
  std::size_t offset;
  std::size_t length;

  Modality modality() const noexcept;
  std::string_view name() const noexcept;
};

/// The 13 segments in canonical order: f1..f10, face, iris-left, iris-right.
const std::array<ModalitySegment, kSegmentCount>& segment_layout() noexcept;

std::size_t finger_segment(int position);
std::string_view segment_name(std::size_t index);
std::optional<std::size_t> segment_from_name(std::string_view name) noexcept;

using PresenceMask = std::bitset<kSegmentCount>;
using QualityVector = std::array<float, kSegmentCount>;

/// Non-owning view of a template's fields (a template or a gallery row).
struct TemplateView {
  std::span<const float> vector;
  PresenceMask presence;
  QualityVector quality{};
  std::uint64_t subject_id = 0;
};

/// Immutable multi-biometric template. Constructed only via
/// assemble_template() or deserialize_template(), both of which enforce the
/// unit-norm / zero-absent invariants.
class MultiBiometricTemplate {
 public:
  std::span<const float> vector() const noexcept { return values_; }
  std::span<const float> segment(std::size_t index) const;
  const PresenceMask& presence() const noexcept { return presence_; }
  const QualityVector& quality() const noexcept { return quality_; }
  /// 0 means "no subject" (allowed for probes).
  std::uint64_t subject_id() const noexcept { return subject_id_; }

  MultiBiometricTemplate with_subject_id(std::uint64_t id) const;
  TemplateView view() const noexcept { return {values_, presence_, quality_, subject_id_}; }

  friend bool operator==(const MultiBiometricTemplate&, const MultiBiometricTemplate&) = default;

 private:
  MultiBiometricTemplate() : values_(kTemplateDim, 0.0f) { quality_.fill(0.0f); }

  std::vector<float> values_;
  PresenceMask presence_;
  QualityVector quality_{};
  std::uint64_t subject_id_ = 0;

  friend MultiBiometricTemplate assemble_template(const std::map<std::size_t, std::vector<float>>&,
                                                  const std::map<std::size_t, float>&,
                                                  std::uint64_t);
  friend MultiBiometricTemplate make_template(std::span<const float>, const PresenceMask&,
                                             const QualityVector&, std::uint64_t);
};

/// Returns v / ||v||. Throws DegenerateSegment when ||v|| <= 1e-12.
std::vector<float> normalize_segment(std::span<const float> v);

/// Segments keyed by canonical index. Quality defaults to 1.0 for a provided
/// segment with no quality entry; absent segments get quality 0.
MultiBiometricTemplate assemble_template(const std::map<std::size_t, std::vector<float>>& segments,
                                         const std::map<std::size_t, float>& quality = {},
                                         std::uint64_t subject_id = 0);

// Binary record: "BTPL" | u16 version=1 | u16 reserved | u64 subject_id |
// u16 presence | u16 dim=3456 | u16 segments=13 | u32 reserved |
// 13 x f32 quality | 3456 x f32 vector. All little-endian.
inline constexpr std::size_t kRecordHeaderBytes = 26;
inline constexpr std::size_t kRecordBytes =
    kRecordHeaderBytes + kSegmentCount * sizeof(float) + kVectorBytes;
static_assert(kRecordBytes == 13902);

/// Rebuilds a template from raw parts, checking every invariant (unit-norm
/// present segments, zero absent segments, quality in [0,1], absent quality 0).
/// Throws Format on violation.
MultiBiometricTemplate make_template(std::span<const float> vector, const PresenceMask& presence,
                                     const QualityVector& quality, std::uint64_t subject_id);

std::vector<std::byte> serialize_template(const MultiBiometricTemplate& t);
void serialize_template_into(const MultiBiometricTemplate& t, std::span<std::byte> out);
MultiBiometricTemplate deserialize_template(std::span<const std::byte> bytes);

}  // namespace abis
