#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "abis/template.hpp"

namespace abis {

enum class PadVerdict { Live, Spoof };
std::string_view to_string(PadVerdict v) noexcept;

/// Raw capture for one segment. In this artifact the "raw features" are the
/// embedding itself plus the side information the stub stages consume.
struct SegmentPayload {
  std::vector<float> features;
  double latent_quality = 1.0;
  /// Ground truth for the PAD stub.
  bool live = true;
  /// Forces the PAD stub's verdict for this segment.
  std::optional<PadVerdict> forced_pad;
  /// A failure-to-acquire segment carries no features.
  bool failure_to_acquire = false;
};

struct EnrollmentPacket {
  std::string packet_id;
  std::string operator_id;
  std::map<std::size_t, SegmentPayload> segments;  // keyed by canonical segment index
};

enum class Stage { Capture, Segmentation, Quality, Pad, Embedding, Assembly };
std::string_view to_string(Stage s) noexcept;

enum class ExceptionKind { FailureToAcquire, Spoof, LowQuality };
std::string_view to_string(ExceptionKind k) noexcept;

struct PipelineException {
  std::string packet_id;
  std::size_t segment;
  Stage stage;
  ExceptionKind kind;
  /// LowQuality entries are flags; the segment stays in the template.
  bool excluded;
};

struct PadOutcome {
  PadVerdict verdict = PadVerdict::Live;
  double confidence = 1.0;
};

struct StubOperatingPoint {
  double tdr;
  double fdr;
};

/// finger/face (0.995, 0.005), iris (0.99, 0.01).
StubOperatingPoint default_operating_point(Modality m) noexcept;

struct StageContext {
  std::string_view packet_id;
  std::size_t segment;
};

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual SegmentPayload segment(const StageContext& ctx, const SegmentPayload& raw) = 0;
};

class QualityEstimator {
 public:
  virtual ~QualityEstimator() = default;
  virtual double estimate(const StageContext& ctx, const SegmentPayload& payload) = 0;
};

class PadDetector {
 public:
  virtual ~PadDetector() = default;
  virtual PadOutcome detect(const StageContext& ctx, const SegmentPayload& payload) = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<float> embed(const StageContext& ctx, const SegmentPayload& payload) = 0;
};

/// Spoof with probability tdr for spoof input, fdr for live input.
PadOutcome pad_stub(const SegmentPayload& payload, bool ground_truth_live, const StubOperatingPoint& op,
                    std::mt19937_64& rng);

/// latent + U(-0.05, 0.05), clamped to [0, 1].
double quality_stub(const SegmentPayload& payload, std::mt19937_64& rng);

struct StubConfig {
  std::uint64_t seed = 0;
  StubOperatingPoint finger = default_operating_point(Modality::Finger);
  StubOperatingPoint face = default_operating_point(Modality::Face);
  StubOperatingPoint iris = default_operating_point(Modality::Iris);
};

struct PipelineStages {
  std::shared_ptr<Segmenter> segmenter;
  std::shared_ptr<QualityEstimator> quality;
  std::shared_ptr<PadDetector> pad;
  std::shared_ptr<Embedder> embedder;
  /// Segments scoring below this are flagged (not excluded).
  double low_quality_threshold = 0.1;
};

/// Stub chain: pass-through segmentation and embedding, quality_stub and
/// pad_stub with per-(seed, packet, segment) random streams.
PipelineStages stub_stages(const StubConfig& config = {});

/// Stages that accept everything and report the latent quality unchanged.
PipelineStages permissive_stages();

struct PipelineResult {
  MultiBiometricTemplate tmpl;
  std::vector<PipelineException> exceptions;
};

/// Throws EmptyTemplate when nothing survives, Stage when a stage fails.
PipelineResult process_enrollment_packet(const EnrollmentPacket& packet, const PipelineStages& stages);

/// Packet JSON:
///   {"packet_id": str, "operator": str,
///    "segments": {name: {"embedding": [f32...] | "embedding_b64": str,
///                        "latent_quality": num, "live": bool,
///                        "pad_verdict": "live"|"spoof", "failure_to_acquire": bool}}}
/// Throws Malformed.
EnrollmentPacket parse_packet_json(std::string_view json_text);
std::string packet_to_json(const EnrollmentPacket& packet);

/// Builds a packet carrying every present segment of `t` as its features.
EnrollmentPacket packet_from_template(const MultiBiometricTemplate& t, std::string packet_id,
                                      std::string operator_id = "synthetic");

std::string exception_to_json(const PipelineException& e);
void append_exceptions_jsonl(const std::filesystem::path& path, std::span<const PipelineException> exceptions);

}  // namespace abis
