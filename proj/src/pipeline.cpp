#include "abis/pipeline.hpp"

#include <algorithm>
#include <string>

#include <nlohmann/json.hpp>

#include "abis/error.hpp"
#include "abis/util.hpp"

namespace abis {

std::string_view to_string(PadVerdict v) noexcept { return v == PadVerdict::Live ? "live" : "spoof"; }

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::Capture: return "capture";
    case Stage::Segmentation: return "segmentation";
    case Stage::Quality: return "quality";
    case Stage::Pad: return "pad";
    case Stage::Embedding: return "embedding";
    case Stage::Assembly: return "assembly";
  }
  return "unknown";
}

std::string_view to_string(ExceptionKind k) noexcept {
  switch (k) {
    case ExceptionKind::FailureToAcquire: return "failure_to_acquire";
    case ExceptionKind::Spoof: return "spoof";
    case ExceptionKind::LowQuality: return "low_quality";
  }
  return "unknown";
}

StubOperatingPoint default_operating_point(Modality m) noexcept {
  if (m == Modality::Iris) return {0.99, 0.01};
  return {0.995, 0.005};
}

namespace {

void check_rate(double r, const char* what) {
  if (!(r >= 0.0 && r <= 1.0)) raise(ErrorCode::Argument, std::string(what) + " must lie in [0, 1]");
}

std::uint64_t packet_hash(std::string_view packet_id) {
  // FNV-1a; stable across platforms, unlike std::hash.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : packet_id) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

class PassthroughSegmenter final : public Segmenter {
 public:
  SegmentPayload segment(const StageContext&, const SegmentPayload& raw) override { return raw; }
};

class PassthroughEmbedder final : public Embedder {
 public:
  std::vector<float> embed(const StageContext& ctx, const SegmentPayload& payload) override {
    const std::size_t expected = segment_layout()[ctx.segment].length;
    if (payload.features.size() != expected) {
      raise(ErrorCode::Dimension, "expected " + std::to_string(expected) + " features, got " +
                                      std::to_string(payload.features.size()));
    }
    return payload.features;
  }
};

class StubQuality final : public QualityEstimator {
 public:
  explicit StubQuality(std::uint64_t seed) : seed_(seed) {}
  double estimate(const StageContext& ctx, const SegmentPayload& payload) override {
    auto rng = stream(seed_, packet_hash(ctx.packet_id), 2 * ctx.segment);
    return quality_stub(payload, rng);
  }

 private:
  std::uint64_t seed_;
};

class LatentQuality final : public QualityEstimator {
 public:
  double estimate(const StageContext&, const SegmentPayload& payload) override {
    return std::clamp(payload.latent_quality, 0.0, 1.0);
  }
};

class StubPad final : public PadDetector {
 public:
  explicit StubPad(const StubConfig& c) : config_(c) {}
  PadOutcome detect(const StageContext& ctx, const SegmentPayload& payload) override {
    if (payload.forced_pad) return {*payload.forced_pad, 1.0};
    StubOperatingPoint op = config_.finger;
    const Modality m = segment_layout()[ctx.segment].modality();
    if (m == Modality::Face) op = config_.face;
    if (m == Modality::Iris) op = config_.iris;
    auto rng = stream(config_.seed, packet_hash(ctx.packet_id), 2 * ctx.segment + 1);
    return pad_stub(payload, payload.live, op, rng);
  }

 private:
  StubConfig config_;
};

class PermissivePad final : public PadDetector {
 public:
  PadOutcome detect(const StageContext&, const SegmentPayload& payload) override {
    if (payload.forced_pad) return {*payload.forced_pad, 1.0};
    return {PadVerdict::Live, 1.0};
  }
};

template <typename Fn>
auto run_stage(const StageContext& ctx, Stage stage, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    raise(ErrorCode::Stage, "segment " + std::string(segment_name(ctx.segment)) + ", stage " +
                                std::string(to_string(stage)) + ": " + e.what());
  }
}

}  // namespace

PadOutcome pad_stub(const SegmentPayload&, bool ground_truth_live, const StubOperatingPoint& op,
                    std::mt19937_64& rng) {
  check_rate(op.tdr, "tdr");
  check_rate(op.fdr, "fdr");
  const double p_spoof = ground_truth_live ? op.fdr : op.tdr;
  std::bernoulli_distribution flag(p_spoof);
  const bool spoof = flag(rng);
  // Confidence of the emitted verdict under the operating point.
  const double confidence = spoof ? std::max(op.tdr, op.fdr) : std::max(1.0 - op.fdr, 1.0 - op.tdr);
  return {spoof ? PadVerdict::Spoof : PadVerdict::Live, confidence};
}

double quality_stub(const SegmentPayload& payload, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> noise(-0.05, 0.05);
  return std::clamp(payload.latent_quality + noise(rng), 0.0, 1.0);
}

PipelineStages stub_stages(const StubConfig& config) {
  check_rate(config.finger.tdr, "finger tdr");
  check_rate(config.finger.fdr, "finger fdr");
  check_rate(config.face.tdr, "face tdr");
  check_rate(config.face.fdr, "face fdr");
  check_rate(config.iris.tdr, "iris tdr");
  check_rate(config.iris.fdr, "iris fdr");
  PipelineStages s;
  s.segmenter = std::make_shared<PassthroughSegmenter>();
  s.quality = std::make_shared<StubQuality>(config.seed);
  s.pad = std::make_shared<StubPad>(config);
  s.embedder = std::make_shared<PassthroughEmbedder>();
  return s;
}

PipelineStages permissive_stages() {
  PipelineStages s;
  s.segmenter = std::make_shared<PassthroughSegmenter>();
  s.quality = std::make_shared<LatentQuality>();
  s.pad = std::make_shared<PermissivePad>();
  s.embedder = std::make_shared<PassthroughEmbedder>();
  s.low_quality_threshold = 0.0;
  return s;
}

PipelineResult process_enrollment_packet(const EnrollmentPacket& packet, const PipelineStages& stages) {
  if (!stages.segmenter || !stages.quality || !stages.pad || !stages.embedder) {
    raise(ErrorCode::Argument, "pipeline stages are incomplete");
  }
  std::vector<PipelineException> exceptions;
  std::map<std::size_t, std::vector<float>> vectors;
  std::map<std::size_t, float> quality;
  for (const auto& [seg, raw] : packet.segments) {
    if (seg >= kSegmentCount) raise(ErrorCode::Malformed, "segment index out of range");
    const StageContext ctx{packet.packet_id, seg};
    if (raw.failure_to_acquire) {
      exceptions.push_back({packet.packet_id, seg, Stage::Capture, ExceptionKind::FailureToAcquire, true});
      continue;
    }
    const SegmentPayload cropped = run_stage(ctx, Stage::Segmentation, [&] { return stages.segmenter->segment(ctx, raw); });
    const double q = run_stage(ctx, Stage::Quality, [&] { return stages.quality->estimate(ctx, cropped); });
    const PadOutcome pad = run_stage(ctx, Stage::Pad, [&] { return stages.pad->detect(ctx, cropped); });
    if (pad.verdict == PadVerdict::Spoof) {
      exceptions.push_back({packet.packet_id, seg, Stage::Pad, ExceptionKind::Spoof, true});
      continue;
    }
    if (q < stages.low_quality_threshold) {
      exceptions.push_back({packet.packet_id, seg, Stage::Quality, ExceptionKind::LowQuality, false});
    }
    auto embedding = run_stage(ctx, Stage::Embedding, [&] {
      auto e = stages.embedder->embed(ctx, cropped);
      normalize_segment(e);  // degenerate embeddings fail here, inside the stage
      return e;
    });
    vectors.emplace(seg, std::move(embedding));
    quality.emplace(seg, static_cast<float>(std::clamp(q, 0.0, 1.0)));
  }
  if (vectors.empty()) {
    raise(ErrorCode::EmptyTemplate, "packet " + packet.packet_id + " has no usable segment");
  }
  return {assemble_template(vectors, quality), std::move(exceptions)};
}

namespace {

std::vector<float> floats_from_b64(std::string_view text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 4 != 0) raise(ErrorCode::Malformed, "embedding_b64 length is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (std::size_t b = 0; b < 4; ++b) bits |= std::to_integer<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace

EnrollmentPacket parse_packet_json(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Malformed, std::string("packet is not valid JSON: ") + e.what());
  }
  try {
    if (!j.is_object()) raise(ErrorCode::Malformed, "packet must be a JSON object");
    EnrollmentPacket p;
    p.packet_id = j.value("packet_id", std::string{});
    p.operator_id = j.value("operator", std::string{});
    if (!j.contains("segments") || !j["segments"].is_object() || j["segments"].empty()) {
      raise(ErrorCode::Malformed, "packet needs a non-empty \"segments\" object");
    }
    for (const auto& [name, s] : j["segments"].items()) {
      const auto idx = segment_from_name(name);
      if (!idx) raise(ErrorCode::Malformed, "unknown segment \"" + name + "\"");
      if (!s.is_object()) raise(ErrorCode::Malformed, "segment \"" + name + "\" must be an object");
      SegmentPayload payload;
      payload.failure_to_acquire = s.value("failure_to_acquire", false);
      payload.latent_quality = s.value("latent_quality", 1.0);
      payload.live = s.value("live", true);
      if (s.contains("pad_verdict")) {
        const auto v = s["pad_verdict"].get<std::string>();
        if (v == "live") payload.forced_pad = PadVerdict::Live;
        else if (v == "spoof") payload.forced_pad = PadVerdict::Spoof;
        else raise(ErrorCode::Malformed, "pad_verdict must be \"live\" or \"spoof\"");
      }
      const bool has_vec = s.contains("embedding");
      const bool has_b64 = s.contains("embedding_b64");
      if (payload.failure_to_acquire) {
        if (has_vec || has_b64) raise(ErrorCode::Malformed, "failure-to-acquire segment \"" + name + "\" carries a payload");
      } else if (has_vec == has_b64) {
        raise(ErrorCode::Malformed, "segment \"" + name + "\" needs exactly one of embedding / embedding_b64");
      } else if (has_vec) {
        payload.features = s["embedding"].get<std::vector<float>>();
      } else {
        payload.features = floats_from_b64(s["embedding_b64"].get<std::string>());
      }
      p.segments.emplace(*idx, std::move(payload));
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Malformed, std::string("malformed packet: ") + e.what());
  }
}

std::string packet_to_json(const EnrollmentPacket& packet) {
  nlohmann::ordered_json j;
  j["packet_id"] = packet.packet_id;
  j["operator"] = packet.operator_id;
  nlohmann::ordered_json segs = nlohmann::ordered_json::object();
  for (const auto& [seg, p] : packet.segments) {
    nlohmann::ordered_json s;
    if (p.failure_to_acquire) {
      s["failure_to_acquire"] = true;
    } else {
      std::vector<std::byte> bytes(p.features.size() * 4);
      for (std::size_t i = 0; i < p.features.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(p.features[i]);
        for (std::size_t b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<std::byte>((bits >> (8 * b)) & 0xFF);
      }
      s["embedding_b64"] = base64_encode(bytes);
      s["latent_quality"] = p.latent_quality;
      if (!p.live) s["live"] = false;
      if (p.forced_pad) s["pad_verdict"] = std::string(to_string(*p.forced_pad));
    }
    segs[std::string(segment_name(seg))] = std::move(s);
  }
  j["segments"] = std::move(segs);
  return j.dump();
}

EnrollmentPacket packet_from_template(const MultiBiometricTemplate& t, std::string packet_id,
                                      std::string operator_id) {
  EnrollmentPacket p;
  p.packet_id = std::move(packet_id);
  p.operator_id = std::move(operator_id);
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (!t.presence().test(s)) continue;
    SegmentPayload payload;
    const auto seg = t.segment(s);
    payload.features.assign(seg.begin(), seg.end());
    payload.latent_quality = t.quality()[s];
    p.segments.emplace(s, std::move(payload));
  }
  return p;
}

std::string exception_to_json(const PipelineException& e) {
  nlohmann::ordered_json j;
  j["packet_id"] = e.packet_id;
  j["segment"] = std::string(segment_name(e.segment));
  j["stage"] = std::string(to_string(e.stage));
  j["code"] = std::string(to_string(e.kind));
  j["excluded"] = e.excluded;
  return j.dump();
}

void append_exceptions_jsonl(const std::filesystem::path& path, std::span<const PipelineException> exceptions) {
  for (const auto& e : exceptions) append_line(path, exception_to_json(e));
}

}  // namespace abis
