#include "abis/service.hpp"

#include <httplib.h>
#include <sys/socket.h>

#include <algorithm>
#include <charconv>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "abis/error.hpp"
#include "abis/eval.hpp"
#include "abis/util.hpp"

namespace abis {

using ojson = nlohmann::ordered_json;

std::string_view to_string(CaseState s) noexcept {
  switch (s) {
    case CaseState::Pending: return "pending";
    case CaseState::Duplicate: return "duplicate";
    case CaseState::Unique: return "unique";
  }
  return "unknown";
}

CaseState parse_case_state(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "pending") return CaseState::Pending;
  if (lower == "duplicate") return CaseState::Duplicate;
  if (lower == "unique") return CaseState::Unique;
  raise(ErrorCode::Argument, "unknown case state \"" + std::string(s) + "\"");
}

std::string_view to_string(EnrollOutcome::Kind k) noexcept {
  switch (k) {
    case EnrollOutcome::Kind::Enrolled: return "enrolled";
    case EnrollOutcome::Kind::Flagged: return "flagged";
    case EnrollOutcome::Kind::Rejected: return "rejected";
  }
  return "unknown";
}

double calibrate_adjudication_threshold(const Gallery& gallery, std::span<const MultiBiometricTemplate> nonmated,
                                        const FusionWeights& weights, double flag_rate, std::size_t threads) {
  if (nonmated.empty()) raise(ErrorCode::Argument, "threshold calibration needs non-mated probes");
  SearchOptions o;
  o.k = 1;
  o.threads = threads;
  const auto lists = search(gallery, nonmated, weights, o);
  std::vector<double> top;
  top.reserve(lists.size());
  for (const auto& l : lists) top.push_back(l.empty() ? -1.0 : l.front().score);
  return std::clamp(threshold_at_rate(top, flag_rate), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// JSON forms

namespace {

ojson mask_json(const PresenceMask& m) {
  ojson a = ojson::array();
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (m.test(s)) a.push_back(std::string(segment_name(s)));
  }
  return a;
}

PresenceMask mask_from_json(const nlohmann::json& a) {
  PresenceMask m;
  for (const auto& n : a) {
    const auto idx = segment_from_name(n.get<std::string>());
    if (!idx) raise(ErrorCode::Format, "unknown segment name in stored case");
    m.set(*idx);
  }
  return m;
}

ojson candidate_json(const Candidate& c, const PresenceMask* compared) {
  ojson j;
  j["id"] = c.id;
  j["score"] = c.score;
  j["effective_weight_sum"] = c.fused.effective_weight_sum;
  ojson per = ojson::object();
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (compared && !compared->test(s)) continue;
    per[std::string(segment_name(s))] = c.fused.per_segment[s];
  }
  j["per_segment"] = std::move(per);
  if (compared) j["compared"] = mask_json(*compared);
  return j;
}

ojson case_json(const AdjudicationCase& c) {
  ojson j;
  j["id"] = c.id;
  j["packet_id"] = c.packet_id;
  j["state"] = std::string(to_string(c.state));
  j["created_at"] = c.created_at;
  j["decided_at"] = c.decided_at.empty() ? ojson(nullptr) : ojson(c.decided_at);
  j["adjudicator"] = c.adjudicator.empty() ? ojson(nullptr) : ojson(c.adjudicator);
  j["enrolled_id"] = c.enrolled_id ? ojson(*c.enrolled_id) : ojson(nullptr);
  j["linked_id"] = c.linked_id ? ojson(*c.linked_id) : ojson(nullptr);
  ojson quality = ojson::object();
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (c.probe_presence.test(s)) quality[std::string(segment_name(s))] = c.probe_quality[s];
  }
  j["probe"] = {{"presence", mask_json(c.probe_presence)}, {"quality", std::move(quality)}};
  ojson cands = ojson::array();
  for (std::size_t i = 0; i < c.candidates.size(); ++i) {
    cands.push_back(candidate_json(c.candidates[i], i < c.compared.size() ? &c.compared[i] : nullptr));
  }
  j["candidates"] = std::move(cands);
  return j;
}

// Stored form: the client view plus the probe record.
std::string stored_case_json(const AdjudicationCase& c) {
  ojson j = case_json(c);
  j["probe_record"] = base64_encode(c.probe_record);
  return j.dump();
}

AdjudicationCase case_from_stored(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  AdjudicationCase c;
  c.id = j.at("id").get<std::uint64_t>();
  c.packet_id = j.at("packet_id").get<std::string>();
  c.state = parse_case_state(j.at("state").get<std::string>());
  c.created_at = j.at("created_at").get<std::string>();
  if (!j.at("decided_at").is_null()) c.decided_at = j.at("decided_at").get<std::string>();
  if (!j.at("adjudicator").is_null()) c.adjudicator = j.at("adjudicator").get<std::string>();
  if (!j.at("enrolled_id").is_null()) c.enrolled_id = j.at("enrolled_id").get<GalleryId>();
  if (!j.at("linked_id").is_null()) c.linked_id = j.at("linked_id").get<GalleryId>();
  c.probe_record = base64_decode(j.at("probe_record").get<std::string>());
  const auto probe = deserialize_template(c.probe_record);
  c.probe_presence = probe.presence();
  c.probe_quality = probe.quality();
  for (const auto& cj : j.at("candidates")) {
    Candidate cand;
    cand.id = cj.at("id").get<GalleryId>();
    cand.score = cj.at("score").get<double>();
    cand.fused.value = cand.score;
    cand.fused.effective_weight_sum = cj.at("effective_weight_sum").get<double>();
    for (const auto& [name, v] : cj.at("per_segment").items()) {
      if (const auto idx = segment_from_name(name)) cand.fused.per_segment[*idx] = v.get<float>();
    }
    c.candidates.push_back(cand);
    c.compared.push_back(mask_from_json(cj.at("compared")));
  }
  return c;
}

std::filesystem::path state_file(const ServiceConfig& c, const char* name) { return c.state_dir / name; }

}  // namespace

std::string case_to_json(const AdjudicationCase& c) { return case_json(c).dump(); }

// ---------------------------------------------------------------------------
// DedupService

DedupService::DedupService(ServiceConfig config, PipelineStages stages)
    : DedupService(config, std::move(stages),
                   !config.gallery_path.empty() && std::filesystem::exists(config.gallery_path)
                       ? load_gallery(config.gallery_path, config.shard_size, config.max_rows)
                       : Gallery(config.shard_size, config.max_rows)) {}

DedupService::DedupService(ServiceConfig config, PipelineStages stages, Gallery gallery)
    : config_(std::move(config)), stages_(std::move(stages)), gallery_(std::move(gallery)) {
  if (!(config_.adjudication_threshold >= -1.0 && config_.adjudication_threshold <= 1.0) ||
      !(config_.verification_threshold >= -1.0 && config_.verification_threshold <= 1.0)) {
    raise(ErrorCode::Argument, "thresholds must lie in [-1, 1]");
  }
  if (config_.candidate_k == 0) raise(ErrorCode::Argument, "candidate_k must be at least 1");
  if (!config_.state_dir.empty()) {
    std::filesystem::create_directories(config_.state_dir);
    replay_cases();
  }
}

DedupService::~DedupService() {
  try {
    snapshot();
  } catch (...) {
    // Destructors must not throw; a failed final snapshot leaves the last one.
  }
}

void DedupService::replay_cases() {
  const auto cases_path = state_file(config_, "cases.jsonl");
  if (std::filesystem::exists(cases_path)) {
    std::istringstream in(read_text_file(cases_path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        AdjudicationCase c = case_from_stored(line);
        next_case_id_ = std::max(next_case_id_, c.id + 1);
        cases_[c.id] = std::move(c);
      } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::Format, std::string("corrupt case log: ") + e.what());
      }
    }
  }
  const auto audit_path = state_file(config_, "audit.jsonl");
  if (std::filesystem::exists(audit_path)) {
    std::istringstream in(read_text_file(audit_path));
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) audit_.push_back(line);
    }
  }
}

void DedupService::persist_case(const AdjudicationCase& c) {
  if (!config_.state_dir.empty()) append_line(state_file(config_, "cases.jsonl"), stored_case_json(c));
}

void DedupService::set_adjudication_threshold(double tau) {
  if (!(tau >= -1.0 && tau <= 1.0)) raise(ErrorCode::Argument, "threshold must lie in [-1, 1]");
  std::lock_guard writer(writer_mu_);
  config_.adjudication_threshold = tau;
}

GalleryId DedupService::commit(const MultiBiometricTemplate& probe) {
  GalleryId id = 0;
  bool snap = false;
  {
    std::unique_lock lock(gallery_mu_);
    id = gallery_.insert(probe.with_subject_id(gallery_.max_id() + 1));
    ++commits_since_snapshot_;
    snap = config_.snapshot_every > 0 && commits_since_snapshot_ >= config_.snapshot_every;
  }
  if (snap) snapshot();
  return id;
}

EnrollOutcome DedupService::enroll(const EnrollmentPacket& packet) {
  ++enrolls_;
  EnrollOutcome out;
  std::optional<PipelineResult> processed;
  try {
    processed.emplace(process_enrollment_packet(packet, stages_));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Malformed || e.code() == ErrorCode::Argument) throw;
    ++rejected_;
    out.kind = EnrollOutcome::Kind::Rejected;
    out.reason = fmt::format("{}: {}", to_string(e.code()), e.what());
    return out;
  }
  out.exceptions = processed->exceptions;
  if (!config_.state_dir.empty()) append_exceptions_jsonl(state_file(config_, "exceptions.jsonl"), out.exceptions);
  const MultiBiometricTemplate& probe = processed->tmpl;

  // Single writer: the search below sees every earlier commit, so two
  // captures of one identity can never both auto-enroll.
  std::lock_guard writer(writer_mu_);
  std::vector<PresenceMask> compared;
  {
    std::shared_lock lock(gallery_mu_);
    if (gallery_.size() >= gallery_.max_rows()) raise(ErrorCode::Capacity, "gallery is at capacity");
    if (gallery_.size() > 0) {
      SearchOptions o;
      o.k = config_.candidate_k;
      o.threads = config_.search_threads;
      const auto t0 = std::chrono::steady_clock::now();
      out.candidates = abis::search(gallery_, std::span(&probe, 1), config_.weights, o).front();
      search_nanos_ += static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count());
      ++probes_searched_;
      for (const auto& c : out.candidates) compared.push_back(probe.presence() & gallery_.view(c.id).presence);
    }
  }
  const bool duplicate = !out.candidates.empty() &&
                         decide(out.candidates.front().fused, DecisionThreshold(config_.adjudication_threshold)) ==
                             Decision::Duplicate;
  if (!duplicate) {
    out.kind = EnrollOutcome::Kind::Enrolled;
    out.gallery_id = commit(probe);
    ++enrolled_;
    return out;
  }
  AdjudicationCase c;
  c.packet_id = packet.packet_id;
  c.probe_record = serialize_template(probe);
  c.probe_presence = probe.presence();
  c.probe_quality = probe.quality();
  c.candidates = out.candidates;
  c.compared = std::move(compared);
  c.created_at = utc_timestamp();
  {
    std::lock_guard lock(cases_mu_);
    c.id = next_case_id_++;
    persist_case(c);
    cases_.emplace(c.id, c);
  }
  ++flagged_;
  out.kind = EnrollOutcome::Kind::Flagged;
  out.case_id = c.id;
  return out;
}

VerifyOutcome DedupService::verify(GalleryId id, const MultiBiometricTemplate& probe) {
  ++verifies_;
  std::shared_lock lock(gallery_mu_);
  if (!gallery_.contains(id)) raise(ErrorCode::NotFound, fmt::format("gallery id {} not found", id));
  VerifyOutcome v;
  v.score = fused_score(probe.view(), gallery_.view(id), config_.weights);
  v.decision = decide(v.score, DecisionThreshold(config_.verification_threshold));
  return v;
}

CandidateList DedupService::search(const MultiBiometricTemplate& probe, std::size_t k) {
  if (k == 0) raise(ErrorCode::Argument, "k must be at least 1");
  ++searches_;
  std::shared_lock lock(gallery_mu_);
  if (gallery_.size() == 0) return {};
  SearchOptions o;
  o.k = k;
  o.threads = config_.search_threads;
  const auto t0 = std::chrono::steady_clock::now();
  auto out = abis::search(gallery_, std::span(&probe, 1), config_.weights, o).front();
  search_nanos_ += static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count());
  ++probes_searched_;
  return out;
}

AdjudicationCase DedupService::adjudicate(std::uint64_t case_id, CaseState decision, const std::string& adjudicator) {
  if (decision == CaseState::Pending) raise(ErrorCode::Argument, "decision must be duplicate or unique");
  if (adjudicator.empty()) raise(ErrorCode::Argument, "adjudicator is required");
  std::lock_guard writer(writer_mu_);
  std::lock_guard lock(cases_mu_);
  const auto it = cases_.find(case_id);
  if (it == cases_.end()) raise(ErrorCode::NotFound, fmt::format("case {} not found", case_id));
  AdjudicationCase& c = it->second;
  if (c.state != CaseState::Pending) {
    raise(ErrorCode::StateConflict, fmt::format("case {} is already {}", case_id, to_string(c.state)));
  }
  AdjudicationCase next = c;
  if (decision == CaseState::Unique) {
    next.enrolled_id = commit(deserialize_template(c.probe_record));
  } else if (!c.candidates.empty()) {
    next.linked_id = c.candidates.front().id;
  }
  next.state = decision;
  next.adjudicator = adjudicator;
  next.decided_at = utc_timestamp();
  persist_case(next);

  ojson audit;
  audit["case_id"] = next.id;
  audit["decision"] = std::string(to_string(decision));
  audit["adjudicator"] = adjudicator;
  audit["timestamp"] = next.decided_at;
  audit["enrolled_id"] = next.enrolled_id ? ojson(*next.enrolled_id) : ojson(nullptr);
  audit["linked_id"] = next.linked_id ? ojson(*next.linked_id) : ojson(nullptr);
  const std::string record = audit.dump();
  if (!config_.state_dir.empty()) append_line(state_file(config_, "audit.jsonl"), record);
  audit_.push_back(record);
  c = std::move(next);
  ++decisions_;
  return c;
}

AdjudicationCase DedupService::get_case(std::uint64_t case_id) const {
  std::lock_guard lock(cases_mu_);
  const auto it = cases_.find(case_id);
  if (it == cases_.end()) raise(ErrorCode::NotFound, fmt::format("case {} not found", case_id));
  return it->second;
}

CasePage DedupService::list_cases(std::optional<CaseState> filter, std::string_view cursor,
                                  std::size_t page_size) const {
  if (page_size == 0 || page_size > config_.max_page_size) {
    raise(ErrorCode::Argument, fmt::format("page size must lie in [1, {}]", config_.max_page_size));
  }
  std::lock_guard lock(cases_mu_);
  std::uint64_t after = 0;
  if (!cursor.empty()) {
    const auto [ptr, ec] = std::from_chars(cursor.data(), cursor.data() + cursor.size(), after);
    if (ec != std::errc{} || ptr != cursor.data() + cursor.size() || after >= next_case_id_) {
      raise(ErrorCode::Argument, "invalid cursor \"" + std::string(cursor) + "\"");
    }
  }
  CasePage page;
  for (auto it = cases_.upper_bound(after); it != cases_.end(); ++it) {
    if (filter && it->second.state != *filter) continue;
    if (page.cases.size() == page_size) {
      page.next_cursor = std::to_string(page.cases.back().id);
      break;
    }
    page.cases.push_back(it->second);
  }
  return page;
}

ServiceStats DedupService::stats() const {
  ServiceStats s;
  {
    std::shared_lock lock(gallery_mu_);
    s.gallery_size = gallery_.size();
    s.shard_count = gallery_.shards().size();
  }
  {
    std::lock_guard lock(cases_mu_);
    s.pending_cases = static_cast<std::size_t>(std::count_if(
        cases_.begin(), cases_.end(), [](const auto& kv) { return kv.second.state == CaseState::Pending; }));
  }
  s.enrolls = enrolls_;
  s.enrolled = enrolled_;
  s.flagged = flagged_;
  s.rejected = rejected_;
  s.searches = searches_;
  s.verifies = verifies_;
  s.decisions = decisions_;
  s.probes_searched = probes_searched_;
  s.search_seconds = static_cast<double>(search_nanos_.load()) * 1e-9;
  return s;
}

std::size_t DedupService::gallery_size() const {
  std::shared_lock lock(gallery_mu_);
  return gallery_.size();
}

bool DedupService::gallery_contains(GalleryId id) const {
  std::shared_lock lock(gallery_mu_);
  return gallery_.contains(id);
}

std::vector<std::string> DedupService::audit_records() const {
  std::lock_guard lock(cases_mu_);
  return audit_;
}

void DedupService::snapshot() {
  if (config_.gallery_path.empty()) return;
  std::shared_lock lock(gallery_mu_);
  save_gallery(gallery_, config_.gallery_path);
  commits_since_snapshot_ = 0;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Malformed:
    case ErrorCode::Argument:
    case ErrorCode::Format:
    case ErrorCode::Dimension:
    case ErrorCode::DegenerateSegment:
    case ErrorCode::EmptyTemplate:
    case ErrorCode::Incomparable:
      return 400;
    case ErrorCode::NotFound: return 404;
    case ErrorCode::StateConflict:
    case ErrorCode::IdConflict:
      return 409;
    case ErrorCode::Capacity: return 503;
    default: return 500;
  }
}

void send_json(httplib::Response& res, const ojson& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_json(res, {{"error", std::string(to_string(e.code()))}, {"message", e.what()}}, status_for(e.code()));
  } catch (const nlohmann::json::exception& e) {
    send_json(res, {{"error", "malformed"}, {"message", e.what()}}, 400);
  } catch (const std::exception& e) {
    send_json(res, {{"error", "internal"}, {"message", e.what()}}, 500);
  }
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) raise(ErrorCode::Malformed, "request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::Malformed, std::string("request body is not valid JSON: ") + e.what());
  }
}

MultiBiometricTemplate template_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    raise(ErrorCode::Malformed, fmt::format("\"{}\" must be a base64 template record", key));
  }
  return deserialize_template(base64_decode(j.at(key).get<std::string>()));
}

std::uint64_t path_id(const httplib::Request& req) {
  std::uint64_t id = 0;
  const std::string s = req.matches[1];
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), id);
  if (ec != std::errc{} || ptr != s.data() + s.size()) raise(ErrorCode::NotFound, "no such case");
  return id;
}

ojson candidates_json(const CandidateList& list) {
  ojson a = ojson::array();
  for (const auto& c : list) a.push_back(candidate_json(c, nullptr));
  return a;
}

}  // namespace

struct HttpServer::Impl {
  DedupService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(DedupService& s) : service(s) {
    // Plain SO_REUSEADDR: a port already in use must fail to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    routes();
  }

  void routes() {
    server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, {{"status", "ok"}});
    });

    server.Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        const ServiceStats s = service.stats();
        send_json(res, {{"gallery_size", s.gallery_size},
                        {"shard_count", s.shard_count},
                        {"pending_cases", s.pending_cases},
                        {"enrolls", s.enrolls},
                        {"enrolled", s.enrolled},
                        {"flagged", s.flagged},
                        {"rejected", s.rejected},
                        {"searches", s.searches},
                        {"verifies", s.verifies},
                        {"decisions", s.decisions},
                        {"probes_searched", s.probes_searched},
                        {"search_seconds", s.search_seconds},
                        {"probes_per_second",
                         s.search_seconds > 0 ? static_cast<double>(s.probes_searched) / s.search_seconds : 0.0}});
      });
    });

    server.Post("/v1/enroll", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const EnrollOutcome o = service.enroll(parse_packet_json(req.body));
        ojson body;
        body["outcome"] = std::string(to_string(o.kind));
        if (o.kind == EnrollOutcome::Kind::Enrolled) body["gallery_id"] = o.gallery_id;
        if (o.kind == EnrollOutcome::Kind::Flagged) body["case_id"] = o.case_id;
        if (o.kind == EnrollOutcome::Kind::Rejected) body["reason"] = o.reason;
        ojson ex = ojson::array();
        for (const auto& e : o.exceptions) ex.push_back(ojson::parse(exception_to_json(e)));
        body["exceptions"] = std::move(ex);
        body["candidates"] = candidates_json(o.candidates);
        send_json(res, body);
      });
    });

    server.Post("/v1/verify", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto j = parse_body(req);
        if (!j.contains("id") || !j.at("id").is_number_unsigned()) raise(ErrorCode::Malformed, "\"id\" is required");
        const auto v = service.verify(j.at("id").get<GalleryId>(), template_field(j, "template"));
        Candidate c;
        c.id = j.at("id").get<GalleryId>();
        c.score = v.score.value;
        c.fused = v.score;
        ojson body = candidate_json(c, nullptr);
        body["decision"] = v.decision == Decision::Duplicate ? "match" : "no_match";
        send_json(res, body);
      });
    });

    server.Post("/v1/search", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto j = parse_body(req);
        std::size_t k = service.config().candidate_k;
        if (j.contains("k")) {
          if (!j.at("k").is_number_unsigned()) raise(ErrorCode::Argument, "\"k\" must be a positive integer");
          k = j.at("k").get<std::size_t>();
        }
        send_json(res, {{"candidates", candidates_json(service.search(template_field(j, "template"), k))}});
      });
    });

    server.Get("/v1/adjudication/cases", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<CaseState> filter;
        if (req.has_param("state") && !req.get_param_value("state").empty()) {
          filter = parse_case_state(req.get_param_value("state"));
        }
        std::size_t limit = 20;
        if (req.has_param("limit")) {
          const std::string s = req.get_param_value("limit");
          const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), limit);
          if (ec != std::errc{} || ptr != s.data() + s.size()) raise(ErrorCode::Argument, "invalid limit");
        }
        const CasePage page = service.list_cases(filter, req.get_param_value("cursor"), limit);
        ojson cases = ojson::array();
        for (const auto& c : page.cases) cases.push_back(case_json(c));
        send_json(res, {{"cases", std::move(cases)},
                        {"next_cursor", page.next_cursor ? ojson(*page.next_cursor) : ojson(nullptr)}});
      });
    });

    server.Get(R"(/v1/adjudication/cases/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, case_json(service.get_case(path_id(req)))); });
    });

    server.Post(R"(/v1/adjudication/cases/(\d+)/decision)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    const auto j = parse_body(req);
                    if (!j.contains("decision") || !j.at("decision").is_string()) {
                      raise(ErrorCode::Malformed, "\"decision\" is required");
                    }
                    const std::string adjudicator = j.value("adjudicator", std::string{});
                    const auto c = service.adjudicate(path_id(req), parse_case_state(j.at("decision").get<std::string>()),
                                                      adjudicator);
                    send_json(res, case_json(c));
                  });
                });

    if (!service.config().ui_dir.empty()) server.set_mount_point("/ui", service.config().ui_dir.string());
  }
};

HttpServer::HttpServer(DedupService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) raise(ErrorCode::Io, "cannot bind " + host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    raise(ErrorCode::Io, fmt::format("cannot bind {}:{} (address in use or not available)", host, port));
  }
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace abis
