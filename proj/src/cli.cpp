#include "abis/cli.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <signal.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "abis/eval.hpp"
#include "abis/kernels/kernels.hpp"
#include "abis/pipeline.hpp"
#include "abis/service.hpp"
#include "abis/synth.hpp"
#include "abis/util.hpp"

namespace abis {

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Argument:
      return kExitUsage;
    case ErrorCode::Dimension:
    case ErrorCode::EmptyTemplate:
    case ErrorCode::DegenerateSegment:
    case ErrorCode::Format:
    case ErrorCode::Malformed:
    case ErrorCode::IdConflict:
    case ErrorCode::Consistency:
    case ErrorCode::NotFound:
      return kExitData;
    default:
      return kExitRuntime;
  }
}

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void require_file(const fs::path& p, std::string_view what) {
  if (p.empty()) throw UsageError(fmt::format("{} path is required", what));
  if (!fs::is_regular_file(p)) throw UsageError(fmt::format("{} not found: {}", what, p.string()));
}

fs::path in_dir(const std::string& dir, std::string_view name) { return fs::path(dir) / std::string(name); }

SynthConfig load_generator_config(const std::string& path) {
  if (path.empty()) return default_synth_config();
  require_file(path, "generator config");
  return parse_synth_config(read_text_file(path));
}

FusionWeights load_weights(const std::string& path, const std::string& profile) {
  if (path.empty()) return default_weights();
  require_file(path, "weights file");
  return load_weight_profile(path, profile);
}

std::string subset_label(std::string spec) {
  std::replace(spec.begin(), spec.end(), ',', '+');
  return spec;
}

void check_rate(double r, std::string_view name) {
  if (!(r >= 0.0 && r <= 1.0)) throw UsageError(fmt::format("{} must be in [0, 1]", name));
}

std::vector<std::optional<GalleryId>> read_labels(const fs::path& path) {
  std::vector<std::optional<GalleryId>> out;
  const std::string text = read_text_file(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("mate_id")) {
      raise(ErrorCode::Format, fmt::format("bad label line {} in {}", out.size() + 1, path.string()));
    }
    const auto& m = j["mate_id"];
    if (m.is_null()) {
      out.emplace_back(std::nullopt);
    } else if (m.is_number_unsigned()) {
      out.emplace_back(m.get<GalleryId>());
    } else {
      raise(ErrorCode::Format, fmt::format("bad mate_id on line {} in {}", out.size() + 1, path.string()));
    }
  }
  return out;
}

std::string write_output(const fs::path& path, std::string_view content) {
  emit_report(content, path);
  return sha256_hex(content);
}

void write_manifest(const fs::path& dir, RunManifest m) {
  m.tool_version = std::string(kToolVersion);
  emit_report(manifest_to_json(m), dir / std::string(data_files::kManifest));
}

struct ReportFormats {
  bool csv = true;
  bool json = true;
};

ReportFormats parse_formats(const std::string& f) {
  if (f == "csv") return {true, false};
  if (f == "json") return {false, true};
  if (f == "both") return {true, true};
  throw UsageError("--format must be csv, json or both");
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::size_t n = 0;
  std::uint64_t seed = 1;
  std::string out;
  std::size_t mated = 5000;
  std::size_t nonmated = 5000;
  std::string generator;
  std::optional<double> missing_iris, missing_face, missing_finger;
  std::size_t threads = 4;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.n == 0) throw UsageError("--n must be at least 1");
  SynthConfig config = load_generator_config(a.generator);
  if (a.missing_iris) config.missing_iris_rate = *a.missing_iris;
  if (a.missing_face) config.missing_face_rate = *a.missing_face;
  if (a.missing_finger) config.missing_finger_rate = *a.missing_finger;
  check_rate(config.missing_iris_rate, "--missing-iris-rate");
  check_rate(config.missing_face_rate, "--missing-face-rate");
  check_rate(config.missing_finger_rate, "--missing-finger-rate");
  const std::size_t n_mated = std::min(a.mated, a.n);

  const auto t0 = Clock::now();
  auto gen = generate_gallery(a.n, config, a.seed, Gallery::kDefaultShardSize, a.threads);
  auto probes = generate_probe_sets(gen.registry, n_mated, a.nonmated, config, a.seed, a.threads);
  const double t_generate = seconds_since(t0);

  const auto t1 = Clock::now();
  fs::create_directories(a.out);
  const std::string config_json = synth_config_to_json(config);
  RunManifest m;
  m.command = "synth";
  m.seed = a.seed;
  m.config_sha256 = sha256_hex(config_json);
  m.parameters = {{"n", std::to_string(a.n)},
                  {"mated", std::to_string(n_mated)},
                  {"nonmated", std::to_string(a.nonmated)},
                  {"missing_iris_rate", fmt::format("{:.9g}", config.missing_iris_rate)},
                  {"missing_face_rate", fmt::format("{:.9g}", config.missing_face_rate)},
                  {"missing_finger_rate", fmt::format("{:.9g}", config.missing_finger_rate)}};
  if (!a.generator.empty()) m.input_checksums.emplace_back(a.generator, file_sha256_hex(a.generator));

  const auto file = [&](std::string_view name) { return in_dir(a.out, name); };
  save_gallery(gen.gallery, file(data_files::kGallery));
  save_templates(probes.mated, file(data_files::kMated));
  save_templates(probes.nonmated, file(data_files::kNonmated));
  emit_report(registry_to_jsonl(gen.registry), file(data_files::kRegistry));
  emit_report(probe_labels_to_jsonl(probes.mate_ids, probes.mated_identities), file(data_files::kMatedLabels));
  emit_report(probe_labels_to_jsonl({}, probes.nonmated_identities), file(data_files::kNonmatedLabels));
  emit_report(config_json, file(data_files::kGenerator));
  for (auto name : {data_files::kGallery, data_files::kMated, data_files::kNonmated, data_files::kRegistry,
                    data_files::kMatedLabels, data_files::kNonmatedLabels, data_files::kGenerator}) {
    m.output_checksums.emplace_back(std::string(name), file_sha256_hex(file(name)));
  }
  m.timings_seconds = {{"generate", t_generate}, {"write", seconds_since(t1)}};
  write_manifest(a.out, m);

  std::size_t no_iris = 0;
  for (const auto& shard : gen.gallery.shards()) {
    for (std::size_t r = 0; r < shard.size(); ++r) {
      const auto& p = shard.presence(r);
      if (!p.test(kIrisLeftSegment) && !p.test(kIrisRightSegment)) ++no_iris;
    }
  }
  fmt::print(out, "gallery {} rows ({} without irides), {} mated / {} non-mated probes -> {}\n", a.n, no_iris,
             n_mated, a.nonmated, a.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dedup-eval

struct EvalArgs {
  std::string data;
  std::string gallery, mated, mated_labels, nonmated;
  std::string weights, profile = "default";
  std::vector<std::string> subsets;
  bool combinations = false;
  double target_fpir = 1e-3;
  std::size_t k = kDefaultCandidateCount;
  std::size_t overscan = 4;
  bool exhaustive = false;
  std::size_t threads = 4;
  std::string out;
  std::string format = "both";
};

int cmd_dedup_eval(EvalArgs a, std::ostream& out) {
  const ReportFormats formats = parse_formats(a.format);
  if (!a.data.empty()) {
    if (a.gallery.empty()) a.gallery = in_dir(a.data, data_files::kGallery).string();
    if (a.mated.empty()) a.mated = in_dir(a.data, data_files::kMated).string();
    if (a.mated_labels.empty()) a.mated_labels = in_dir(a.data, data_files::kMatedLabels).string();
    if (a.nonmated.empty()) a.nonmated = in_dir(a.data, data_files::kNonmated).string();
  }
  require_file(a.gallery, "gallery file");
  require_file(a.mated, "mated probe file");
  require_file(a.mated_labels, "mated label file");
  require_file(a.nonmated, "non-mated probe file");
  if (!(a.target_fpir > 0.0 && a.target_fpir < 1.0)) throw UsageError("--target-fpir must be in (0, 1)");
  if (a.k == 0) throw UsageError("--k must be at least 1");
  const FusionWeights weights = load_weights(a.weights, a.profile);

  const auto t0 = Clock::now();
  const Gallery gallery = load_gallery(a.gallery);
  const auto mated = load_templates(a.mated);
  const auto nonmated = load_templates(a.nonmated);
  const auto labels = read_labels(a.mated_labels);
  if (labels.size() != mated.size()) {
    raise(ErrorCode::Format, fmt::format("{} labels for {} mated probes", labels.size(), mated.size()));
  }
  std::vector<GalleryId> mate_ids;
  mate_ids.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) raise(ErrorCode::Format, fmt::format("mated probe {} has no mate_id", i));
    mate_ids.push_back(*labels[i]);
  }
  const double t_load = seconds_since(t0);

  SearchOptions options;
  options.k = a.k;
  options.overscan = a.overscan;
  options.exhaustive = a.exhaustive;
  options.threads = a.threads;
  const ProbeInputs inputs{mated, mate_ids, nonmated};

  fs::create_directories(a.out);
  RunManifest m;
  m.command = "dedup-eval";
  m.config_sha256 = sha256_hex(weight_profiles_to_json(std::span(&weights, 1)));
  m.parameters = {{"profile", weights.profile()},
                  {"target_fpir", fmt::format("{:.9g}", a.target_fpir)},
                  {"k", std::to_string(a.k)},
                  {"overscan", std::to_string(a.overscan)},
                  {"exhaustive", a.exhaustive ? "true" : "false"}};
  for (const auto& p : {a.gallery, a.mated, a.mated_labels, a.nonmated}) {
    m.input_checksums.emplace_back(fs::path(p).filename().string(), file_sha256_hex(p));
  }
  const auto t1 = Clock::now();
  const fs::path dir(a.out);

  if (!a.subsets.empty() || a.combinations) {
    std::vector<Subset> subsets;
    if (a.combinations) subsets = default_subsets();
    for (const auto& s : a.subsets) subsets.push_back({subset_label(s), parse_modality_subset(s)});
    m.parameters.emplace_back("subsets", [&] {
      std::string names;
      for (const auto& s : subsets) names += (names.empty() ? "" : ";") + s.name;
      return names;
    }());
    const auto rows = combination_study(gallery, inputs, subsets, options, a.target_fpir, weights);
    if (formats.csv) m.output_checksums.emplace_back("combination.csv", write_output(dir / "combination.csv", combination_to_csv(rows)));
    if (formats.json) m.output_checksums.emplace_back("combination.json", write_output(dir / "combination.json", combination_to_json(rows)));
    fmt::print(out, "{:<16} {:>12} {:>12} {:>12}\n", "subset", "threshold", "fpir", "fnir");
    for (const auto& r : rows) {
      fmt::print(out, "{:<16} {:>12.6f} {:>12.6g} {:>12.6g}\n", r.subset, r.op.threshold, r.op.fpir.rate,
                 r.op.fnir.rate);
    }
  } else {
    const EvalResults results = evaluate(gallery, inputs, weights, options);
    const auto thresholds = det_thresholds(results.mated, results.nonmated, a.k);
    const auto det = det_curve(results.mated, results.nonmated, thresholds, a.k);
    const auto op = operating_point_at_fpir(results.mated, results.nonmated, a.target_fpir, a.k);
    if (formats.csv) m.output_checksums.emplace_back("det.csv", write_output(dir / "det.csv", det_to_csv(det)));
    if (formats.json) m.output_checksums.emplace_back("det.json", write_output(dir / "det.json", det_to_json(det)));
    nlohmann::ordered_json summary;
    summary["gallery_size"] = gallery.size();
    summary["n_mated"] = mated.size();
    summary["n_nonmated"] = nonmated.size();
    summary["profile"] = weights.profile();
    summary["k"] = a.k;
    summary["operating_point"] = nlohmann::ordered_json::parse(operating_point_to_json(op));
    m.output_checksums.emplace_back("summary.json", write_output(dir / "summary.json", summary.dump(2) + "\n"));
    fmt::print(out, "gallery {} | mated {} | non-mated {}\n", gallery.size(), mated.size(), nonmated.size());
    fmt::print(out, "threshold {:.6f}: FPIR {:.6g} ({}/{}), FNIR {:.6g} ({}/{}), rank-1 FNIR {:.6g}\n", op.threshold,
               op.fpir.rate, op.fpir.count, op.fpir.total, op.fnir.rate, op.fnir.count, op.fnir.total,
               op.fnir_rank1.rate);
  }
  m.timings_seconds = {{"load", t_load}, {"evaluate", seconds_since(t1)}};
  write_manifest(dir, m);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::vector<std::size_t> sizes;
  double tau = 0.0;
  std::uint64_t seed = 1;
  std::size_t mated = 1000;
  std::size_t nonmated = 2000;
  std::string generator;
  std::string weights, profile = "default";
  std::string subset;
  std::size_t k = kDefaultCandidateCount;
  std::size_t threads = 4;
  std::string out;
  std::string format = "both";
};

int cmd_sweep(SweepArgs a, std::ostream& out, std::ostream& err) {
  const ReportFormats formats = parse_formats(a.format);
  if (a.sizes.empty()) throw UsageError("--sizes is required");
  if (std::any_of(a.sizes.begin(), a.sizes.end(), [](std::size_t s) { return s == 0; })) {
    throw UsageError("gallery sizes must be positive");
  }
  if (!std::is_sorted(a.sizes.begin(), a.sizes.end())) {
    std::sort(a.sizes.begin(), a.sizes.end());
    fmt::print(err, "warning: gallery sizes were not ascending; using {}\n", fmt::join(a.sizes, ","));
  }
  if (std::adjacent_find(a.sizes.begin(), a.sizes.end()) != a.sizes.end()) {
    a.sizes.erase(std::unique(a.sizes.begin(), a.sizes.end()), a.sizes.end());
    fmt::print(err, "warning: duplicate gallery sizes removed; using {}\n", fmt::join(a.sizes, ","));
  }
  SweepSpec spec;
  spec.sizes = a.sizes;
  spec.tau = a.tau;
  spec.config = load_generator_config(a.generator);
  spec.seed = a.seed;
  spec.n_mated = std::min(a.mated, a.sizes.front());
  spec.n_nonmated = a.nonmated;
  spec.weights = load_weights(a.weights, a.profile);
  if (!a.subset.empty()) spec.weights = spec.weights.restricted(parse_modality_subset(a.subset), subset_label(a.subset));
  spec.options.k = a.k;
  spec.options.threads = a.threads;

  const auto t0 = Clock::now();
  const auto rows = gallery_size_sweep(spec);
  const double t_run = seconds_since(t0);

  fs::create_directories(a.out);
  const fs::path dir(a.out);
  RunManifest m;
  m.command = "sweep";
  m.seed = a.seed;
  m.config_sha256 = sha256_hex(synth_config_to_json(spec.config) + weight_profiles_to_json(std::span(&spec.weights, 1)));
  m.parameters = {{"sizes", fmt::format("{}", fmt::join(a.sizes, ","))},
                  {"tau", fmt::format("{:.9g}", a.tau)},
                  {"mated", std::to_string(spec.n_mated)},
                  {"nonmated", std::to_string(spec.n_nonmated)},
                  {"profile", spec.weights.profile()},
                  {"k", std::to_string(a.k)}};
  if (!a.generator.empty()) m.input_checksums.emplace_back(a.generator, file_sha256_hex(a.generator));
  if (formats.csv) m.output_checksums.emplace_back("sweep.csv", write_output(dir / "sweep.csv", sweep_to_csv(rows)));
  if (formats.json) m.output_checksums.emplace_back("sweep.json", write_output(dir / "sweep.json", sweep_to_json(rows)));
  m.timings_seconds = {{"sweep", t_run}};
  write_manifest(dir, m);

  fmt::print(out, "{:>10} {:>12} {:>12}\n", "n", "fpir", "fnir");
  for (const auto& r : rows) fmt::print(out, "{:>10} {:>12.6g} {:>12.6g}\n", r.n, r.op.fpir.rate, r.op.fnir.rate);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchArgs {
  std::string gallery;
  std::size_t synth = 0;
  std::uint64_t seed = 1;
  std::string generator;
  std::vector<std::size_t> batches{1, 1000};
  std::size_t min_probes = 16;
  std::size_t threads = 4;
  std::size_t k = kDefaultCandidateCount;
  std::string out;
};

struct BenchRow {
  std::size_t batch = 0;
  std::size_t probes = 0;
  double seconds = 0.0;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.gallery.empty() == (a.synth == 0)) throw UsageError("exactly one of --gallery or --synth N is required");
  if (a.batches.empty() || std::any_of(a.batches.begin(), a.batches.end(), [](std::size_t b) { return b == 0; })) {
    throw UsageError("batch sizes must be positive");
  }
  const SynthConfig config = load_generator_config(a.generator);
  Gallery gallery;
  if (!a.gallery.empty()) {
    require_file(a.gallery, "gallery file");
    gallery = load_gallery(a.gallery);
  } else {
    gallery = std::move(generate_gallery(a.synth, config, a.seed, Gallery::kDefaultShardSize, a.threads).gallery);
  }
  if (gallery.size() == 0) throw UsageError("gallery is empty");

  std::size_t n_probes = 0;
  for (std::size_t b : a.batches) n_probes = std::max(n_probes, b * std::max<std::size_t>(1, (a.min_probes + b - 1) / b));
  std::vector<MultiBiometricTemplate> probes;
  probes.reserve(n_probes);
  for (std::size_t i = 0; i < n_probes; ++i) probes.push_back(probe_observation(config, a.seed, i % gallery.size()));

  const FusionWeights weights = default_weights();
  SearchOptions options;
  options.k = a.k;
  options.threads = a.threads;
  PresenceMask scanned;
  for (const auto& p : probes) scanned |= p.presence();
  std::size_t dims = 0;
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (scanned.test(s) && weights[s] > 0.0) dims += segment_layout()[s].length;
  }

  search(gallery, std::span(probes.data(), 1), weights, options);  // warm-up
  std::vector<BenchRow> rows;
  for (std::size_t b : a.batches) {
    const std::size_t n_batches = std::max<std::size_t>(1, (a.min_probes + b - 1) / b);
    const auto t0 = Clock::now();
    for (std::size_t i = 0; i < n_batches; ++i) search(gallery, std::span(probes.data() + i * b, b), weights, options);
    rows.push_back({b, b * n_batches, seconds_since(t0)});
  }

  nlohmann::ordered_json report;
  report["gallery_rows"] = gallery.size();
  report["scanned_dims"] = dims;
  report["threads"] = a.threads;
  report["kernel"] = std::string(kernels::active().name);
  report["k"] = a.k;
  const double gallery_bytes = static_cast<double>(gallery.size()) * static_cast<double>(dims) * sizeof(float);
  fmt::print(out, "gallery {} rows, {} dims scanned, kernel {}, {} threads\n", gallery.size(), dims,
             kernels::active().name, a.threads);
  fmt::print(out, "{:>7} {:>7} {:>10} {:>10} {:>12} {:>9} {:>9}\n", "batch", "probes", "seconds", "probes/s", "ms/probe",
             "GB/s", "GFLOP/s");
  auto& list = report["batches"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    const double pps = static_cast<double>(r.probes) / r.seconds;
    const double n_batches = static_cast<double>(r.probes / r.batch);
    // One logical pass over the scanned gallery columns per batch.
    const double gbs = gallery_bytes * n_batches / r.seconds / 1e9;
    const double gflops = 2.0 * static_cast<double>(gallery.size()) * static_cast<double>(dims) *
                          static_cast<double>(r.probes) / r.seconds / 1e9;
    list.push_back({{"batch_size", r.batch},
                    {"n_probes", r.probes},
                    {"seconds", r.seconds},
                    {"probes_per_s", pps},
                    {"ms_per_probe", 1e3 / pps},
                    {"gb_per_s", gbs},
                    {"gflop_per_s", gflops}});
    fmt::print(out, "{:>7} {:>7} {:>10.3f} {:>10.2f} {:>12.3f} {:>9.2f} {:>9.2f}\n", r.batch, r.probes, r.seconds, pps,
               1e3 / pps, gbs, gflops);
  }
  const auto per_probe = [](const BenchRow& r) { return r.seconds / static_cast<double>(r.probes); };
  const auto [lo, hi] = std::minmax_element(rows.begin(), rows.end(),
                                            [](const BenchRow& x, const BenchRow& y) { return x.batch < y.batch; });
  const double speedup = per_probe(*lo) / per_probe(*hi);
  report["per_probe_speedup"] = speedup;
  fmt::print(out, "per-probe speedup batch {} vs {}: {:.2f}x\n", hi->batch, lo->batch, speedup);
  if (!a.out.empty()) emit_report(report.dump(2) + "\n", a.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::string gallery;
  bool create_gallery = false;
  std::string state_dir;
  std::string ui_dir;
  std::string weights, profile = "default";
  double adjudication_threshold = 0.2;
  double verification_threshold = 0.2;
  std::size_t candidate_k = 10;
  std::size_t threads = 4;
  std::size_t snapshot_every = 1000;
  std::string pipeline = "stub";
  std::uint64_t stub_seed = 0;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  if (a.gallery.empty()) throw UsageError("--gallery is required");
  if (!a.create_gallery) require_file(a.gallery, "gallery file");
  if (a.port < 0 || a.port > 65535) throw UsageError("--port must be in [0, 65535]");
  if (a.pipeline != "stub" && a.pipeline != "permissive") throw UsageError("--pipeline must be stub or permissive");
  ServiceConfig config;
  config.bind_address = a.bind;
  config.port = a.port;
  config.gallery_path = a.gallery;
  config.state_dir = a.state_dir;
  config.ui_dir = a.ui_dir;
  config.weights = load_weights(a.weights, a.profile);
  config.adjudication_threshold = a.adjudication_threshold;
  config.verification_threshold = a.verification_threshold;
  config.candidate_k = a.candidate_k;
  config.search_threads = a.threads;
  config.snapshot_every = a.snapshot_every;
  PipelineStages stages = a.pipeline == "stub" ? stub_stages(StubConfig{a.stub_seed}) : permissive_stages();

  // Handled by sigwait below, never asynchronously.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  DedupService service(config, std::move(stages));
  HttpServer server(service);
  const int port = server.start(a.bind, a.port);
  fmt::print(out, "listening on {}:{} ({} gallery rows)\n", a.bind, port, service.gallery_size());
  out.flush();
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  fmt::print(out, "stopped on signal {}\n", sig);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::uint64_t seed = 1;
  std::string generator;
  std::string out;
  std::size_t n_mated = 200'000;
  bool verify = false;
  std::size_t verify_mated = 100'000;
  std::size_t threads = 4;
};

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  SynthConfig config = load_generator_config(a.generator);
  CalibrationOptions options;
  options.n_mated = a.n_mated;
  const auto t0 = Clock::now();
  config = calibrate_config(config, a.seed, options);
  fmt::print(out, "kappa_face {:.9g}\nkappa_iris {:.9g}\nkappa_finger {:.9g}\n({:.1f} s)\n", config.kappa_face,
             config.kappa_iris, config.kappa_finger, seconds_since(t0));
  if (!a.out.empty()) emit_report(synth_config_to_json(config), a.out);
  if (a.verify) {
    const std::pair<std::size_t, Modality> checks[] = {{kFaceSegment, Modality::Face},
                                                       {kIrisLeftSegment, Modality::Iris},
                                                       {finger_segment(7), Modality::Finger}};
    for (const auto& [segment, modality] : checks) {
      const auto target = config.target(modality);
      const auto v = verify_segment(config, segment, target.fmr, a.seed + 1, a.verify_mated, 1100, a.threads);
      fmt::print(out, "{:<12} TMR {:.4f} (target {:.4f}) at FMR {:g}, threshold {:.6f}\n", segment_name(segment),
                 v.tmr, target.tmr, target.fmr, v.threshold);
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-biometric de-duplication toolkit", "abis"};
  app.set_config("--config", "", "TOML file with option values");
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  std::string simd;
  app.add_option("--simd", simd, "Force a kernel variant (scalar, avx2, avx512, neon)");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic gallery, probe sets and truth registry");
  s->add_option("--n", synth.n, "Gallery identities")->required();
  s->add_option("--seed", synth.seed, "Master seed");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--mated", synth.mated, "Mated probes (capped at --n)");
  s->add_option("--nonmated", synth.nonmated, "Non-mated probes");
  s->add_option("--generator-config", synth.generator, "Generator config JSON");
  s->add_option("--missing-iris-rate", synth.missing_iris, "Share of identities without irides");
  s->add_option("--missing-face-rate", synth.missing_face, "Share of identities without a face");
  s->add_option("--missing-finger-rate", synth.missing_finger, "Per-finger missing probability");
  s->add_option("--threads", synth.threads)->check(CLI::PositiveNumber);

  EvalArgs eval;
  auto* e = app.add_subcommand("dedup-eval", "Search probe sets and report DET / operating points");
  e->add_option("--data", eval.data, "Directory written by synth");
  e->add_option("--gallery", eval.gallery);
  e->add_option("--mated", eval.mated);
  e->add_option("--mated-labels", eval.mated_labels);
  e->add_option("--nonmated", eval.nonmated);
  e->add_option("--weights", eval.weights, "Weight profile JSON");
  e->add_option("--profile", eval.profile, "Profile name inside --weights");
  e->add_option("--subset", eval.subsets, "Modality subset, e.g. face,irides (repeatable)");
  e->add_flag("--combinations", eval.combinations, "Run every default modality subset");
  e->add_option("--target-fpir", eval.target_fpir);
  e->add_option("--k", eval.k);
  e->add_option("--overscan", eval.overscan);
  e->add_flag("--exhaustive", eval.exhaustive);
  e->add_option("--threads", eval.threads)->check(CLI::PositiveNumber);
  e->add_option("--out", eval.out, "Report directory")->required();
  e->add_option("--format", eval.format, "csv, json or both");

  SweepArgs sweep;
  auto* w = app.add_subcommand("sweep", "FPIR/FNIR at a fixed threshold over nested gallery sizes");
  w->add_option("--sizes", sweep.sizes)->required()->delimiter(',');
  w->add_option("--tau", sweep.tau, "Decision threshold")->required();
  w->add_option("--seed", sweep.seed);
  w->add_option("--mated", sweep.mated);
  w->add_option("--nonmated", sweep.nonmated);
  w->add_option("--generator-config", sweep.generator);
  w->add_option("--weights", sweep.weights);
  w->add_option("--profile", sweep.profile);
  w->add_option("--subset", sweep.subset, "Restrict the weights to a modality subset");
  w->add_option("--k", sweep.k);
  w->add_option("--threads", sweep.threads)->check(CLI::PositiveNumber);
  w->add_option("--out", sweep.out)->required();
  w->add_option("--format", sweep.format);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Search throughput by batch size");
  b->add_option("--gallery", bench.gallery);
  b->add_option("--synth", bench.synth, "Generate an N-row gallery instead of loading one");
  b->add_option("--seed", bench.seed);
  b->add_option("--generator-config", bench.generator);
  b->add_option("--batch", bench.batches)->delimiter(',');
  b->add_option("--min-probes", bench.min_probes, "Probes timed per batch size (rounded up to whole batches)");
  b->add_option("--threads", bench.threads)->check(CLI::PositiveNumber);
  b->add_option("--k", bench.k);
  b->add_option("--out", bench.out, "JSON report path");

  ServeArgs serve;
  auto* v = app.add_subcommand("serve", "Run the HTTP de-duplication service");
  v->add_option("--bind", serve.bind);
  v->add_option("--port", serve.port);
  v->add_option("--gallery", serve.gallery);
  v->add_flag("--create-gallery", serve.create_gallery, "Start empty when the gallery file is absent");
  v->add_option("--state-dir", serve.state_dir);
  v->add_option("--ui-dir", serve.ui_dir);
  v->add_option("--weights", serve.weights);
  v->add_option("--profile", serve.profile);
  v->add_option("--adjudication-threshold", serve.adjudication_threshold);
  v->add_option("--verification-threshold", serve.verification_threshold);
  v->add_option("--candidate-k", serve.candidate_k);
  v->add_option("--threads", serve.threads)->check(CLI::PositiveNumber);
  v->add_option("--snapshot-every", serve.snapshot_every);
  v->add_option("--pipeline", serve.pipeline, "stub or permissive");
  v->add_option("--stub-seed", serve.stub_seed);

  CalibrateArgs calibrate;
  auto* c = app.add_subcommand("calibrate", "Fit noise concentrations to the operating targets");
  c->add_option("--seed", calibrate.seed);
  c->add_option("--generator-config", calibrate.generator);
  c->add_option("--out", calibrate.out, "Write the calibrated generator config here");
  c->add_option("--n-mated", calibrate.n_mated);
  c->add_flag("--verify", calibrate.verify, "Re-check each operating point on fresh samples");
  c->add_option("--verify-mated", calibrate.verify_mated);
  c->add_option("--threads", calibrate.threads)->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!simd.empty() && !kernels::force(simd)) throw UsageError(fmt::format("kernel variant {} unavailable", simd));
    if (*s) return cmd_synth(synth, out);
    if (*e) return cmd_dedup_eval(eval, out);
    if (*w) return cmd_sweep(sweep, out, err);
    if (*b) return cmd_bench(bench, out);
    if (*v) return cmd_serve(serve, out);
    if (*c) return cmd_calibrate(calibrate, out);
  } catch (const UsageError& ex) {
    fmt::print(err, "error: {}\n", ex.what());
    return kExitUsage;
  } catch (const Error& ex) {
    fmt::print(err, "error [{}]: {}\n", to_string(ex.code()), ex.what());
    return exit_code_for(ex.code());
  } catch (const std::exception& ex) {
    fmt::print(err, "error: {}\n", ex.what());
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace abis
