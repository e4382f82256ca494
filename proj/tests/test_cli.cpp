#include <doctest.h>

#include <chrono>
#include <fstream>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <boost/math/distributions/binomial.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "abis/cli.hpp"
#include "abis/eval.hpp"
#include "abis/index.hpp"
#include "abis/service.hpp"
#include "abis/synth.hpp"
#include "abis/util.hpp"
#include "support.hpp"

using namespace abis;
using Json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

CliRun synth(const fs::path& dir, std::size_t n, std::size_t mated, std::size_t nonmated, std::uint64_t seed = 1,
             std::vector<std::string> extra = {}) {
  std::vector<std::string> args{"synth", "--n", std::to_string(n), "--out", dir.string(), "--mated",
                                std::to_string(mated), "--nonmated", std::to_string(nonmated), "--seed",
                                std::to_string(seed), "--threads", "1"};
  args.insert(args.end(), extra.begin(), extra.end());
  return run(args);
}

std::string slurp(const fs::path& p) { return read_text_file(p); }

// Child process running the real binary with stdout and stderr captured to files.
struct Child {
  pid_t pid = -1;
  fs::path out;

  Child(const std::vector<std::string>& args, const fs::path& log) : out(log) {
    pid = fork();
    if (pid == 0) {
      const int fd = open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      dup2(fd, 1);
      dup2(fd, 2);
      std::vector<char*> argv;
      std::string bin = ABIS_CLI_BINARY;
      argv.push_back(bin.data());
      std::vector<std::string> copy = args;
      for (auto& a : copy) argv.push_back(a.data());
      argv.push_back(nullptr);
      execv(bin.c_str(), argv.data());
      _exit(127);
    }
  }

  // Waits for the "listening on host:port" line; returns the port or -1 if the child exits first.
  int wait_listening() {
    for (int i = 0; i < 600; ++i) {
      std::ifstream in(out);
      std::string line;
      while (std::getline(in, line)) {
        const auto at = line.find("listening on ");
        if (at != std::string::npos) {
          const auto colon = line.find(':', at);
          return std::stoi(line.substr(colon + 1));
        }
      }
      int status = 0;
      if (waitpid(pid, &status, WNOHANG) == pid) {
        exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        pid = -1;
        return -1;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    return -1;
  }

  int terminate() {
    if (pid < 0) return exit_status;
    kill(pid, SIGTERM);
    int status = 0;
    waitpid(pid, &status, 0);
    pid = -1;
    exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return exit_status;
  }

  ~Child() {
    if (pid > 0) {
      kill(pid, SIGKILL);
      waitpid(pid, nullptr, 0);
    }
  }

  int exit_status = -1;
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("exit codes for usage and data errors") {
    test::TempDir dir;
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({"--version"}).code == kExitOk);
    const auto zero = run({"synth", "--n", "0", "--out", (dir / "x").string()});
    CHECK(zero.code == kExitUsage);
    CHECK(zero.err.find("--n") != std::string::npos);
    CHECK(run({"synth", "--n", "5", "--out", (dir / "x").string(), "--missing-iris-rate", "1.5"}).code == kExitUsage);

    const auto missing = run({"dedup-eval", "--gallery", (dir / "none.bgal").string(), "--mated",
                              (dir / "none.tpl").string(), "--out", (dir / "r").string()});
    CHECK(missing.code == kExitUsage);
    CHECK(missing.err.find("not found") != std::string::npos);

    save_gallery(Gallery{}, dir / "empty.bgal");
    CHECK(run({"bench", "--gallery", (dir / "empty.bgal").string()}).code == kExitUsage);
    CHECK(run({"bench"}).code == kExitUsage);

    {
      std::ofstream(dir / "corrupt.bgal") << "this is not a gallery file at all, not even close";
    }
    const auto corrupt = run({"bench", "--gallery", (dir / "corrupt.bgal").string()});
    CHECK(corrupt.code == kExitData);
    CHECK(corrupt.err.find("format") != std::string::npos);
    CHECK(run({"--simd", "no-such-variant", "bench", "--synth", "10"}).code == kExitUsage);
    CHECK(run({"serve", "--gallery", (dir / "absent.bgal").string()}).code == kExitUsage);
    CHECK(exit_code_for(ErrorCode::Io) == kExitRuntime);
    CHECK(exit_code_for(ErrorCode::Format) == kExitData);
    CHECK(exit_code_for(ErrorCode::Argument) == kExitUsage);
  }

  TEST_CASE("synth writes a complete, reproducible data set") {
    test::TempDir dir;
    REQUIRE(synth(dir / "a", 200, 50, 80, 9).code == kExitOk);
    REQUIRE(synth(dir / "b", 200, 50, 80, 9).code == kExitOk);
    for (auto name : {data_files::kGallery, data_files::kRegistry, data_files::kMated, data_files::kMatedLabels,
                      data_files::kNonmated, data_files::kNonmatedLabels, data_files::kGenerator}) {
      const auto a = dir / "a" / std::string(name);
      REQUIRE(fs::exists(a));
      CHECK(file_sha256_hex(a) == file_sha256_hex(dir / "b" / std::string(name)));
    }
    const auto manifest = Json::parse(slurp(dir / "a" / std::string(data_files::kManifest)));
    CHECK(manifest["command"] == "synth");
    CHECK(manifest["seed"] == 9);
    CHECK(manifest["outputs"][std::string(data_files::kGallery)] ==
          file_sha256_hex(dir / "a" / std::string(data_files::kGallery)));

    const Gallery g = load_gallery(dir / "a" / std::string(data_files::kGallery));
    CHECK(g.size() == 200);
    CHECK(load_templates(dir / "a" / std::string(data_files::kMated)).size() == 50);
    CHECK(load_templates(dir / "a" / std::string(data_files::kNonmated)).size() == 80);
    CHECK(fs::file_size(dir / "a" / std::string(data_files::kGallery)) == 24 + 200 * 13'902);

    REQUIRE(synth(dir / "c", 200, 50, 80, 10).code == kExitOk);
    CHECK(file_sha256_hex(dir / "c" / std::string(data_files::kGallery)) !=
          file_sha256_hex(dir / "a" / std::string(data_files::kGallery)));

    // Mated probe count is capped at the gallery size.
    REQUIRE(synth(dir / "d", 20, 50, 5, 9).code == kExitOk);
    CHECK(load_templates(dir / "d" / std::string(data_files::kMated)).size() == 20);
  }

  TEST_CASE("missing iris rate is honoured") {
    test::TempDir dir;
    const std::size_t n = 2000;
    REQUIRE(synth(dir / "d", n, 1, 1, 3, {"--missing-iris-rate", "0.25"}).code == kExitOk);
    const Gallery g = load_gallery(dir / "d" / std::string(data_files::kGallery));
    std::size_t no_iris = 0;
    for (const auto& shard : g.shards()) {
      for (std::size_t r = 0; r < shard.size(); ++r) {
        const auto& p = shard.presence(r);
        if (!p.test(kIrisLeftSegment) && !p.test(kIrisRightSegment)) ++no_iris;
      }
    }
    const boost::math::binomial_distribution<> bin(static_cast<double>(n), 0.25);
    CHECK(static_cast<double>(no_iris) >= boost::math::quantile(bin, 0.0005));
    CHECK(static_cast<double>(no_iris) <= boost::math::quantile(bin, 0.9995));
  }

  TEST_CASE("dedup-eval reports and is byte-reproducible") {
    test::TempDir dir;
    REQUIRE(synth(dir / "d", 300, 100, 200, 4).code == kExitOk);
    const std::vector<std::string> base{"dedup-eval", "--data", (dir / "d").string(), "--threads", "1",
                                        "--target-fpir", "0.01"};
    auto args = base;
    args.insert(args.end(), {"--out", (dir / "r1").string()});
    const auto r1 = run(args);
    REQUIRE(r1.code == kExitOk);
    args = base;
    args.insert(args.end(), {"--out", (dir / "r2").string()});
    REQUIRE(run(args).code == kExitOk);
    for (auto name : {"det.csv", "det.json", "summary.json"}) {
      CHECK(slurp(dir / "r1" / name) == slurp(dir / "r2" / name));
    }
    const auto summary = Json::parse(slurp(dir / "r1" / "summary.json"));
    CHECK(summary["gallery_size"] == 300);
    CHECK(summary["n_mated"] == 100);
    CHECK(summary["operating_point"]["fpir"].get<double>() <= 0.01);
    CHECK(summary["operating_point"]["n_mated"] == 100);
    CHECK(slurp(dir / "r1" / "det.csv").rfind("threshold,", 0) == 0);
    const auto manifest = Json::parse(slurp(dir / "r1" / "manifest.json"));
    CHECK(manifest["outputs"]["det.csv"] == file_sha256_hex(dir / "r1" / "det.csv"));
    CHECK(manifest["inputs"].contains("gallery.bgal"));

    args = base;
    args.insert(args.end(), {"--out", (dir / "r3").string(), "--combinations", "--subset", "face,irides",
                             "--format", "json"});
    REQUIRE(run(args).code == kExitOk);
    const auto combo = Json::parse(slurp(dir / "r3" / "combination.json"));
    CHECK(combo.size() == default_subsets().size() + 1);
    CHECK(combo.back()["subset"] == "face+irides");
    CHECK_FALSE(fs::exists(dir / "r3" / "combination.csv"));

    args = base;
    args.insert(args.end(), {"--out", (dir / "r4").string(), "--format", "yaml"});
    CHECK(run(args).code == kExitUsage);
    args = base;
    args.insert(args.end(), {"--out", (dir / "r4").string(), "--subset", "face,ears"});
    CHECK(run(args).code == kExitUsage);
  }

  TEST_CASE("single-size sweep matches an evaluation of the same synthetic data") {
    test::TempDir dir;
    const double tau = 0.25;
    REQUIRE(run({"sweep", "--sizes", "400", "--tau", "0.25", "--seed", "6", "--mated", "80", "--nonmated", "120",
                 "--threads", "1", "--out", (dir / "s").string()})
                .code == kExitOk);
    REQUIRE(synth(dir / "d", 400, 80, 120, 6).code == kExitOk);
    const Gallery g = load_gallery(dir / "d" / std::string(data_files::kGallery));
    const auto mated = load_templates(dir / "d" / std::string(data_files::kMated));
    const auto nonmated = load_templates(dir / "d" / std::string(data_files::kNonmated));
    std::vector<GalleryId> mate_ids;
    std::istringstream labels(slurp(dir / "d" / std::string(data_files::kMatedLabels)));
    for (std::string line; std::getline(labels, line);) mate_ids.push_back(Json::parse(line)["mate_id"]);
    SearchOptions o;
    o.threads = 1;
    const auto r = evaluate(g, ProbeInputs{mated, mate_ids, nonmated}, default_weights(), o);
    const auto op = operating_point_at_threshold(r.mated, r.nonmated, tau, o.k);
    const auto rows = Json::parse(slurp(dir / "s" / "sweep.json"));
    REQUIRE(rows.size() == 1);
    CHECK(rows[0]["n"] == 400);
    CHECK(rows[0]["n_fp"] == op.fpir.count);
    CHECK(rows[0]["n_fn"] == op.fnir.count);
    CHECK(rows[0]["n_mated"] == 80);
    CHECK(rows[0]["n_nonmated"] == 120);
  }

  TEST_CASE("sweep sorts sizes with a warning") {
    test::TempDir dir;
    const auto r = run({"sweep", "--sizes", "300,100,300", "--tau", "0.2", "--mated", "20", "--nonmated", "30",
                        "--threads", "1", "--out", (dir / "s").string(), "--format", "csv"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.err.find("not ascending") != std::string::npos);
    CHECK(r.err.find("duplicate") != std::string::npos);
    const auto csv = slurp(dir / "s" / "sweep.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.find("\n100,") != std::string::npos);
    CHECK(csv.find("\n300,") != std::string::npos);
    CHECK(run({"sweep", "--sizes", "0,10", "--tau", "0.2", "--out", (dir / "t").string()}).code == kExitUsage);
  }

  TEST_CASE("bench report schema") {
    test::TempDir dir;
    const auto r = run({"bench", "--synth", "300", "--batch", "1,8", "--min-probes", "8", "--threads", "1", "--out",
                        (dir / "bench.json").string()});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("probes/s") != std::string::npos);
    const auto j = Json::parse(slurp(dir / "bench.json"));
    CHECK(j["gallery_rows"] == 300);
    CHECK(j["scanned_dims"] == kTemplateDim);
    REQUIRE(j["batches"].size() == 2);
    for (const auto& b : j["batches"]) {
      CHECK(b["n_probes"] == 8);
      CHECK(b["probes_per_s"].get<double>() > 0.0);
      CHECK(b["gb_per_s"].get<double>() > 0.0);
      CHECK(b["gflop_per_s"].get<double>() > 0.0);
    }
    CHECK(j["batches"][0]["batch_size"] == 1);
    CHECK(j["batches"][1]["batch_size"] == 8);
  }

  TEST_CASE("generator config flows through calibrate and synth") {
    test::TempDir dir;
    write_text_file(dir / "gen.json", synth_config_to_json(default_synth_config()));
    REQUIRE(synth(dir / "a", 50, 10, 10, 2, {"--generator-config", (dir / "gen.json").string()}).code == kExitOk);
    REQUIRE(synth(dir / "b", 50, 10, 10, 2).code == kExitOk);
    CHECK(file_sha256_hex(dir / "a" / std::string(data_files::kGallery)) ==
          file_sha256_hex(dir / "b" / std::string(data_files::kGallery)));
    write_text_file(dir / "bad.json", "{\"kappa_face\": \"high\"}");
    CHECK(synth(dir / "c", 50, 10, 10, 2, {"--generator-config", (dir / "bad.json").string()}).code == kExitUsage);
  }

  TEST_CASE("serve answers health and stops on SIGTERM") {
    test::TempDir dir;
    REQUIRE(synth(dir / "d", 30, 1, 1, 5).code == kExitOk);
    Child child({"serve", "--gallery", (dir / "d" / std::string(data_files::kGallery)).string(), "--port", "0",
                 "--threads", "1", "--state-dir", (dir / "state").string()},
                dir / "serve.log");
    const int port = child.wait_listening();
    REQUIRE_MESSAGE(port > 0, slurp(dir / "serve.log"));
    httplib::Client cli("127.0.0.1", port);
    const auto health = cli.Get("/v1/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    const auto stats = cli.Get("/v1/stats");
    REQUIRE(stats);
    CHECK(Json::parse(stats->body)["gallery_size"] == 30);

    // A second server on the same port fails with a runtime error.
    Child clash({"serve", "--gallery", (dir / "d" / std::string(data_files::kGallery)).string(), "--port",
                 std::to_string(port), "--threads", "1"},
                dir / "clash.log");
    CHECK(clash.wait_listening() == -1);
    CHECK(clash.exit_status == kExitRuntime);
    CHECK(slurp(dir / "clash.log").find("io") != std::string::npos);

    CHECK(child.terminate() == kExitOk);
    CHECK(slurp(dir / "serve.log").find("stopped on signal") != std::string::npos);
  }

  TEST_CASE("serve can start from an absent gallery") {
    test::TempDir dir;
    Child child({"serve", "--gallery", (dir / "new.bgal").string(), "--create-gallery", "--port", "0", "--threads",
                 "1"},
                dir / "serve.log");
    const int port = child.wait_listening();
    REQUIRE_MESSAGE(port > 0, slurp(dir / "serve.log"));
    httplib::Client cli("127.0.0.1", port);
    std::mt19937_64 rng(301);
    const auto r = cli.Post("/v1/enroll", packet_to_json(packet_from_template(test::random_template(rng), "p")),
                            "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(child.terminate() == kExitOk);
    // The gallery is snapshotted on shutdown.
    CHECK(load_gallery(dir / "new.bgal").size() <= 1);
  }
}

TEST_SUITE("cli-properties") {
  TEST_CASE("any single corrupted byte in a gallery file is a data error") {
    test::TempDir dir;
    std::mt19937_64 rng(311);
    Gallery g;
    for (GalleryId id = 1; id <= 2; ++id) g.insert(test::random_template(rng, id));
    save_gallery(g, dir / "ok.bgal");
    const std::string bytes = slurp(dir / "ok.bgal");
    const auto bad = (dir / "bad.bgal").string();
    for (int c = 0; c < test::kCases; ++c) {
      std::string copy = bytes;
      const auto at = rng() % copy.size();
      copy[at] = static_cast<char>(copy[at] ^ static_cast<char>(1 + rng() % 255));
      write_text_file(bad, copy);
      const auto r = run({"bench", "--gallery", bad, "--batch", "1", "--min-probes", "1", "--threads", "1"});
      REQUIRE_MESSAGE(r.code == kExitData, "byte " << at);
    }
  }
}
