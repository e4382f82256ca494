#include <doctest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "abis/error.hpp"
#include "abis/eval.hpp"
#include "support.hpp"

using namespace abis;
using abis::test::code_of;

namespace {

IdentificationResult result_with(std::initializer_list<std::pair<GalleryId, double>> cands,
                                 std::optional<GalleryId> mate = std::nullopt) {
  IdentificationResult r;
  for (auto [id, s] : cands) {
    Candidate c;
    c.id = id;
    c.score = s;
    c.fused.value = s;
    r.candidates.push_back(c);
  }
  r.mate = mate;
  return r;
}

// n non-mated results, `hits` of which reach 0.9; the rest top out at 0.1.
std::vector<IdentificationResult> fpir_fixture(std::size_t n, std::size_t hits) {
  std::vector<IdentificationResult> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(result_with({{i + 1, i < hits ? 0.9 : 0.1}}));
  return out;
}

// n mated results, `misses` of which hold the mate below threshold.
std::vector<IdentificationResult> fnir_fixture(std::size_t n, std::size_t misses) {
  std::vector<IdentificationResult> out;
  for (std::size_t i = 0; i < n; ++i) {
    const GalleryId mate = i + 1;
    out.push_back(i < misses ? result_with({{mate + 100'000, 0.7}, {mate, 0.2}}, mate)
                             : result_with({{mate, 0.8}}, mate));
  }
  return out;
}

// Binomial tail sums in long double, inverted by bisection.
long double binom_cdf(std::uint64_t k, std::uint64_t n, long double p) {
  if (p <= 0) return 1;
  if (p >= 1) return k >= n ? 1 : 0;
  long double s = 0;
  for (std::uint64_t i = 0; i <= k; ++i) {
    s += std::exp(std::lgamma((long double)n + 1) - std::lgamma((long double)i + 1) -
                  std::lgamma((long double)(n - i) + 1) + i * std::log(p) + (n - i) * std::log1p(-p));
  }
  return s;
}

Interval oracle_interval(std::uint64_t k, std::uint64_t n, double confidence) {
  const long double a = (1.0L - confidence) / 2;
  Interval out{0.0, 1.0};
  if (k > 0) {  // P(X >= k | p) = a, increasing in p
    long double lo = 0, hi = 1;
    for (int it = 0; it < 200; ++it) {
      const long double mid = (lo + hi) / 2;
      (1 - binom_cdf(k - 1, n, mid) < a ? lo : hi) = mid;
    }
    out.lo = static_cast<double>(lo);
  }
  if (k < n) {  // P(X <= k | p) = a, decreasing in p
    long double lo = 0, hi = 1;
    for (int it = 0; it < 200; ++it) {
      const long double mid = (lo + hi) / 2;
      (binom_cdf(k, n, mid) > a ? lo : hi) = mid;
    }
    out.hi = static_cast<double>(lo);
  }
  return out;
}

std::vector<IdentificationResult> random_results(std::mt19937_64& rng, std::size_t n, bool mated) {
  std::vector<IdentificationResult> out;
  std::uniform_real_distribution<double> u(-0.2, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    IdentificationResult r;
    const std::size_t len = rng() % 6;
    std::vector<double> s(len);
    for (auto& x : s) x = std::round(u(rng) * 20) / 20;  // coarse grid forces ties
    std::sort(s.rbegin(), s.rend());
    for (std::size_t j = 0; j < len; ++j) {
      Candidate c;
      c.id = 10 * i + j + 1;
      c.score = s[j];
      r.candidates.push_back(c);
    }
    if (mated) r.mate = len > 0 && rng() % 4 ? r.candidates[rng() % len].id : 999'999;
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("FPIR and FNIR fixtures of the published operating point") {
    const auto non = fpir_fixture(34'812, 35);
    const auto fpir = compute_fpir(non, 0.5);
    CHECK(fpir.count == 35);
    CHECK(fpir.total == 34'812);
    CHECK(fpir.rate == 35.0 / 34'812.0);
    CHECK(std::abs(fpir.rate - 0.001005) / 0.001005 <= 5e-3);

    const auto mated = fnir_fixture(37'835, 18);
    const auto fnir = compute_fnir(mated, 0.5);
    CHECK(fnir.count == 18);
    CHECK(fnir.total == 37'835);
    CHECK(std::abs(fnir.rate - 4.757e-4) / 4.757e-4 <= 5e-3);
    CHECK(std::abs(fnir.rate - 4.76e-4) / 4.76e-4 <= 5e-3);
  }

  TEST_CASE("extreme thresholds") {
    const auto non = fpir_fixture(100, 10);
    CHECK(compute_fpir(non, 1.01).rate == 0.0);
    CHECK(compute_fpir(non, -1.01).rate == 1.0);
    const auto mated = fnir_fixture(100, 10);
    CHECK(compute_fnir(mated, 1.01).rate == 1.0);
    CHECK(compute_fnir(mated, -1.01).rate == 0.0);
    // A mate beyond rank k counts as a miss whatever the threshold.
    CHECK(compute_fnir(mated, -1.01, 1).count == 10);
    CHECK(compute_fnir_rank1(mated, -1.01).count == 10);
  }

  TEST_CASE("exact search with reachable mates misses nothing at the floor threshold") {
    const auto cfg = default_synth_config();
    const auto g = generate_gallery(300, cfg, 3, Gallery::kDefaultShardSize, 1);
    const auto p = generate_probe_sets(g.registry, 100, 10, cfg, 3, 1);
    SearchOptions opt;
    opt.k = 300;
    opt.exhaustive = true;
    opt.threads = 1;
    const auto r = evaluate(g.gallery, {p.mated, p.mate_ids, p.nonmated}, default_weights(), opt);
    CHECK(compute_fnir(r.mated, -1.01, 300).rate == 0.0);
  }

  TEST_CASE("input errors") {
    const std::vector<IdentificationResult> none;
    CHECK(code_of([&] { compute_fpir(none, 0.5); }) == ErrorCode::Argument);
    CHECK(code_of([&] { compute_fnir(none, 0.5); }) == ErrorCode::Argument);
    const std::vector<IdentificationResult> unlabeled{result_with({{1, 0.5}})};
    CHECK(code_of([&] { compute_fnir(unlabeled, 0.5); }) == ErrorCode::Argument);
  }

  TEST_CASE("DET at one threshold equals the direct rates") {
    const auto non = fpir_fixture(500, 7);
    const auto mated = fnir_fixture(400, 9);
    const double tau[] = {0.5};
    const auto det = det_curve(mated, non, tau);
    REQUIRE(det.size() == 1);
    CHECK(det[0].fpir == compute_fpir(non, 0.5).rate);
    CHECK(det[0].fnir == compute_fnir(mated, 0.5).rate);
    CHECK(det[0].n_fp == 7);
    CHECK(det[0].n_fn == 9);
    CHECK(det[0].n_nonmated == 500);
    CHECK(det[0].n_mated == 400);
  }

  TEST_CASE("operating point read at a target FPIR") {
    std::vector<IdentificationResult> non;
    for (std::size_t i = 0; i < 5000; ++i) non.push_back(result_with({{i + 1, static_cast<double>(i) / 5000}}));
    const auto mated = fnir_fixture(100, 3);
    const auto op = operating_point_at_fpir(mated, non, 1e-3);
    CHECK(op.fpir.count == 5);
    CHECK(op.fpir.rate <= 1e-3);
    CHECK(op.threshold > 4994.0 / 5000);
    CHECK(op.threshold <= 4995.0 / 5000);
    CHECK(op.target_fpir == 1e-3);
    CHECK(op.fpir_ci.lo <= op.fpir.rate);
    CHECK(op.fpir_ci.hi >= op.fpir.rate);
  }

  TEST_CASE("threshold at rate") {
    const std::vector<double> s{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    const double t = threshold_at_rate(s, 0.2);
    CHECK(t > 0.8);
    CHECK(t <= 0.9);
    CHECK(threshold_at_rate(s, 0.0) > 1.0);
    CHECK(threshold_at_rate(s, 1.0) == 0.1);
    CHECK(code_of([] { threshold_at_rate({}, 0.1); }) == ErrorCode::Argument);
  }

  TEST_CASE("TMR at FMR") {
    std::vector<float> mated(1000, 0.9f), non(100'000);
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<float> u(-0.3f, 0.3f);
    for (auto& x : non) x = u(rng);
    CHECK(tmr_at_fmr(mated, non, 1e-4).tmr == 1.0);
    const std::vector<float> few(100, 0.0f);
    CHECK(code_of([&] { tmr_at_fmr(mated, few, 1e-4); }) == ErrorCode::Resolution);
    CHECK(code_of([&] { tmr_at_fmr({}, non, 1e-4); }) == ErrorCode::Argument);
    CHECK(code_of([&] { tmr_at_fmr(mated, non, 0.0); }) == ErrorCode::Argument);
    // Threshold is the smallest score with empirical FMR <= target.
    const auto r = tmr_at_fmr(mated, non, 1e-3);
    std::size_t above = 0;
    for (float x : non) above += x >= r.threshold;
    CHECK(above <= 100);
    std::size_t below = 0;
    for (float x : non) below += x >= std::nextafter(r.threshold, -1.0);
    CHECK(below > 100);
  }

  TEST_CASE("search-path metrics equal a brute-force score matrix") {
    const auto cfg = default_synth_config();
    const auto g = generate_gallery(1500, cfg, 11, 400, 1);
    const auto p = generate_probe_sets(g.registry, 150, 150, cfg, 11, 1);
    SearchOptions opt;
    opt.k = 50;
    opt.threads = 2;
    const auto r = evaluate(g.gallery, {p.mated, p.mate_ids, p.nonmated}, default_weights(), opt);

    std::vector<MultiBiometricTemplate> rows;
    for (const auto& e : g.registry) rows.push_back(g.gallery.template_of(e.gallery_id));
    const auto w = test::oracle_default_weights();
    std::vector<double> non_top, mate_scores;
    for (const auto& probe : p.nonmated) {
      const auto rank = test::oracle_rank(probe, rows, w);
      non_top.push_back(rank.empty() ? -INFINITY : rank[0].score);
    }
    for (std::size_t i = 0; i < p.mated.size(); ++i) {
      const auto rank = test::oracle_rank(p.mated[i], rows, w);
      double s = -INFINITY;
      for (std::size_t j = 0; j < std::min<std::size_t>(50, rank.size()); ++j)
        if (rank[j].id == p.mate_ids[i]) s = rank[j].score;
      mate_scores.push_back(s);
    }
    auto thresholds = det_thresholds(r.mated, r.nonmated);
    for (double t : {-1.01, 0.0, 0.1, 0.2, 0.3, 0.5, 1.01}) thresholds.push_back(t);
    for (double t : thresholds) {
      // Oracle scores differ from the pipeline's in the last bits only; skip
      // thresholds that sit on a score.
      auto near = [&](const std::vector<double>& v) {
        return std::any_of(v.begin(), v.end(), [&](double s) { return std::abs(s - t) < 1e-9; });
      };
      if (near(non_top) || near(mate_scores)) continue;
      std::uint64_t fp = 0, fn = 0;
      for (double s : non_top) fp += s >= t;
      for (double s : mate_scores) fn += !(s >= t);
      REQUIRE(compute_fpir(r.nonmated, t).count == fp);
      REQUIRE(compute_fnir(r.mated, t, 50).count == fn);
    }
  }

  TEST_CASE("combination study") {
    const auto cfg = default_synth_config();
    const auto g = generate_gallery(600, cfg, 12, Gallery::kDefaultShardSize, 1);
    const auto p = generate_probe_sets(g.registry, 200, 400, cfg, 12, 1);
    const ProbeInputs in{p.mated, p.mate_ids, p.nonmated};
    SearchOptions opt;
    opt.threads = 1;
    const auto subsets = default_subsets();
    REQUIRE(subsets.size() == 9);
    CHECK(subsets.front().name == "face");
    CHECK(subsets.back().name == "all");
    CHECK(subsets.back().mask.all());
    const auto rows = combination_study(g.gallery, in, subsets, opt);
    REQUIRE(rows.size() == 9);
    const auto direct = evaluate(g.gallery, in, default_weights(), opt);
    const auto op = operating_point_at_fpir(direct.mated, direct.nonmated, 1e-3);
    CHECK(rows.back().subset == "all");
    CHECK(rows.back().op.threshold == op.threshold);
    CHECK(rows.back().op.fpir.count == op.fpir.count);
    CHECK(rows.back().op.fnir.count == op.fnir.count);

    const std::vector<Subset> empty{{"nothing", PresenceMask()}};
    CHECK(code_of([&] { combination_study(g.gallery, in, empty, opt); }) == ErrorCode::Argument);

    const auto csv = combination_to_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 10);
    CHECK(csv.rfind("subset,target_fpir,threshold,fpir,", 0) == 0);
    CHECK(nlohmann::json::parse(combination_to_json(rows)).size() == 9);
  }

  TEST_CASE("sweep rows with equal sizes are identical and runs repeat") {
    SweepSpec spec;
    spec.sizes = {400, 200, 200};
    spec.tau = 0.3;
    spec.config = default_synth_config();
    spec.seed = 4;
    spec.n_mated = 100;
    spec.n_nonmated = 100;
    spec.options.threads = 1;
    const auto rows = gallery_size_sweep(spec);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].n == 200);
    CHECK(rows[2].n == 400);
    CHECK(sweep_to_csv(std::span(rows.data(), 1)) == sweep_to_csv(std::span(rows.data() + 1, 1)));
    CHECK(sweep_to_json(gallery_size_sweep(spec)) == sweep_to_json(rows));
    CHECK(rows[0].op.fpir.count <= rows[2].op.fpir.count);
    spec.sizes = {0, 10};
    CHECK(code_of([&] { gallery_size_sweep(spec); }) == ErrorCode::Argument);
  }

  TEST_CASE("report schema and byte determinism") {
    const auto non = fpir_fixture(50, 5);
    const auto mated = fnir_fixture(40, 4);
    const auto t = det_thresholds(mated, non);
    const auto det = det_curve(mated, non, t);
    const auto csv = det_to_csv(det);
    CHECK(csv.substr(0, csv.find('\n')) == "threshold,fpir,fnir,n_fp,n_nonmated,n_fn,n_mated");
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == det.size() + 1);
    CHECK(det_to_csv(det_curve(mated, non, t)) == csv);
    const auto j = nlohmann::json::parse(det_to_json(det));
    REQUIRE(j.size() == det.size());
    CHECK(j[0].contains("n_mated"));

    test::TempDir dir;
    emit_report(csv, dir / "det.csv");
    std::ifstream in(dir / "det.csv", std::ios::binary);
    const std::string back((std::istreambuf_iterator<char>(in)), {});
    CHECK(back == csv);
    CHECK(code_of([&] { emit_report(csv, dir / "no" / "such" / "dir" / "det.csv"); }) == ErrorCode::Io);
  }

  TEST_CASE("manifest") {
    RunManifest m;
    m.command = "dedup-eval";
    m.tool_version = "x";
    m.seed = 9;
    m.parameters = {{"k", "50"}};
    m.timings_seconds = {{"search", 1.5}};
    const auto j = nlohmann::json::parse(manifest_to_json(m));
    CHECK(j["seed"] == 9);
    CHECK(j["parameters"]["k"] == "50");
    CHECK(j["timings_seconds"]["search"] == 1.5);
  }
}

TEST_SUITE("eval-properties") {
  TEST_CASE("DET is monotone and consistent with the direct rates") {
    std::mt19937_64 rng(111);
    for (int c = 0; c < test::kCases; ++c) {
      const auto mated = random_results(rng, 1 + rng() % 40, true);
      const auto non = random_results(rng, 1 + rng() % 40, false);
      const std::size_t k = 1 + rng() % 6;
      auto t = det_thresholds(mated, non, k);
      t.insert(t.begin(), -2.0);
      t.push_back(2.0);
      const auto det = det_curve(mated, non, t, k);
      REQUIRE(det.size() == t.size());
      for (std::size_t i = 0; i < det.size(); ++i) {
        REQUIRE(det[i].fpir >= 0.0);
        REQUIRE(det[i].fpir <= 1.0);
        REQUIRE(det[i].fnir >= 0.0);
        REQUIRE(det[i].fnir <= 1.0);
        REQUIRE(det[i].fpir == static_cast<double>(det[i].n_fp) / det[i].n_nonmated);
        REQUIRE(det[i].fnir == static_cast<double>(det[i].n_fn) / det[i].n_mated);
        REQUIRE(det[i].n_fp == compute_fpir(non, t[i]).count);
        REQUIRE(det[i].n_fn == compute_fnir(mated, t[i], k).count);
        if (i > 0) {
          REQUIRE(det[i].fpir <= det[i - 1].fpir);
          REQUIRE(det[i].fnir >= det[i - 1].fnir);
        }
      }
    }
  }

  TEST_CASE("threshold at rate keeps at most the allowed count") {
    std::mt19937_64 rng(112);
    for (int c = 0; c < test::kCases; ++c) {
      std::vector<double> s(1 + rng() % 300);
      for (auto& x : s) x = static_cast<double>(rng() % 50) / 50;
      const double rate = static_cast<double>(rng() % 1000) / 1000;
      const double t = threshold_at_rate(s, rate);
      const auto allowed = static_cast<std::size_t>(std::floor(rate * s.size() * (1 + 1e-12)));
      const auto count = static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [&](double x) { return x >= t; }));
      if (allowed >= s.size()) {
        REQUIRE(t == *std::min_element(s.begin(), s.end()));
        continue;
      }
      REQUIRE(count <= allowed);
      // Smallest such threshold: any lower score admits too many.
      const auto lower = static_cast<std::size_t>(
          std::count_if(s.begin(), s.end(), [&](double x) { return x >= std::nextafter(t, -INFINITY); }));
      REQUIRE(lower > allowed);
    }
  }

  TEST_CASE("binomial intervals match an independent inversion") {
    std::mt19937_64 rng(113);
    for (int c = 0; c < test::kCases; ++c) {
      const std::uint64_t n = 1 + rng() % 150;
      const std::uint64_t k = rng() % (n + 1);
      const double conf = c % 2 ? 0.95 : 0.99;
      const auto got = binomial_interval(k, n, conf);
      const auto want = oracle_interval(k, n, conf);
      REQUIRE(got.lo == doctest::Approx(want.lo).epsilon(1e-7));
      REQUIRE(got.hi == doctest::Approx(want.hi).epsilon(1e-7));
      REQUIRE(got.lo <= static_cast<double>(k) / n);
      REQUIRE(got.hi >= static_cast<double>(k) / n);
    }
    const auto empty = binomial_interval(0, 0);
    CHECK(empty.lo == 0.0);
    CHECK(empty.hi == 1.0);
  }
}
