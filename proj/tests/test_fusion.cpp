#include <doctest.h>

#include <cmath>

#include "abis/error.hpp"
#include "abis/fusion.hpp"
#include "abis/kernels/kernels.hpp"
#include "support.hpp"

using namespace abis;
using abis::test::code_of;

namespace {

PresenceMask all_present() { return PresenceMask().set(); }

// Segment s of the template is e_a (first unit axis) or e_b.
MultiBiometricTemplate axis_template(const PresenceMask& presence, std::size_t axis) {
  std::map<std::size_t, std::vector<float>> segs;
  for (std::size_t s = 0; s < kSegmentCount; ++s) {
    if (!presence[s]) continue;
    std::vector<float> v(segment_layout()[s].length, 0.0f);
    v[axis] = 1.0f;
    segs[s] = v;
  }
  return assemble_template(segs);
}

double prescaled_dot(const MultiBiometricTemplate& q, const MultiBiometricTemplate& g, const FusionWeights& w) {
  const auto p = probe_prescale(q, w);
  double acc = 0.0;
  for (std::size_t k = 0; k < kTemplateDim; ++k) acc += double(p[k]) * g.vector()[k];
  return acc;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("default weights") {
    const auto w = default_weights();
    CHECK(w[kFaceSegment] == 12.5);
    CHECK(w[kIrisLeftSegment] == 6.25);
    CHECK(w[kIrisRightSegment] == 6.25);
    CHECK(w[finger_segment(1)] == 2.3);
    CHECK(w[finger_segment(3)] == 1.0);
    const auto oracle = test::oracle_default_weights();
    for (std::size_t s = 0; s < kSegmentCount; ++s) CHECK(w[s] == oracle[s]);
    CHECK(w.raw_sum() == doctest::Approx(40.2).epsilon(1e-12));
  }

  TEST_CASE("weights reject invalid values") {
    std::array<double, kSegmentCount> w{};
    CHECK(code_of([&] { FusionWeights{w}; }) == ErrorCode::Argument);
    w[0] = -1.0;
    w[1] = 2.0;
    CHECK(code_of([&] { FusionWeights{w}; }) == ErrorCode::Argument);
    w[0] = std::nan("");
    CHECK(code_of([&] { FusionWeights{w}; }) == ErrorCode::Argument);
  }

  TEST_CASE("self match is one") {
    std::mt19937_64 rng(21);
    const auto q = test::random_template(rng, all_present());
    const auto s = fused_score(q, q, default_weights());
    CHECK(s.value == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(s.effective_weight_sum == doctest::Approx(40.2).epsilon(1e-12));
  }

  TEST_CASE("missing irides renormalize over the remaining mass") {
    std::mt19937_64 rng(22);
    const auto g = test::random_template(rng, all_present());
    std::map<std::size_t, std::vector<float>> segs;
    for (std::size_t s = 0; s < kIrisLeftSegment; ++s) {
      const auto v = g.segment(s);
      segs[s] = {v.begin(), v.end()};
    }
    const auto q = assemble_template(segs);
    const auto s = fused_score(q, g, default_weights());
    CHECK(s.effective_weight_sum == doctest::Approx(27.7).epsilon(1e-12));
    CHECK(s.value == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(s.per_segment[kIrisLeftSegment] == 0.0f);
    CHECK(s.per_segment[kIrisRightSegment] == 0.0f);
  }

  TEST_CASE("orthogonal segments score zero") {
    const auto q = axis_template(all_present(), 0);
    const auto g = axis_template(all_present(), 1);
    const auto s = fused_score(q, g, default_weights());
    CHECK(s.value == 0.0);
    for (float p : s.per_segment) CHECK(p == 0.0f);
  }

  TEST_CASE("no common segment is incomparable") {
    const auto q = axis_template(PresenceMask().set(kFaceSegment), 0);
    const auto g = axis_template(PresenceMask().set(0), 0);
    CHECK(code_of([&] { fused_score(q, g, default_weights()); }) == ErrorCode::Incomparable);
    // A common segment with zero weight does not make the pair comparable.
    std::array<double, kSegmentCount> w{};
    w[kFaceSegment] = 1.0;
    const auto g2 = axis_template(PresenceMask().set(0).set(1), 0);
    const auto q2 = axis_template(PresenceMask().set(0).set(kFaceSegment), 0);
    CHECK(code_of([&] { fused_score(q2, g2, FusionWeights(w)); }) == ErrorCode::Incomparable);
  }

  TEST_CASE("quality adapted weights") {
    const auto w = default_weights();
    QualityVector ones;
    ones.fill(1.0f);
    const auto same = quality_adapted_weights(w, ones, ones);
    for (std::size_t s = 0; s < kSegmentCount; ++s) CHECK(same[s] == w[s]);

    auto probe = ones;
    probe[kFaceSegment] = 0.0f;
    CHECK(quality_adapted_weights(w, probe, ones)[kFaceSegment] == 0.0);

    auto half = ones;
    for (std::size_t s = 0; s < kFingerCount; ++s) half[s] = 0.5f;
    const auto adapted = quality_adapted_weights(w, half, ones);
    for (std::size_t s = 0; s < kFingerCount; ++s) CHECK(adapted[s] == doctest::Approx(w[s] / 2));
    CHECK(adapted[kFaceSegment] == w[kFaceSegment]);

    // Finger-identical galleries: halving finger weights keeps the finger
    // ranking, because only finger scores differ between rows.
    std::mt19937_64 rng(23);
    const auto q = test::random_template(rng, all_present());
    std::vector<MultiBiometricTemplate> rows;
    for (int i = 0; i < 20; ++i) {
      std::map<std::size_t, std::vector<float>> segs;
      for (std::size_t s = 0; s < kSegmentCount; ++s) {
        if (s < kFingerCount) {
          auto v = test::gaussian(192, rng);
          const auto qs = q.segment(s);
          for (std::size_t k = 0; k < v.size(); ++k) v[k] = v[k] * 0.05f + qs[k];
          segs[s] = v;
        } else {
          const auto qs = q.segment(s);
          segs[s] = {qs.begin(), qs.end()};
        }
      }
      rows.push_back(assemble_template(segs));
    }
    auto order = [&](const FusionWeights& fw) {
      std::vector<std::pair<double, int>> v;
      for (int i = 0; i < 20; ++i) v.push_back({-fused_score(q, rows[i], fw).value, i});
      std::sort(v.begin(), v.end());
      std::vector<int> out;
      for (auto& p : v) out.push_back(p.second);
      return out;
    };
    CHECK(order(w) == order(adapted));

    QualityVector zeros{};
    CHECK(code_of([&] { quality_adapted_weights(w, zeros, ones); }) == ErrorCode::Incomparable);
  }

  TEST_CASE("prescale examples") {
    std::mt19937_64 rng(24);
    const auto q = test::random_template(rng, all_present());
    std::array<double, kSegmentCount> ones;
    ones.fill(1.0);
    const auto p = probe_prescale(q, FusionWeights(ones));
    CHECK(std::equal(p.begin(), p.end(), q.vector().begin()));
    CHECK(prescaled_dot(q, q, default_weights()) == doctest::Approx(40.2).epsilon(1e-3 / 40.2));
    const auto g = test::random_template(rng, all_present());
    double oracle = 0.0;
    const auto layout = test::oracle_layout();
    const auto w = test::oracle_default_weights();
    for (std::size_t s = 0; s < 13; ++s) oracle += w[s] * test::oracle_dot(q.vector(), g.vector(), layout[s]);
    CHECK(std::abs(prescaled_dot(q, g, default_weights()) - oracle) <= 1e-4);
  }

  TEST_CASE("decision boundary is inclusive") {
    FusedScore s;
    s.value = 1.0;
    CHECK(decide(s, DecisionThreshold(0.8)) == Decision::Duplicate);
    s.value = 0.0;
    CHECK(decide(s, DecisionThreshold(0.8)) == Decision::Unique);
    s.value = 0.8;
    CHECK(decide(s, DecisionThreshold(0.8)) == Decision::Duplicate);
    CHECK(code_of([] { DecisionThreshold(1.5); }) == ErrorCode::Argument);
  }

  TEST_CASE("modality subsets") {
    CHECK(parse_modality_subset("face") == PresenceMask().set(kFaceSegment));
    CHECK(parse_modality_subset("irides").count() == 2);
    CHECK(parse_modality_subset("fingers").count() == 10);
    CHECK(parse_modality_subset("face+irides") == parse_modality_subset("irides,face"));
    CHECK(parse_modality_subset("all").all());
    CHECK(code_of([] { parse_modality_subset("ear"); }) == ErrorCode::Argument);
    CHECK(code_of([] { parse_modality_subset("face+"); }) == ErrorCode::Argument);
  }

  TEST_CASE("weight profiles round trip") {
    const auto w = default_weights();
    std::array<double, kSegmentCount> child = w.values();
    child[kFaceSegment] = 6.0;
    const std::vector<FusionWeights> profiles{w, FusionWeights(child, "child")};
    const auto parsed = parse_weight_profiles(weight_profiles_to_json(profiles));
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[1].profile() == "child");
    CHECK(parsed[1].values() == child);
    CHECK(parsed[0].values() == w.values());
    CHECK(code_of([] { parse_weight_profiles(R"({"profiles":[{"name":"x","weights":{"face":1}}]})"); }) ==
          ErrorCode::Format);
  }
}

TEST_SUITE("fusion-properties") {
  TEST_CASE("symmetry is exact") {
    std::mt19937_64 rng(31);
    for (int c = 0; c < test::kCases; ++c) {
      const auto q = test::random_template(rng);
      auto g = test::random_template(rng);
      if ((q.presence() & g.presence()).none()) g = test::random_template(rng, q.presence());
      const auto a = fused_score(q, g, default_weights());
      const auto b = fused_score(g, q, default_weights());
      REQUIRE(a.value == b.value);
      REQUIRE(a.per_segment == b.per_segment);
    }
  }

  TEST_CASE("weight scaling leaves scores, rankings and decisions unchanged") {
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> logc(-6.0, 6.0);
    std::uniform_real_distribution<double> tau(-0.2, 0.6);
    for (int c = 0; c < test::kCases; ++c) {
      const auto q = test::random_template(rng, PresenceMask().set());
      std::vector<MultiBiometricTemplate> rows;
      for (int i = 0; i < 5; ++i) rows.push_back(test::noisy_copy(q, 0.02 * (i + 1) * (c % 7 + 1), rng));
      const auto w = default_weights();
      const auto cw = w.scaled(std::pow(10.0, logc(rng)));
      const DecisionThreshold t(tau(rng));
      std::vector<std::pair<double, int>> a, b;
      for (int i = 0; i < 5; ++i) {
        const auto s1 = fused_score(q, rows[i], w);
        const auto s2 = fused_score(q, rows[i], cw);
        REQUIRE(std::abs(s1.value - s2.value) <= 1e-12);
        REQUIRE(decide(s1, t) == decide(s2, t));
        a.push_back({-s1.value, i});
        b.push_back({-s2.value, i});
      }
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      for (int i = 0; i < 5; ++i) REQUIRE(a[i].second == b[i].second);
    }
  }

  TEST_CASE("score is bounded and matches the oracle") {
    std::mt19937_64 rng(33);
    for (int c = 0; c < test::kCases; ++c) {
      const auto q = test::random_template(rng);
      // Mix of near and random pairs to cover the whole range.
      const auto g = c % 2 ? test::noisy_copy(q, 0.01 * (c % 50), rng) : test::random_template(rng, q.presence());
      const auto s = fused_score(q, g, default_weights());
      REQUIRE(std::abs(s.value) <= 1.0);
      const auto o = test::oracle_fused(q.view(), g.view(), test::oracle_default_weights());
      REQUIRE(std::abs(s.value - o.value) <= 1e-9);
      REQUIRE(s.effective_weight_sum == doctest::Approx(o.mass).epsilon(1e-12));
    }
  }

  TEST_CASE("two pass scoring agrees with direct scoring") {
    std::mt19937_64 rng(34);
    const auto w = default_weights();
    for (int c = 0; c < test::kCases; ++c) {
      const auto q = test::random_template(rng);
      const auto g = c % 3 ? test::noisy_copy(q, 0.05 * (c % 20), rng)
                           : test::random_template(rng, test::random_presence(rng));
      const auto common = q.presence() & g.presence();
      if (w.mass(common) == 0.0) continue;
      const double two_pass = prescaled_dot(q, g, w) / w.mass(common);
      REQUIRE(std::abs(two_pass - fused_score(q, g, w).value) <= 1e-4);
    }
  }

  TEST_CASE("raising one segment score never lowers the fused score") {
    std::mt19937_64 rng(35);
    std::uniform_real_distribution<double> alpha(0.01, 5.0);
    for (int c = 0; c < test::kCases; ++c) {
      const auto q = test::random_template(rng);
      const auto g = test::random_template(rng, q.presence());
      std::vector<std::size_t> present;
      for (std::size_t s = 0; s < kSegmentCount; ++s)
        if (q.presence()[s]) present.push_back(s);
      const std::size_t seg = present[rng() % present.size()];
      // Moving g's segment toward q's strictly shrinks their angle.
      std::map<std::size_t, std::vector<float>> segs;
      std::map<std::size_t, float> quality;
      const double a = alpha(rng);
      for (std::size_t s : present) {
        const auto gs = g.segment(s);
        std::vector<float> v(gs.begin(), gs.end());
        if (s == seg) {
          const auto qs = q.segment(s);
          for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(v[k] + a * qs[k]);
        }
        segs[s] = v;
        quality[s] = g.quality()[s];
      }
      const auto g2 = assemble_template(segs, quality);
      const auto before = fused_score(q, g, default_weights());
      const auto after = fused_score(q, g2, default_weights());
      REQUIRE(after.per_segment[seg] >= before.per_segment[seg]);
      REQUIRE(after.value >= before.value - 1e-12);
    }
  }
}
