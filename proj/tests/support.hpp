#pragma once

// Generators and brute-force oracles shared by the test suites. The oracles
// re-derive everything from first principles (hard-coded layout, double
// arithmetic) so they never share code paths with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "abis/error.hpp"
#include "abis/fusion.hpp"
#include "abis/index.hpp"
#include "abis/template.hpp"

namespace abis::test {

inline constexpr int kCases = 1000;

struct OracleSegment {
  std::size_t offset;
  std::size_t length;
};

inline std::array<OracleSegment, 13> oracle_layout() {
  std::array<OracleSegment, 13> out{};
  for (std::size_t i = 0; i < 10; ++i) out[i] = {i * 192, 192};
  out[10] = {1920, 512};
  out[11] = {2432, 512};
  out[12] = {2944, 512};
  return out;
}

inline std::array<double, 13> oracle_default_weights() {
  // Thumbs and index fingers: positions 1, 2, 6, 7.
  return {2.3, 2.3, 1.0, 1.0, 1.0, 2.3, 2.3, 1.0, 1.0, 1.0, 12.5, 6.25, 6.25};
}

inline std::vector<float> gaussian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

/// Random non-empty presence mask; p is the per-segment presence probability.
inline PresenceMask random_presence(std::mt19937_64& rng, double p = 0.7) {
  std::bernoulli_distribution b(p);
  PresenceMask m;
  while (m.none()) {
    for (std::size_t s = 0; s < 13; ++s) m[s] = b(rng);
  }
  return m;
}

inline MultiBiometricTemplate random_template(std::mt19937_64& rng, const PresenceMask& presence,
                                              std::uint64_t subject = 0, bool random_quality = true) {
  const auto layout = oracle_layout();
  std::map<std::size_t, std::vector<float>> segs;
  std::map<std::size_t, float> quality;
  std::uniform_real_distribution<float> uq(0.05f, 1.0f);
  for (std::size_t s = 0; s < 13; ++s) {
    if (!presence[s]) continue;
    segs[s] = gaussian(layout[s].length, rng);
    quality[s] = random_quality ? uq(rng) : 1.0f;
  }
  return assemble_template(segs, quality, subject);
}

inline MultiBiometricTemplate random_template(std::mt19937_64& rng, std::uint64_t subject = 0) {
  return random_template(rng, random_presence(rng), subject);
}

/// A noisy copy of `base`: each present segment moves by gaussian noise of
/// the given scale, so scores spread over (0, 1).
inline MultiBiometricTemplate noisy_copy(const MultiBiometricTemplate& base, double noise, std::mt19937_64& rng,
                                         std::uint64_t subject = 0) {
  const auto layout = oracle_layout();
  std::normal_distribution<double> nd(0.0, noise);
  std::map<std::size_t, std::vector<float>> segs;
  std::map<std::size_t, float> quality;
  for (std::size_t s = 0; s < 13; ++s) {
    if (!base.presence()[s]) continue;
    std::vector<float> v(layout[s].length);
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = static_cast<float>(base.vector()[layout[s].offset + k] + nd(rng));
    }
    segs[s] = std::move(v);
    quality[s] = base.quality()[s];
  }
  return assemble_template(segs, quality, subject);
}

inline double oracle_dot(std::span<const float> a, std::span<const float> b, const OracleSegment& s) {
  double acc = 0.0;
  for (std::size_t k = 0; k < s.length; ++k) {
    acc += static_cast<double>(a[s.offset + k]) * static_cast<double>(b[s.offset + k]);
  }
  return acc;
}

struct OracleScore {
  double value = 0.0;
  double mass = 0.0;
  bool comparable = false;
};

inline OracleScore oracle_fused(const TemplateView& q, const TemplateView& g, const std::array<double, 13>& w) {
  const auto layout = oracle_layout();
  OracleScore out;
  double num = 0.0;
  for (std::size_t s = 0; s < 13; ++s) {
    if (!q.presence[s] || !g.presence[s] || w[s] <= 0.0) continue;
    num += w[s] * oracle_dot(q.vector, g.vector, layout[s]);
    out.mass += w[s];
  }
  out.comparable = out.mass > 0.0;
  if (out.comparable) out.value = num / out.mass;
  return out;
}

struct OracleHit {
  GalleryId id;
  double score;
};

/// All-pairs ranking of every comparable gallery row, score desc then id asc.
inline std::vector<OracleHit> oracle_rank(const MultiBiometricTemplate& probe,
                                          const std::vector<MultiBiometricTemplate>& rows,
                                          const std::array<double, 13>& w) {
  std::vector<OracleHit> out;
  for (const auto& r : rows) {
    const auto s = oracle_fused(probe.view(), r.view(), w);
    if (s.comparable) out.push_back({r.subject_id(), s.value});
  }
  std::sort(out.begin(), out.end(), [](const OracleHit& a, const OracleHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("abis-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::logic_error("expected an abis::Error");
}

}  // namespace abis::test
