#include <arm_neon.h>

#include "abis/kernels/kernels.hpp"

namespace abis::kernels {
namespace {

constexpr std::size_t kChunk = 256;

float dot_neon(const float* a, const float* b, std::size_t n) {
  float32x4_t s0 = vdupq_n_f32(0.0f), s1 = vdupq_n_f32(0.0f);
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    s0 = vfmaq_f32(s0, vld1q_f32(a + k), vld1q_f32(b + k));
    s1 = vfmaq_f32(s1, vld1q_f32(a + k + 4), vld1q_f32(b + k + 4));
  }
  float s = vaddvq_f32(vaddq_f32(s0, s1));
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

double dot_f64_neon(const float* a, const float* b, std::size_t n) {
  float64x2_t s0 = vdupq_n_f64(0.0), s1 = vdupq_n_f64(0.0);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const float32x4_t av = vld1q_f32(a + k), bv = vld1q_f32(b + k);
    s0 = vfmaq_f64(s0, vcvt_f64_f32(vget_low_f32(av)), vcvt_f64_f32(vget_low_f32(bv)));
    s1 = vfmaq_f64(s1, vcvt_high_f64_f32(av), vcvt_high_f64_f32(bv));
  }
  double s = vaddvq_f64(vaddq_f64(s0, s1));
  for (; k < n; ++k) s += static_cast<double>(a[k]) * b[k];
  return s;
}

template <int MR, int NR>
inline void micro(const float* a, std::size_t lda, const float* b, std::size_t ldb,
                  std::size_t kc, float* c, std::size_t ldc) {
  float32x4_t acc[MR][NR];
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) acc[i][j] = vdupq_n_f32(0.0f);
  std::size_t k = 0;
  for (; k + 4 <= kc; k += 4) {
    float32x4_t bv[NR];
    for (int j = 0; j < NR; ++j) bv[j] = vld1q_f32(b + j * ldb + k);
    for (int i = 0; i < MR; ++i) {
      const float32x4_t av = vld1q_f32(a + i * lda + k);
      for (int j = 0; j < NR; ++j) acc[i][j] = vfmaq_f32(acc[i][j], av, bv[j]);
    }
  }
  for (int i = 0; i < MR; ++i) {
    for (int j = 0; j < NR; ++j) {
      float s = vaddvq_f32(acc[i][j]);
      for (std::size_t t = k; t < kc; ++t) s += a[i * lda + t] * b[j * ldb + t];
      c[i * ldc + j] += s;
    }
  }
}

template <int MR>
inline void row_strip(const float* a, std::size_t lda, const float* b, std::size_t ldb,
                      std::size_t n, std::size_t kc, float* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) micro<MR, 4>(a, lda, b + j * ldb, ldb, kc, c + j, ldc);
  switch (n - j) {
    case 3: micro<MR, 3>(a, lda, b + j * ldb, ldb, kc, c + j, ldc); break;
    case 2: micro<MR, 2>(a, lda, b + j * ldb, ldb, kc, c + j, ldc); break;
    case 1: micro<MR, 1>(a, lda, b + j * ldb, ldb, kc, c + j, ldc); break;
    default: break;
  }
}

void gemm_nt_neon(const float* a, std::size_t lda, std::size_t m, const float* b,
                  std::size_t ldb, std::size_t n, std::size_t len, float* c, std::size_t ldc) {
  for (std::size_t k0 = 0; k0 < len; k0 += kChunk) {
    const std::size_t kc = len - k0 < kChunk ? len - k0 : kChunk;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) row_strip<4>(a + i * lda + k0, lda, b + k0, ldb, n, kc, c + i * ldc, ldc);
    for (; i < m; ++i) row_strip<1>(a + i * lda + k0, lda, b + k0, ldb, n, kc, c + i * ldc, ldc);
  }
}

constexpr KernelSet kNeon{"neon", &dot_neon, &dot_f64_neon, &gemm_nt_neon};

}  // namespace

const KernelSet* neon_kernels() noexcept { return &kNeon; }

}  // namespace abis::kernels
