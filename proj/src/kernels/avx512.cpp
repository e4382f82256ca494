#include <immintrin.h>

#include "abis/kernels/kernels.hpp"

namespace abis::kernels {
namespace {

float dot_avx512(const float* a, const float* b, std::size_t n) {
  __m512 s0 = _mm512_setzero_ps(), s1 = _mm512_setzero_ps();
  std::size_t k = 0;
  for (; k + 32 <= n; k += 32) {
    s0 = _mm512_fmadd_ps(_mm512_loadu_ps(a + k), _mm512_loadu_ps(b + k), s0);
    s1 = _mm512_fmadd_ps(_mm512_loadu_ps(a + k + 16), _mm512_loadu_ps(b + k + 16), s1);
  }
  for (; k + 16 <= n; k += 16) {
    s0 = _mm512_fmadd_ps(_mm512_loadu_ps(a + k), _mm512_loadu_ps(b + k), s0);
  }
  float s = _mm512_reduce_add_ps(_mm512_add_ps(s0, s1));
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

double dot_f64_avx512(const float* a, const float* b, std::size_t n) {
  __m512d s0 = _mm512_setzero_pd(), s1 = _mm512_setzero_pd();
  std::size_t k = 0;
  for (; k + 16 <= n; k += 16) {
    s0 = _mm512_fmadd_pd(_mm512_cvtps_pd(_mm256_loadu_ps(a + k)), _mm512_cvtps_pd(_mm256_loadu_ps(b + k)), s0);
    s1 = _mm512_fmadd_pd(_mm512_cvtps_pd(_mm256_loadu_ps(a + k + 8)), _mm512_cvtps_pd(_mm256_loadu_ps(b + k + 8)),
                         s1);
  }
  double s = _mm512_reduce_add_pd(_mm512_add_pd(s0, s1));
  for (; k < n; ++k) s += static_cast<double>(a[k]) * b[k];
  return s;
}

// Same packed layout as the AVX2 set with 32-row panels: each accumulator lane
// owns one (probe, row) pair and runs a fixed FMA chain over k.
constexpr std::size_t kKc = 128;
constexpr std::size_t kNr = 32;
constexpr int kMr = 12;

void pack_panel(const float* b, std::size_t ldb, std::size_t nr, std::size_t kc, float* out) {
  for (std::size_t j = 0; j < nr; ++j) {
    const float* row = b + j * ldb;
    for (std::size_t k = 0; k < kc; ++k) out[k * kNr + j] = row[k];
  }
  for (std::size_t j = nr; j < kNr; ++j)
    for (std::size_t k = 0; k < kc; ++k) out[k * kNr + j] = 0.0F;
}

template <int MR>
inline void micro(const float* a, std::size_t lda, const float* panel, std::size_t kc, float* c,
                  std::size_t ldc, std::size_t nr) {
  __m512 lo[MR], hi[MR];
  for (int i = 0; i < MR; ++i) lo[i] = hi[i] = _mm512_setzero_ps();
  for (std::size_t k = 0; k < kc; ++k) {
    const __m512 b0 = _mm512_load_ps(panel + k * kNr);
    const __m512 b1 = _mm512_load_ps(panel + k * kNr + 16);
    for (int i = 0; i < MR; ++i) {
      const __m512 av = _mm512_set1_ps(a[i * lda + k]);
      lo[i] = _mm512_fmadd_ps(av, b0, lo[i]);
      hi[i] = _mm512_fmadd_ps(av, b1, hi[i]);
    }
  }
  const __mmask16 m0 = nr >= 16 ? __mmask16(0xFFFF) : __mmask16((1U << nr) - 1U);
  const __mmask16 m1 = nr >= 32 ? __mmask16(0xFFFF) : nr <= 16 ? __mmask16(0) : __mmask16((1U << (nr - 16)) - 1U);
  for (int i = 0; i < MR; ++i) {
    float* ci = c + i * ldc;
    _mm512_mask_storeu_ps(ci, m0, _mm512_add_ps(_mm512_maskz_loadu_ps(m0, ci), lo[i]));
    _mm512_mask_storeu_ps(ci + 16, m1, _mm512_add_ps(_mm512_maskz_loadu_ps(m1, ci + 16), hi[i]));
  }
}

void gemm_nt_avx512(const float* a, std::size_t lda, std::size_t m, const float* b,
                    std::size_t ldb, std::size_t n, std::size_t len, float* c, std::size_t ldc) {
  alignas(64) static thread_local float panel[kKc * kNr];
  for (std::size_t k0 = 0; k0 < len; k0 += kKc) {
    const std::size_t kc = len - k0 < kKc ? len - k0 : kKc;
    for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
      const std::size_t nr = n - j0 < kNr ? n - j0 : kNr;
      pack_panel(b + j0 * ldb + k0, ldb, nr, kc, panel);
      const float* ak = a + k0;
      float* cj = c + j0;
      std::size_t i = 0;
      for (; i + kMr <= m; i += kMr) micro<kMr>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr);
      const std::size_t rest = m - i;
      if (rest >= 8) { micro<8>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr); i += 8; }
      if (m - i >= 4) { micro<4>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr); i += 4; }
      for (; i < m; ++i) micro<1>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr);
    }
  }
}

constexpr KernelSet kAvx512{"avx512", &dot_avx512, &dot_f64_avx512, &gemm_nt_avx512};

}  // namespace

const KernelSet* avx512_kernels() noexcept { return &kAvx512; }

}  // namespace abis::kernels
