#include <immintrin.h>

#include "abis/kernels/kernels.hpp"

namespace abis::kernels {
namespace {


inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, lo);
  return _mm_cvtss_f32(_mm_add_ss(lo, sh));
}

float dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
  __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
  std::size_t k = 0;
  for (; k + 32 <= n; k += 32) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k + 8), _mm256_loadu_ps(b + k + 8), s1);
    s2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k + 16), _mm256_loadu_ps(b + k + 16), s2);
    s3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k + 24), _mm256_loadu_ps(b + k + 24), s3);
  }
  for (; k + 8 <= n; k += 8) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + k), _mm256_loadu_ps(b + k), s0);
  }
  float s = hsum(_mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3)));
  for (; k < n; ++k) s += a[k] * b[k];
  return s;
}

// MR probes x NR gallery rows, one k-chunk. Each (i, j) pair follows the same
// instruction sequence for every tile shape, so scores do not depend on where
// a row falls inside a block.
double dot_f64_avx2(const float* a, const float* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    s0 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm_loadu_ps(a + k)), _mm256_cvtps_pd(_mm_loadu_ps(b + k)), s0);
    s1 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm_loadu_ps(a + k + 4)), _mm256_cvtps_pd(_mm_loadu_ps(b + k + 4)), s1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(s0, s1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; k < n; ++k) s += static_cast<double>(a[k]) * b[k];
  return s;
}

// Packed broadcast kernel. Gallery rows are transposed into kKc x kNr panels so
// each lane of an accumulator belongs to one row; every (probe, row) pair sees
// the same FMA chain regardless of tile position, which keeps batched and
// unbatched scans bit-identical.
constexpr std::size_t kKc = 128;
constexpr std::size_t kNr = 16;
constexpr int kMr = 6;

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
  __m256 lo[MR], hi[MR];
  const float* rows[MR];
  for (int i = 0; i < MR; ++i) {
    lo[i] = hi[i] = _mm256_setzero_ps();
    rows[i] = a + i * lda;
  }
  for (std::size_t k = 0; k < kc; ++k) {
    const __m256 b0 = _mm256_load_ps(panel + k * kNr);
    const __m256 b1 = _mm256_load_ps(panel + k * kNr + 8);
    for (int i = 0; i < MR; ++i) {
      const __m256 av = _mm256_broadcast_ss(rows[i] + k);
      lo[i] = _mm256_fmadd_ps(av, b0, lo[i]);
      hi[i] = _mm256_fmadd_ps(av, b1, hi[i]);
    }
  }
  if (nr == kNr) {
    for (int i = 0; i < MR; ++i) {
      float* ci = c + i * ldc;
      _mm256_storeu_ps(ci, _mm256_add_ps(_mm256_loadu_ps(ci), lo[i]));
      _mm256_storeu_ps(ci + 8, _mm256_add_ps(_mm256_loadu_ps(ci + 8), hi[i]));
    }
    return;
  }
  alignas(32) float tmp[kNr];
  for (int i = 0; i < MR; ++i) {
    _mm256_store_ps(tmp, lo[i]);
    _mm256_store_ps(tmp + 8, hi[i]);
    for (std::size_t j = 0; j < nr; ++j) c[i * ldc + j] += tmp[j];
  }
}

void gemm_nt_avx2(const float* a, std::size_t lda, std::size_t m, const float* b,
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
      switch (m - i) {
        case 5: micro<5>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr); break;
        case 4: micro<4>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr); break;
        case 3: micro<3>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr); break;
        case 2: micro<2>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr); break;
        case 1: micro<1>(ak + i * lda, lda, panel, kc, cj + i * ldc, ldc, nr); break;
        default: break;
      }
    }
  }
}

constexpr KernelSet kAvx2{"avx2", &dot_avx2, &dot_f64_avx2, &gemm_nt_avx2};

}  // namespace

const KernelSet* avx2_kernels() noexcept { return &kAvx2; }

}  // namespace abis::kernels
