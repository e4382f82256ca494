#include "abis/kernels/kernels.hpp"

namespace abis::kernels {
namespace {

double dot_f64_scalar(const float* a, const float* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += static_cast<double>(a[k]) * b[k];
  return acc;
}

float dot_scalar(const float* a, const float* b, std::size_t n) {
  return static_cast<float>(dot_f64_scalar(a, b, n));
}

void gemm_nt_scalar(const float* a, std::size_t lda, std::size_t m, const float* b,
                    std::size_t ldb, std::size_t n, std::size_t len, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * ldc + j] += dot_scalar(a + i * lda, b + j * ldb, len);
    }
  }
}

constexpr KernelSet kScalar{"scalar", &dot_scalar, &dot_f64_scalar, &gemm_nt_scalar};

}  // namespace

const KernelSet& scalar_kernels() noexcept { return kScalar; }

}  // namespace abis::kernels
