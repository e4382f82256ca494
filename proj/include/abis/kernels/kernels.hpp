#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

// Inner-product kernels behind the flat search. Every variant implements the
// same contract; the scalar set is the reference the SIMD sets are tested
// against.
namespace abis::kernels {

/// sum_k a[k] * b[k]
using DotFn = float (*)(const float* a, const float* b, std::size_t n);

/// sum_k a[k] * b[k] accumulated in double. Products of two floats are exact
/// in double, so variants differ only by double rounding of the sum.
using DotF64Fn = double (*)(const float* a, const float* b, std::size_t n);

/// C[i*ldc + j] += sum_{k < len} A[i*lda + k] * B[j*ldb + k]  for i < m, j < n.
/// A holds probes, B holds gallery rows; both are row-major along k.
using GemmNtFn = void (*)(const float* a, std::size_t lda, std::size_t m, const float* b,
                          std::size_t ldb, std::size_t n, std::size_t len, float* c,
                          std::size_t ldc);

struct KernelSet {
  std::string_view name;
  DotFn dot;
  DotF64Fn dot_f64;
  GemmNtFn gemm_nt;
};

const KernelSet& scalar_kernels() noexcept;
// nullptr when the variant was not compiled for this target.
const KernelSet* avx2_kernels() noexcept;
const KernelSet* avx512_kernels() noexcept;
const KernelSet* neon_kernels() noexcept;

/// Compiled variants the running CPU supports, scalar first.
std::vector<const KernelSet*> available() noexcept;

/// Best supported variant, or the one named by ABIS_SIMD (scalar|avx2|avx512|neon)
/// when set and supported.
const KernelSet& active() noexcept;

/// Overrides the active variant. Returns false if `name` is unavailable.
bool force(std::string_view name) noexcept;

}  // namespace abis::kernels
