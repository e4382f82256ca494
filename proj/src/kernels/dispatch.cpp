#include <atomic>
#include <cstdlib>

#include "abis/kernels/kernels.hpp"

namespace abis::kernels {

#if !(defined(__x86_64__) || defined(_M_X64))
const KernelSet* avx2_kernels() noexcept { return nullptr; }
const KernelSet* avx512_kernels() noexcept { return nullptr; }
#endif
#if !(defined(__aarch64__) || defined(_M_ARM64))
const KernelSet* neon_kernels() noexcept { return nullptr; }
#endif

namespace {

bool cpu_supports(const KernelSet* set) noexcept {
  if (set == nullptr) return false;
#if defined(__x86_64__) || defined(_M_X64)
  if (set == avx2_kernels()) return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  if (set == avx512_kernels()) return __builtin_cpu_supports("avx512f");
#endif
  return true;
}

const KernelSet* find(std::string_view name) noexcept {
  for (const KernelSet* k : available()) {
    if (k->name == name) return k;
  }
  return nullptr;
}

const KernelSet* initial() noexcept {
  if (const char* env = std::getenv("ABIS_SIMD")) {
    if (const KernelSet* k = find(env)) return k;
  }
  return available().back();
}

std::atomic<const KernelSet*>& slot() noexcept {
  static std::atomic<const KernelSet*> current{initial()};
  return current;
}

}  // namespace

std::vector<const KernelSet*> available() noexcept {
  std::vector<const KernelSet*> out{&scalar_kernels()};
  for (const KernelSet* k : {neon_kernels(), avx2_kernels(), avx512_kernels()}) {
    if (cpu_supports(k)) out.push_back(k);
  }
  return out;
}

const KernelSet& active() noexcept { return *slot().load(std::memory_order_acquire); }

bool force(std::string_view name) noexcept {
  const KernelSet* k = find(name);
  if (k == nullptr) return false;
  slot().store(k, std::memory_order_release);
  return true;
}

}  // namespace abis::kernels
