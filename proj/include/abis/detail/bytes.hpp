#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <type_traits>

#include "abis/error.hpp"

namespace abis::detail {

// Little-endian encode/decode of trivially copyable scalars.
template <typename T>
void put_le(std::byte* dst, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    dst[i] = static_cast<std::byte>((bits >> (8 * i)) & 0xFF);
  }
}

template <typename T>
T get_le(const std::byte* src) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(std::to_integer<unsigned>(src[i])) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

inline void put_floats(std::byte* dst, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, values.data(), values.size_bytes());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) put_le(dst + 4 * i, values[i]);
  }
}

inline void get_floats(const std::byte* src, std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), src, out.size_bytes());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<float>(src + 4 * i);
  }
}

}  // namespace abis::detail
