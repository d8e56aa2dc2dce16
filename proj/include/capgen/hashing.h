#ifndef CAPGEN_HASHING_H_
#define CAPGEN_HASHING_H_

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace capgen {

inline constexpr uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a64(s.data(), s.size(), h);
}

inline uint64_t fnv1a64_u32(uint32_t v, uint64_t h = kFnvOffset) {
  unsigned char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv1a64(bytes, 4, h);
}

inline uint64_t fnv1a64_u64(uint64_t v, uint64_t h = kFnvOffset) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv1a64(bytes, 8, h);
}

}  // namespace capgen

#endif  // CAPGEN_HASHING_H_
