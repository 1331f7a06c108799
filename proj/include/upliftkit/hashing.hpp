#pragma once

#include <cstdint>
#include <string>

namespace upliftkit {

/// FNV-1a 64-bit. Stable across platforms; used for artifact fingerprints,
/// not security.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string fingerprint_hex(const std::string& payload) {
  return to_hex(fnv1a64(payload));
}

}  // namespace upliftkit
