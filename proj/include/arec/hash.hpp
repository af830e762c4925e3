// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace arec {

// 64-bit FNV-1a. Used for provenance hashes and seed derivation, where a
// platform-stable value is required (std::hash is not).
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t size) noexcept {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& text(std::string_view s) noexcept { return bytes(s.data(), s.size()); }
  template <typename T>
  Fnv1a& values(std::span<const T> v) noexcept {
    return bytes(v.data(), v.size_bytes());
  }
  template <typename T>
  Fnv1a& value(const T& v) noexcept {
    return bytes(&v, sizeof(T));
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for a named stage: splitmix64(parent ^ fnv1a(name)).
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view name) noexcept {
  return splitmix64(parent ^ Fnv1a{}.text(name).digest());
}

/// Seed for the index-th member of a family (ensemble member, subset, target).
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace arec
