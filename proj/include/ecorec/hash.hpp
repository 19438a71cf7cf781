#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ecorec {

// 64-bit FNV-1a. Stable across platforms and runs, used for ids and set hashes.
class Fnv1a {
 public:
  Fnv1a& add(std::string_view bytes) {
    for (const char c : bytes) {
      state_ ^= static_cast<unsigned char>(c);
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Fnv1a& add(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      state_ ^= (v >> (8 * i)) & 0xffU;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  // Field separator so ("ab","c") and ("a","bc") differ.
  Fnv1a& sep() { return add(std::string_view("\x1f", 1)); }

  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t v, int width = 16);

}  // namespace ecorec
