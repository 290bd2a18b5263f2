#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

namespace rho {

/// Incremental 64-bit FNV-1a. Used for content hashes in file headers and
/// cache keys, not for anything security-related.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001b3ULL;
    }
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void update(const T& value) {
    update(&value, sizeof(T));
  }

  template <typename T>
    requires std::is_trivially_copyable_v<T>
  void update(std::span<const T> values) {
    update(values.data(), values.size_bytes());
  }

  void update(std::string_view text) {
    update(static_cast<std::uint64_t>(text.size()));
    update(text.data(), text.size());
  }

  std::uint64_t digest() const { return state_; }

  std::string hex() const { return to_hex(state_); }

  static std::string to_hex(std::uint64_t value) {
    char buffer[17];
    std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(value));
    return buffer;
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_text(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.hex();
}

}  // namespace rho
