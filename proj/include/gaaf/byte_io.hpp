#pragma once

// Little-endian framing shared by the GVOL and checkpoint containers:
// 8-byte magic, u32 header length, JSON header, raw payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace gaaf::byte_io {

template <typename T>
void append_le(std::vector<char>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <typename T>
T load_le(const char* src) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, src, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

/// Frame = magic + u32 header length + header + payload.
std::vector<char> frame(std::string_view magic, std::string_view header,
                        std::span<const char> payload);

struct Framed {
  std::string header;
  std::vector<char> payload;
};

enum class UnframeStatus { Ok, BadMagic, TruncatedHeader };

/// Splits a framed buffer; `status` reports the first defect found.
Framed unframe(std::span<const char> bytes, std::string_view magic, UnframeStatus& status);

/// Whole-file helpers; throw DataError on I/O failure.
std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace gaaf::byte_io
