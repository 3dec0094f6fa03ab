#include "gaaf/byte_io.hpp"

#include <fstream>
#include <iterator>

#include "gaaf/errors.hpp"

namespace gaaf::byte_io {

std::vector<char> frame(std::string_view magic, std::string_view header,
                        std::span<const char> payload) {
  std::vector<char> out;
  out.reserve(magic.size() + 4 + header.size() + payload.size());
  out.insert(out.end(), magic.begin(), magic.end());
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Framed unframe(std::span<const char> bytes, std::string_view magic, UnframeStatus& status) {
  Framed result;
  if (bytes.size() < magic.size() || std::string_view(bytes.data(), magic.size()) != magic) {
    status = UnframeStatus::BadMagic;
    return result;
  }
  const std::size_t len_at = magic.size();
  if (bytes.size() < len_at + 4) {
    status = UnframeStatus::TruncatedHeader;
    return result;
  }
  const auto header_len = load_le<std::uint32_t>(bytes.data() + len_at);
  const std::size_t header_at = len_at + 4;
  if (bytes.size() - header_at < header_len) {
    status = UnframeStatus::TruncatedHeader;
    return result;
  }
  result.header.assign(bytes.data() + header_at, header_len);
  result.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header_at + header_len),
                        bytes.end());
  status = UnframeStatus::Ok;
  return result;
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span<const char>(text.data(), text.size()));
}

}  // namespace gaaf::byte_io
