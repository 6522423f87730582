#ifndef METADMOE_IO_HPP
#define METADMOE_IO_HPP

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <filesystem>
#include <string>
#include <vector>

namespace metadmoe::io {

/// Raw little-endian array files. The byte layout is the in-memory layout of
/// the element type, so these refuse to run on big-endian hosts.
void write_bytes(const std::filesystem::path& path, const void* data, std::size_t len);
std::vector<char> read_bytes(const std::filesystem::path& path);

template <typename T>
void write_array(const std::filesystem::path& path, const std::vector<T>& values) {
  write_bytes(path, values.data(), values.size() * sizeof(T));
}

template <typename T>
std::vector<T> read_array(const std::filesystem::path& path) {
  std::vector<char> bytes = read_bytes(path);
  if (bytes.size() % sizeof(T) != 0) throw std::runtime_error("truncated array file: " + path.string());
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace metadmoe::io

#endif  // METADMOE_IO_HPP
