#include "metadmoe/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace metadmoe::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void write_bytes(const std::filesystem::path& path, const void* data, std::size_t len) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, text.data(), text.size());
}

std::string read_text(const std::filesystem::path& path) {
  std::vector<char> bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace metadmoe::io
