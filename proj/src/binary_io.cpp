#include "abh/binary_io.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>

namespace abh::io {

std::vector<std::uint8_t> read_file(const std::string& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("file not found: " + path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> data) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw NotFoundError("cannot write: " + tmp);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw NotFoundError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace abh::io
