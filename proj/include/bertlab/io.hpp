#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace bertlab {

// FNV-1a 64-bit; used for content hashes in run and checkpoint manifests.
inline uint64_t fnv1a64(std::string_view data, uint64_t h = 0xCBF29CE484222325ULL) {
  for (const char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string to_hex(uint64_t v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view data);

// "fnv1a64:<hex>" of the file's bytes.
std::string file_content_hash(const std::string& path);
std::string content_hash(std::string_view data);

}  // namespace bertlab
