#include "hvts/manifest.hpp"

#include <cstdio>

#include "binio.hpp"
#include "hvts/error.hpp"

namespace hvts::manifest {

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string digest_hex(const std::string& bytes) {
  static const char* hex = "0123456789abcdef";
  std::uint64_t h = fnv1a(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string file_digest_hex(const std::string& path) { return digest_hex(binio::slurp(path)); }

std::string read_file(const std::string& path) { return binio::slurp(path); }

void write_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  binio::spew(tmp, text);
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw Error(ErrorCategory::Io, "cannot move " + tmp + " into place");
  }
}

std::string tool_version() { return "0.1.0"; }

}  // namespace hvts::manifest
