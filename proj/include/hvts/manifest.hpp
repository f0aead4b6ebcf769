#pragma once

#include <cstdint>
#include <string>

namespace hvts::manifest {

// FNV-1a 64-bit digest, reported as 16 hex digits.
std::uint64_t fnv1a(const std::string& bytes);
std::string digest_hex(const std::string& bytes);
std::string file_digest_hex(const std::string& path);

// Writes through a sibling temp file and renames into place, so readers
// never observe a partial file.
void write_atomic(const std::string& path, const std::string& text);

// Whole-file read with Input-category errors on missing files.
std::string read_file(const std::string& path);

// Reported in every manifest.
std::string tool_version();

}  // namespace hvts::manifest
