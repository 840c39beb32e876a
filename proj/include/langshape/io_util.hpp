#pragma once

#include <cstdint>
#include <string>

namespace langshape {

std::string read_text_file(const std::string& path);     // throws on IO failure
void write_text_file(const std::string& path, const std::string& content);

uint64_t fnv1a64_bytes(const std::string& data);
std::string hash_hex(uint64_t h);
std::string file_hash_hex(const std::string& path);

/// Shortest round-trip decimal formatting used in all CSV output.
std::string format_double(double v);

}  // namespace langshape
