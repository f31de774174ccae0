#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace memtraj {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
/// First 8 digest bytes as a little-endian integer.
std::uint64_t sha256_u64(std::string_view bytes);

}  // namespace memtraj
