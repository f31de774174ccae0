#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace memtraj {

/// Flat `key=value` text files. Blank lines and lines starting with '#' are
/// ignored; whitespace around keys and values is trimmed.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_kv(const std::string& text, const std::string& source);
KeyValues read_kv(const std::filesystem::path& path);
/// Writes keys in sorted order, one per line.
void write_kv(const KeyValues& kv, const std::filesystem::path& path);
std::string format_kv(const KeyValues& kv);

}  // namespace memtraj
