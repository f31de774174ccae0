#include "memtraj/hashing.h"

#include <openssl/sha.h>

#include <array>
#include <fstream>
#include <sstream>

#include "memtraj/errors.h"

namespace memtraj {
namespace {

std::array<unsigned char, SHA256_DIGEST_LENGTH> digest(std::string_view bytes) {
  std::array<unsigned char, SHA256_DIGEST_LENGTH> md{};
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), md.data());
  return md;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest(bytes)) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xF]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string() + " for hashing");
  std::stringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

std::uint64_t sha256_u64(std::string_view bytes) {
  const auto md = digest(bytes);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(md[i]) << (8 * i);
  return v;
}

}  // namespace memtraj
