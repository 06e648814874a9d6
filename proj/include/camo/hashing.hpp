// FNV-1a content hashing for architecture fingerprints and config hashes.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace camo {

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(const std::string& s);

} // namespace camo
