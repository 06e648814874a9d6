#include "camo/hashing.hpp"

#include <stdexcept>

namespace camo {

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

std::uint64_t parse_hex64(const std::string& s) {
    if (s.size() != 16) throw std::invalid_argument("parse_hex64: need 16 hex digits");
    std::uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint64_t>(c - 'A' + 10);
        else throw std::invalid_argument("parse_hex64: bad digit");
    }
    return v;
}

} // namespace camo
