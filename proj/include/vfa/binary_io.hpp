#pragma once

#include "vfa/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace vfa::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw IoError("unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint8_t read_u8(std::istream& is) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw IoError("unexpected end of file");
    return static_cast<std::uint8_t>(c);
}

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline void write_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline bool read_magic(std::istream& is, const char (&magic)[9]) {
    char buf[8];
    if (!is.read(buf, 8)) return false;
    return std::memcmp(buf, magic, 8) == 0;
}

}  // namespace vfa::io
