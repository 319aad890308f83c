#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "mercat/error.hpp"

// Little-endian primitives shared by every binary file format in the project.
namespace mercat::io {

template <typename T>
    requires std::is_unsigned_v<T>
void write_uint(std::ostream& out, T value) {
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((value >> (8 * i)) & 0xff);
    out.write(buf, sizeof(T));
}

template <typename T>
    requires std::is_unsigned_v<T>
T read_uint(std::istream& in) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("unexpected end of file");
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
    return value;
}

inline void write_f32(std::ostream& out, float v) { write_uint(out, std::bit_cast<std::uint32_t>(v)); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_uint<std::uint32_t>(in)); }

inline void write_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
        throw FormatError("bad magic, expected '" + std::string(magic) + "'");
}

/// Bulk f32 array, little-endian, buffered in chunks.
template <typename Float>
void write_f32_array(std::ostream& out, std::span<const Float> values) {
    constexpr std::size_t kChunk = 1 << 14;
    std::vector<char> buf;
    buf.reserve(kChunk * 4);
    for (std::size_t start = 0; start < values.size(); start += kChunk) {
        const std::size_t end = std::min(values.size(), start + kChunk);
        buf.clear();
        for (std::size_t i = start; i < end; ++i) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
            for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
}

inline void read_f32_array(std::istream& in, std::span<float> out) {
    constexpr std::size_t kChunk = 1 << 14;
    std::vector<unsigned char> buf(kChunk * 4);
    for (std::size_t start = 0; start < out.size(); start += kChunk) {
        const std::size_t n = std::min(out.size() - start, kChunk);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4)))
            throw FormatError("truncated float array");
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[i * 4 + b]) << (8 * b);
            out[start + i] = std::bit_cast<float>(bits);
        }
    }
}

/// u32 byte length followed by the raw UTF-8 bytes.
inline void write_string(std::ostream& out, std::string_view s) {
    write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const auto n = read_uint<std::uint32_t>(in);
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), n)) throw FormatError("truncated string");
    return s;
}

}  // namespace mercat::io
