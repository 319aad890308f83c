#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace mercat::text {

/// Decodes UTF-8; malformed sequences become U+FFFD.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view s);
void append_utf8(std::string& out, char32_t cp);

/// Simple case folding for ASCII, Latin-1, Greek, Cyrillic and fullwidth Latin.
char32_t to_lower(char32_t cp) noexcept;
std::u32string to_lower(std::u32string s);

bool is_space(char32_t cp) noexcept;
bool is_punct(char32_t cp) noexcept;
/// Kana, CJK ideographs and Hangul: scripts written without word spacing.
bool is_cjk(char32_t cp) noexcept;

/// Number of code points (not bytes).
std::size_t length(std::string_view s);

std::string trim(std::string_view s);

}  // namespace mercat::text
