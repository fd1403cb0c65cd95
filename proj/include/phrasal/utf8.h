#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace phrasal::utf8 {

struct CodePoint {
  char32_t value;
  std::size_t offset;  // byte offset of the first unit
  std::size_t length;  // number of bytes
};

// Invalid sequences decode byte-by-byte as U+FFFD so scanning never stalls.
std::vector<CodePoint> decode(std::string_view text);
std::size_t length(std::string_view text);
void append(std::string& out, char32_t cp);

}  // namespace phrasal::utf8
