#pragma once

#include <array>
#include <charconv>
#include <string>

namespace blflab {

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

}  // namespace blflab
