#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace distnav::base64 {

std::string encode(const std::vector<std::uint8_t>& bytes);

/// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> decode(std::string_view text);

}  // namespace distnav::base64
