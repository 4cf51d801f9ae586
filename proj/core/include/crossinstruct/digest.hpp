#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace crossinstruct {

using Json = nlohmann::json;

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

// Canonical request text: object keys sorted, no whitespace, floating point
// numbers printed with 9 significant digits. Stable across runs and
// platforms for identical logical content.
std::string canonical_json(const Json& value);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace crossinstruct
