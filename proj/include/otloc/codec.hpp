#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "otloc/errors.hpp"

namespace otloc {

// Standard base64 with '=' padding.
std::string base64_encode(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> base64_decode(const std::string& text);  // throws DataError

// Doubles are serialized as raw IEEE-754 bytes, little-endian, so round-trips
// are bit-exact and files are portable across hosts.
std::string doubles_to_base64(const std::vector<double>& values);
std::vector<double> base64_to_doubles(const std::string& text);

}  // namespace otloc
