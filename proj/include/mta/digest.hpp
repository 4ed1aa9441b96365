#pragma once

#include <string>
#include <string_view>

namespace mta {

// lowercase hex SHA-256, used for freeze-invariance checks on serialized weights
std::string sha256_hex(std::string_view bytes);

} // namespace mta
