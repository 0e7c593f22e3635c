#pragma once

#include <string>

#include <json.hpp>

namespace relbot {

using Json = nlohmann::json;

/// Sorted keys, no insignificant whitespace, floats with 17 significant digits.
/// Identical values always serialize to identical bytes.
std::string canonical_dump(const Json& value);

/// Canonical dump followed by a newline; the form written to disk.
std::string canonical_document(const Json& value);

/// Double formatted with 17 significant digits (shared by CSV writers).
std::string format_double(double value);

}  // namespace relbot
