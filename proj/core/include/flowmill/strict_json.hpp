#pragma once

#include <nlohmann/json.hpp>

#include <string_view>

namespace flowmill {

using Json = nlohmann::json;

// Parses UTF-8 JSON text, rejecting what ordinary parsers let slide:
// duplicate object keys and trailing garbage. Throws Error(SyntaxError).
// Everything that ends up content-addressed goes through this parser so
// two byte-different documents can never alias silently.
Json strict_parse_json(std::string_view text);

}  // namespace flowmill
