#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>

#include <json.hpp>

namespace circuitcheck {

// A parsed JSON document that remembers the source line where every value
// starts, keyed by JSON pointer ("" for the root, "/edges/3" ...).
struct LocatedJson {
  nlohmann::json value;
  std::unordered_map<std::string, std::size_t> lines;

  // 1-based line, 0 if the pointer is unknown.
  std::size_t line_of(const std::string& pointer) const;
};

// Throws ParseError carrying the line of the syntax error.
LocatedJson parse_located_json(std::string_view text);

std::string read_text_file(const std::string& path);

}  // namespace circuitcheck
