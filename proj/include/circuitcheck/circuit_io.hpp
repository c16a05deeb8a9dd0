#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "circuitcheck/graph.hpp"

namespace circuitcheck {

// {"graph": {"layers": L, "heads": H},
//  "edges": [{"from": "embed", "to": "h.0.0", "channel": "q"}, ...]}
nlohmann::json circuit_to_json(const Circuit& circuit);
std::string circuit_to_string(const Circuit& circuit);

// Parses and validates against `graph`. Errors carry the line of the
// offending edge and name it.
Circuit parse_circuit(std::string_view text, const GraphPtr& graph);
Circuit load_circuit(const std::string& path, const GraphPtr& graph);

}  // namespace circuitcheck
