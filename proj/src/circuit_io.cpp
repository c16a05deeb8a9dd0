#include "circuitcheck/circuit_io.hpp"

#include "circuitcheck/error.hpp"
#include "circuitcheck/located_json.hpp"

namespace circuitcheck {

using nlohmann::json;

json circuit_to_json(const Circuit& circuit) {
  json edges = json::array();
  for (const Edge& e : circuit.edges()) {
    edges.push_back({{"from", e.sender.name()},
                     {"to", e.receiver.name()},
                     {"channel", std::string(channel_name(e.channel))}});
  }
  return {{"graph", {{"layers", circuit.graph().layer_count()}, {"heads", circuit.graph().heads_per_layer()}}},
          {"edges", std::move(edges)}};
}

std::string circuit_to_string(const Circuit& circuit) { return circuit_to_json(circuit).dump(2) + "\n"; }

namespace {

std::string field_string(const json& obj, const char* key, const std::string& where, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError(where + ": missing string field \"" + key + "\"", line);
  }
  return it->get<std::string>();
}

}  // namespace

Circuit parse_circuit(std::string_view text, const GraphPtr& graph) {
  const LocatedJson doc = parse_located_json(text);
  const json& root = doc.value;
  if (!root.is_object()) throw ParseError("circuit file must be a JSON object", doc.line_of(""));

  if (auto g = root.find("graph"); g != root.end()) {
    const std::size_t line = doc.line_of("/graph");
    if (!g->is_object() || !g->contains("layers") || !g->contains("heads") ||
        !(*g)["layers"].is_number_integer() || !(*g)["heads"].is_number_integer()) {
      throw ParseError("\"graph\" must be {\"layers\": int, \"heads\": int}", line);
    }
    const int layers = (*g)["layers"].get<int>();
    const int heads = (*g)["heads"].get<int>();
    if (layers != graph->layer_count() || heads != graph->heads_per_layer()) {
      throw ParseError("circuit is for a " + std::to_string(layers) + "x" + std::to_string(heads) +
                           " graph but the model graph is " + std::to_string(graph->layer_count()) + "x" +
                           std::to_string(graph->heads_per_layer()),
                       line);
    }
  }

  auto edges_it = root.find("edges");
  if (edges_it == root.end() || !edges_it->is_array()) {
    throw ParseError("missing \"edges\" array", doc.line_of(""));
  }

  EdgeSet set(graph->edge_count());
  for (std::size_t i = 0; i < edges_it->size(); ++i) {
    const json& item = (*edges_it)[i];
    const std::string pointer = "/edges/" + std::to_string(i);
    const std::size_t line = doc.line_of(pointer);
    const std::string where = "edge #" + std::to_string(i);
    if (!item.is_object()) throw ParseError(where + " must be an object", line);
    const std::string from = field_string(item, "from", where, line);
    const std::string to = field_string(item, "to", where, line);
    const std::string ch = field_string(item, "channel", where, line);
    const std::string label = from + "->" + to + " (" + ch + ")";

    const auto sender = NodeId::parse(from);
    if (!sender) throw ParseError(where + " " + label + ": unknown node \"" + from + "\"", line);
    const auto receiver = NodeId::parse(to);
    if (!receiver) throw ParseError(where + " " + label + ": unknown node \"" + to + "\"", line);
    const auto channel = parse_channel(ch);
    if (!channel) throw ParseError(where + " " + label + ": unknown channel \"" + ch + "\"", line);
    if (!graph->contains(*sender)) {
      throw ParseError(where + " " + label + ": node \"" + from + "\" is not in the graph", line);
    }
    if (!graph->contains(*receiver)) {
      throw ParseError(where + " " + label + ": node \"" + to + "\" is not in the graph", line);
    }
    const Edge edge{*sender, *receiver, *channel};
    const auto index = graph->find_edge(edge);
    if (!index) throw ParseError(where + " " + label + ": not a legal edge of the graph", line);
    if (!set.insert(*index)) throw ParseError(where + " " + label + ": duplicate edge", line);
  }
  return Circuit(graph, std::move(set));
}

Circuit load_circuit(const std::string& path, const GraphPtr& graph) {
  try {
    return parse_circuit(read_text_file(path), graph);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

}  // namespace circuitcheck
