#include "circuitcheck/graph.hpp"

#include <charconv>

#include "circuitcheck/error.hpp"

namespace circuitcheck {

std::string NodeId::name() const {
  switch (kind) {
    case NodeKind::Embed:
      return "embed";
    case NodeKind::Logits:
      return "logits";
    case NodeKind::Head:
      break;
  }
  return "h." + std::to_string(layer) + "." + std::to_string(index);
}

std::optional<NodeId> NodeId::parse(std::string_view text) {
  if (text == "embed") return embed();
  if (text == "logits") return logits();
  if (!text.starts_with("h.")) return std::nullopt;
  text.remove_prefix(2);
  const auto dot = text.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  int layer = -1;
  int index = -1;
  const auto l = text.substr(0, dot);
  const auto i = text.substr(dot + 1);
  if (l.empty() || i.empty()) return std::nullopt;
  auto r1 = std::from_chars(l.data(), l.data() + l.size(), layer);
  auto r2 = std::from_chars(i.data(), i.data() + i.size(), index);
  if (r1.ec != std::errc{} || r1.ptr != l.data() + l.size()) return std::nullopt;
  if (r2.ec != std::errc{} || r2.ptr != i.data() + i.size()) return std::nullopt;
  if (layer < 0 || index < 0 || layer > 0xFFFF || index > 0xFFFF) return std::nullopt;
  return head(layer, index);
}

std::string_view channel_name(Channel channel) {
  switch (channel) {
    case Channel::Query:
      return "q";
    case Channel::Key:
      return "k";
    case Channel::Value:
      return "v";
    case Channel::LogitsIn:
      return "in";
  }
  return "?";
}

std::optional<Channel> parse_channel(std::string_view text) {
  if (text == "q") return Channel::Query;
  if (text == "k") return Channel::Key;
  if (text == "v") return Channel::Value;
  if (text == "in") return Channel::LogitsIn;
  return std::nullopt;
}

std::string Edge::label() const {
  std::string out = sender.name() + "->" + receiver.name();
  if (receiver.is_head()) {
    out += ".";
    out += channel_name(channel);
  }
  return out;
}

std::size_t dense_edge_count(int layer_count, int heads_per_layer) {
  const auto h = static_cast<std::size_t>(heads_per_layer);
  std::size_t total = 0;
  for (std::size_t l = 0; l < static_cast<std::size_t>(layer_count); ++l) {
    total += h * 3 * (1 + l * h);
  }
  return total + 1 + static_cast<std::size_t>(layer_count) * h;
}

ComputationalGraph::ComputationalGraph(int layer_count, int heads_per_layer)
    : layers_(layer_count), heads_(heads_per_layer) {
  if (layer_count < 1 || heads_per_layer < 1) {
    throw InvalidArgument("graph needs at least one layer and one head per layer");
  }
  if (layer_count > 0xFFFF || heads_per_layer > 0xFFFF) {
    throw InvalidArgument("graph dimensions out of range");
  }
  nodes_.push_back(NodeId::embed());
  for (int l = 0; l < layers_; ++l) {
    for (int i = 0; i < heads_; ++i) nodes_.push_back(NodeId::head(l, i));
  }
  nodes_.push_back(NodeId::logits());

  const std::size_t n = nodes_.size();
  block_offset_.assign(n, 0);
  outgoing_.assign(n, {});
  incoming_.assign(n, {});
  incoming_by_channel_.assign(n * 4, {});
  edges_.reserve(dense_edge_count(layers_, heads_));

  for (std::size_t r = 1; r < n; ++r) {
    const NodeId receiver = nodes_[r];
    block_offset_[r] = edges_.size();
    // Senders: embed plus every head in a strictly earlier layer.
    const std::size_t sender_end =
        receiver.is_head() ? 1 + static_cast<std::size_t>(receiver.layer) * heads_ : n - 1;
    for (std::size_t s = 0; s < sender_end; ++s) {
      if (receiver.is_head()) {
        for (Channel c : kHeadChannels) edges_.push_back({nodes_[s], receiver, c});
      } else {
        edges_.push_back({nodes_[s], receiver, Channel::LogitsIn});
      }
    }
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto idx = static_cast<std::uint32_t>(e);
    const std::size_t s = node_index(edges_[e].sender);
    const std::size_t r = node_index(edges_[e].receiver);
    outgoing_[s].push_back(idx);
    incoming_[r].push_back(idx);
    incoming_by_channel_[r * 4 + static_cast<std::size_t>(edges_[e].channel)].push_back(idx);
  }
}

bool ComputationalGraph::contains(NodeId node) const {
  if (node.kind != NodeKind::Head) return node.layer == 0 && node.index == 0;
  return node.layer < layers_ && node.index < heads_;
}

std::size_t ComputationalGraph::node_index(NodeId node) const {
  if (!contains(node)) throw InvalidArgument("node " + node.name() + " is not in the graph");
  switch (node.kind) {
    case NodeKind::Embed:
      return 0;
    case NodeKind::Logits:
      return nodes_.size() - 1;
    case NodeKind::Head:
      break;
  }
  return 1 + static_cast<std::size_t>(node.layer) * heads_ + node.index;
}

std::size_t ComputationalGraph::sender_position(NodeId sender) const {
  return node_index(sender);  // embed is 0, heads follow in node order
}

std::optional<std::size_t> ComputationalGraph::find_edge(const Edge& edge) const {
  if (!contains(edge.sender) || !contains(edge.receiver)) return std::nullopt;
  if (edge.sender.kind == NodeKind::Logits || edge.receiver.kind == NodeKind::Embed) return std::nullopt;
  if (edge.receiver.is_head()) {
    if (edge.channel == Channel::LogitsIn) return std::nullopt;
    if (edge.sender.is_head() && edge.sender.layer >= edge.receiver.layer) return std::nullopt;
    return block_offset_[node_index(edge.receiver)] + sender_position(edge.sender) * 3 +
           static_cast<std::size_t>(edge.channel);
  }
  if (edge.channel != Channel::LogitsIn) return std::nullopt;
  return block_offset_[logits_index()] + sender_position(edge.sender);
}

std::size_t ComputationalGraph::edge_index(const Edge& edge) const {
  auto idx = find_edge(edge);
  if (!idx) throw InvalidArgument("edge " + edge.label() + " is not in the graph");
  return *idx;
}

std::span<const std::uint32_t> ComputationalGraph::incoming(std::size_t node, Channel channel) const {
  return incoming_by_channel_[node * 4 + static_cast<std::size_t>(channel)];
}

GraphPtr build_graph(int layer_count, int heads_per_layer) {
  return std::make_shared<const ComputationalGraph>(layer_count, heads_per_layer);
}

// ---- EdgeSet ----

bool EdgeSet::insert(std::size_t i) {
  const std::uint64_t mask = std::uint64_t{1} << (i & 63);
  if (words_[i >> 6] & mask) return false;
  words_[i >> 6] |= mask;
  ++count_;
  return true;
}

bool EdgeSet::erase(std::size_t i) {
  const std::uint64_t mask = std::uint64_t{1} << (i & 63);
  if (!(words_[i >> 6] & mask)) return false;
  words_[i >> 6] &= ~mask;
  --count_;
  return true;
}

void EdgeSet::fill() {
  for (auto& w : words_) w = ~std::uint64_t{0};
  if (universe_ % 64 != 0 && !words_.empty()) {
    words_.back() = (std::uint64_t{1} << (universe_ % 64)) - 1;
  }
  count_ = universe_;
}

EdgeSet EdgeSet::complemented() const {
  EdgeSet out(universe_);
  out.fill();
  for (std::size_t w = 0; w < words_.size(); ++w) out.words_[w] &= ~words_[w];
  out.count_ = universe_ - count_;
  return out;
}

bool EdgeSet::is_subset_of(const EdgeSet& other) const {
  if (universe_ != other.universe_) return false;
  for (std::size_t w = 0; w < words_.size(); ++w) {
    if (words_[w] & ~other.words_[w]) return false;
  }
  return true;
}

void EdgeSet::unite(const EdgeSet& other) {
  if (universe_ != other.universe_) throw InvalidArgument("edge sets over different graphs");
  count_ = 0;
  for (std::size_t w = 0; w < words_.size(); ++w) {
    words_[w] |= other.words_[w];
    count_ += static_cast<std::size_t>(__builtin_popcountll(words_[w]));
  }
}

std::vector<std::uint32_t> EdgeSet::indices() const {
  std::vector<std::uint32_t> out;
  out.reserve(count_);
  for_each([&](std::size_t i) { out.push_back(static_cast<std::uint32_t>(i)); });
  return out;
}

// ---- Circuit ----

Circuit::Circuit(GraphPtr graph) : graph_(std::move(graph)) {
  if (!graph_) throw InvalidArgument("circuit needs a graph");
  edges_ = EdgeSet(graph_->edge_count());
}

Circuit::Circuit(GraphPtr graph, EdgeSet edges) : graph_(std::move(graph)), edges_(std::move(edges)) {
  if (!graph_) throw InvalidArgument("circuit needs a graph");
  if (edges_.universe() != graph_->edge_count()) {
    throw InvalidArgument("edge set does not match the graph");
  }
}

Circuit Circuit::full(GraphPtr graph) {
  EdgeSet all(graph->edge_count());
  all.fill();
  return Circuit(std::move(graph), std::move(all));
}

Circuit Circuit::from_edges(GraphPtr graph, std::span<const Edge> edges) {
  EdgeSet set(graph->edge_count());
  for (const Edge& e : edges) set.insert(graph->edge_index(e));
  return Circuit(std::move(graph), std::move(set));
}

bool Circuit::contains(const Edge& edge) const {
  auto idx = graph_->find_edge(edge);
  return idx && edges_.test(*idx);
}

std::vector<Edge> Circuit::edges() const {
  std::vector<Edge> out;
  out.reserve(edges_.count());
  edges_.for_each([&](std::size_t i) { out.push_back(graph_->edge(i)); });
  return out;
}

Circuit Circuit::with_edges(std::span<const std::uint32_t> indices) const {
  EdgeSet set = edges_;
  for (auto i : indices) {
    if (i >= set.universe()) throw InvalidArgument("edge index out of range");
    set.insert(i);
  }
  return Circuit(graph_, std::move(set));
}

Circuit Circuit::united(const Circuit& other) const {
  if (!graph_->same_shape(other.graph())) throw InvalidArgument("circuits belong to different graphs");
  EdgeSet set = edges_;
  set.unite(other.edges_);
  return Circuit(graph_, std::move(set));
}

bool Circuit::is_subset_of(const Circuit& other) const {
  return graph_->same_shape(other.graph()) && edges_.is_subset_of(other.edges_);
}

Circuit complement(const Circuit& circuit) {
  return Circuit(circuit.graph_ptr(), circuit.edge_set().complemented());
}

Circuit remove_edge(const Circuit& circuit, const Edge& edge) {
  auto idx = circuit.graph().find_edge(edge);
  if (!idx || !circuit.contains_index(*idx)) {
    throw InvalidArgument("edge " + edge.label() + " is not in the circuit");
  }
  EdgeSet set = circuit.edge_set();
  set.erase(*idx);
  return Circuit(circuit.graph_ptr(), std::move(set));
}

EdgeSet io_path_edges(const ComputationalGraph& graph, const EdgeSet& restriction) {
  const std::size_t n = graph.node_count();
  std::vector<char> from_embed(n, 0);
  std::vector<char> to_logits(n, 0);
  from_embed[graph.embed_index()] = 1;
  to_logits[graph.logits_index()] = 1;
  // Node order is topological, so one forward and one backward sweep suffice.
  for (std::size_t v = 0; v < n; ++v) {
    if (!from_embed[v]) continue;
    for (auto e : graph.outgoing(v)) {
      if (restriction.test(e)) from_embed[graph.node_index(graph.edge(e).receiver)] = 1;
    }
  }
  for (std::size_t v = n; v-- > 0;) {
    if (to_logits[v]) continue;
    for (auto e : graph.outgoing(v)) {
      if (restriction.test(e) && to_logits[graph.node_index(graph.edge(e).receiver)]) {
        to_logits[v] = 1;
        break;
      }
    }
  }
  EdgeSet out(graph.edge_count());
  restriction.for_each([&](std::size_t e) {
    const Edge& edge = graph.edge(e);
    if (from_embed[graph.node_index(edge.sender)] && to_logits[graph.node_index(edge.receiver)]) {
      out.insert(e);
    }
  });
  return out;
}

ConnectivityReport is_io_connected(const Circuit& circuit) {
  const EdgeSet on_path = io_path_edges(circuit.graph(), circuit.edge_set());
  ConnectivityReport report;
  circuit.edge_set().for_each([&](std::size_t e) {
    if (!on_path.test(e)) report.stranded.push_back(circuit.graph().edge(e));
  });
  report.connected = report.stranded.empty();
  return report;
}

}  // namespace circuitcheck
