#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace circuitcheck {

enum class NodeKind : std::uint8_t { Embed, Head, Logits };

struct NodeId {
  NodeKind kind = NodeKind::Embed;
  std::uint16_t layer = 0;
  std::uint16_t index = 0;

  static constexpr NodeId embed() { return {NodeKind::Embed, 0, 0}; }
  static constexpr NodeId head(int layer, int index) {
    return {NodeKind::Head, static_cast<std::uint16_t>(layer), static_cast<std::uint16_t>(index)};
  }
  static constexpr NodeId logits() { return {NodeKind::Logits, 0, 0}; }

  bool is_head() const { return kind == NodeKind::Head; }

  // "embed", "h.<layer>.<index>" or "logits".
  std::string name() const;
  static std::optional<NodeId> parse(std::string_view text);

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

enum class Channel : std::uint8_t { Query, Key, Value, LogitsIn };

inline constexpr Channel kHeadChannels[] = {Channel::Query, Channel::Key, Channel::Value};

std::string_view channel_name(Channel channel);  // q, k, v, in
std::optional<Channel> parse_channel(std::string_view text);

struct Edge {
  NodeId sender;
  NodeId receiver;
  Channel channel = Channel::LogitsIn;

  // "h.0.1->h.1.0.q" style label used in reports and error messages.
  std::string label() const;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Dense residual wiring of an attention-only transformer. Node order is
// topological: embed, heads layer-major, logits. Edges are grouped by receiver
// (in node order), then sender (in node order), then channel (q, k, v).
class ComputationalGraph {
 public:
  ComputationalGraph(int layer_count, int heads_per_layer);

  int layer_count() const { return layers_; }
  int heads_per_layer() const { return heads_; }
  std::size_t head_count() const { return static_cast<std::size_t>(layers_) * heads_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }

  std::span<const NodeId> nodes() const { return nodes_; }
  std::span<const Edge> edges() const { return edges_; }
  const Edge& edge(std::size_t index) const { return edges_[index]; }

  // Position of the node in topological order; throws for nodes outside the graph.
  std::size_t node_index(NodeId node) const;
  bool contains(NodeId node) const;

  std::optional<std::size_t> find_edge(const Edge& edge) const;
  std::size_t edge_index(const Edge& edge) const;  // throws when the edge is not legal

  // Edge indices leaving / entering a node (by node index).
  std::span<const std::uint32_t> outgoing(std::size_t node) const { return outgoing_[node]; }
  std::span<const std::uint32_t> incoming(std::size_t node) const { return incoming_[node]; }
  // Incoming edges on one channel, ordered by sender.
  std::span<const std::uint32_t> incoming(std::size_t node, Channel channel) const;

  // d_v: number of inputs of the node.
  std::size_t in_degree(NodeId node) const { return incoming_[node_index(node)].size(); }

  std::size_t embed_index() const { return 0; }
  std::size_t logits_index() const { return nodes_.size() - 1; }

  bool same_shape(const ComputationalGraph& other) const {
    return layers_ == other.layers_ && heads_ == other.heads_;
  }

 private:
  std::size_t sender_position(NodeId sender) const;

  int layers_;
  int heads_;
  std::vector<NodeId> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::size_t> block_offset_;  // per receiver node index
  std::vector<std::vector<std::uint32_t>> outgoing_;
  std::vector<std::vector<std::uint32_t>> incoming_;
  std::vector<std::vector<std::uint32_t>> incoming_by_channel_;  // node * 4 + channel
};

using GraphPtr = std::shared_ptr<const ComputationalGraph>;

GraphPtr build_graph(int layer_count, int heads_per_layer);

// Closed form for the dense wiring edge count.
std::size_t dense_edge_count(int layer_count, int heads_per_layer);

// Mutable bit set over the edge indices of one graph.
class EdgeSet {
 public:
  EdgeSet() = default;
  explicit EdgeSet(std::size_t universe) : universe_(universe), words_((universe + 63) / 64, 0) {}

  std::size_t universe() const { return universe_; }
  std::size_t count() const { return count_; }
  bool empty() const { return count_ == 0; }

  bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  bool insert(std::size_t i);  // returns true when newly inserted
  bool erase(std::size_t i);
  void fill();

  EdgeSet complemented() const;
  bool is_subset_of(const EdgeSet& other) const;
  void unite(const EdgeSet& other);

  template <typename F>
  void for_each(F&& f) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t bits = words_[w];
      while (bits != 0) {
        const int bit = __builtin_ctzll(bits);
        f(w * 64 + static_cast<std::size_t>(bit));
        bits &= bits - 1;
      }
    }
  }

  std::vector<std::uint32_t> indices() const;

  friend bool operator==(const EdgeSet& a, const EdgeSet& b) {
    return a.universe_ == b.universe_ && a.words_ == b.words_;
  }

 private:
  std::size_t universe_ = 0;
  std::size_t count_ = 0;
  std::vector<std::uint64_t> words_;
};

// An arbitrary edge subset of a graph. Embed and logits are always members;
// connectivity is not required (see is_io_connected).
class Circuit {
 public:
  explicit Circuit(GraphPtr graph);
  Circuit(GraphPtr graph, EdgeSet edges);

  static Circuit full(GraphPtr graph);
  static Circuit from_edges(GraphPtr graph, std::span<const Edge> edges);

  const ComputationalGraph& graph() const { return *graph_; }
  const GraphPtr& graph_ptr() const { return graph_; }
  const EdgeSet& edge_set() const { return edges_; }

  std::size_t size() const { return edges_.count(); }
  bool empty() const { return edges_.empty(); }
  bool contains(const Edge& edge) const;
  bool contains_index(std::size_t index) const { return edges_.test(index); }

  std::vector<Edge> edges() const;  // graph order
  std::vector<std::uint32_t> edge_indices() const { return edges_.indices(); }

  Circuit with_edges(std::span<const std::uint32_t> indices) const;
  Circuit united(const Circuit& other) const;
  bool is_subset_of(const Circuit& other) const;

  friend bool operator==(const Circuit& a, const Circuit& b) {
    return a.graph_->same_shape(*b.graph_) && a.edges_ == b.edges_;
  }

 private:
  GraphPtr graph_;
  EdgeSet edges_;
};

Circuit complement(const Circuit& circuit);
Circuit remove_edge(const Circuit& circuit, const Edge& edge);

struct ConnectivityReport {
  bool connected = true;
  std::vector<Edge> stranded;  // edges not on any embed -> logits path inside the circuit
};

ConnectivityReport is_io_connected(const Circuit& circuit);

// Edges of `restriction` that lie on at least one embed -> logits path using
// only restriction edges.
EdgeSet io_path_edges(const ComputationalGraph& graph, const EdgeSet& restriction);

}  // namespace circuitcheck
