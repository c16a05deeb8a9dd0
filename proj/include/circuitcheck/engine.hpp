#pragma once

#include <memory>
#include <vector>

#include "circuitcheck/graph.hpp"
#include "circuitcheck/weights.hpp"

namespace circuitcheck {

// Residual-stream write of every non-logits node for one input, indexed by
// graph node index. Each entry is [seq_len x d_model].
struct ActivationCache {
  std::vector<Matrix> outputs;

  std::size_t seq_len() const { return outputs.empty() ? 0 : static_cast<std::size_t>(outputs.front().rows()); }
  const Matrix& at(std::size_t node_index) const { return outputs.at(node_index); }
};

struct ForwardResult {
  Matrix logits;  // seq_len x out_dim
  ActivationCache cache;
};

class AblationScheme {
 public:
  enum class Kind { Zero, CorruptedCache };

  static AblationScheme zero() { return AblationScheme(Kind::Zero, nullptr); }
  static AblationScheme corrupted(std::shared_ptr<const ActivationCache> cache);

  Kind kind() const { return kind_; }
  const ActivationCache* cache() const { return cache_.get(); }

 private:
  AblationScheme(Kind kind, std::shared_ptr<const ActivationCache> cache) : kind_(kind), cache_(std::move(cache)) {}

  Kind kind_;
  std::shared_ptr<const ActivationCache> cache_;
};

// Executes a model, or any circuit of it, with edge-level activation patching.
//
// An edge whose sender never writes a residual dimension the receiver reads
// contributes an exact zero; such edges are skipped, and only nodes that feed
// logits through present edges are evaluated. Both shortcuts leave results
// bit-for-bit unchanged.
class Engine {
 public:
  Engine(std::shared_ptr<const ModelWeights> weights, GraphPtr graph);

  const ModelWeights& weights() const { return *weights_; }
  const ComputationalGraph& graph() const { return *graph_; }
  const GraphPtr& graph_ptr() const { return graph_; }

  ForwardResult forward_full(const Tokens& tokens) const;
  Matrix run_circuit(const Circuit& circuit, const Tokens& tokens, const AblationScheme& ablation) const;
  Matrix knockout(const Circuit& circuit, const Tokens& tokens, const AblationScheme& ablation) const;

  // Edges that can carry a nonzero contribution for some input.
  const EdgeSet& effective_edges() const { return effective_; }

  // Two circuits with equal keys produce identical logits under either
  // ablation kind: the sorted present effective edges into evaluated nodes.
  std::vector<std::uint32_t> canonical_key(const Circuit& circuit) const;

  void check_tokens(const Tokens& tokens) const;

 private:
  struct ChannelPlan {
    std::vector<Eigen::Index> rows;      // residual dimensions read
    Matrix weight;                       // rows.size() x width
    std::vector<std::uint32_t> senders;  // node indices, ascending
    std::vector<std::uint32_t> edges;    // edge index for each sender
  };
  struct NodePlan {
    ChannelPlan channels[3];  // q, k, v; logits uses channels[0]
    std::vector<Eigen::Index> write_cols;
    Matrix w_o;  // d_head x write_cols.size()
    double scale = 1.0;
  };

  std::vector<char> needed_nodes(const EdgeSet* present) const;
  Matrix gather(const ChannelPlan& plan, const EdgeSet* present, const AblationScheme& ablation,
                const std::vector<Matrix>& acts, Eigen::Index seq_len) const;
  Matrix evaluate(const Tokens& tokens, const EdgeSet* present, const AblationScheme& ablation, bool all_nodes,
                  std::vector<Matrix>& acts) const;

  std::shared_ptr<const ModelWeights> weights_;
  GraphPtr graph_;
  std::vector<NodePlan> plans_;  // per node index
  std::vector<Eigen::Index> embed_cols_;
  EdgeSet effective_;
};

}  // namespace circuitcheck
