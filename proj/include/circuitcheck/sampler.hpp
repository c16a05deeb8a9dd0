#pragma once

#include <optional>
#include <vector>

#include "circuitcheck/graph.hpp"
#include "circuitcheck/rng.hpp"

namespace circuitcheck {

struct InflationSample {
  Circuit inflated;
  Edge chosen_edge;
};

// Random walks from embed to logits. At every node the next edge is drawn
// uniformly from the outgoing channel-edges (inside the restriction) whose
// receiver can still reach logits; the direct embed->logits edge is a
// complete path on its own.
class PathSampler {
 public:
  explicit PathSampler(GraphPtr graph);
  PathSampler(GraphPtr graph, const Circuit& restrict_to);

  const ComputationalGraph& graph() const { return *graph_; }
  // Edges that lie on some walkable embed -> logits path.
  const EdgeSet& walkable() const { return walkable_; }
  bool has_path() const { return !walkable_.empty(); }

  std::vector<std::uint32_t> sample_path_indices(RngStream& rng) const;
  std::vector<Edge> sample_path(RngStream& rng) const;

  // Union of sampled paths, starting empty, until the circuit has >= k edges.
  Circuit sample_min_edges(std::size_t k, RngStream& rng) const;

  // Adds whole sampled paths to `base` until at least one novel edge appears;
  // the chosen edge is uniform over the novel edges.
  InflationSample inflate(const Circuit& base, RngStream& rng) const;

  static constexpr std::size_t kMaxPaths = 1'000'000;

 private:
  void build_options();

  GraphPtr graph_;
  EdgeSet walkable_;
  std::vector<std::vector<std::uint32_t>> options_;  // per node index
};

std::vector<Edge> sample_path(const GraphPtr& graph, const std::optional<Circuit>& restrict_to, RngStream& rng);
Circuit sample_circuit_min_edges(const GraphPtr& graph, std::size_t k, const std::optional<Circuit>& restrict_to,
                                 RngStream& rng);
InflationSample inflate(const Circuit& base, RngStream& rng);

// Fraction of `samples` size->=k random circuits that contain every edge of `target`.
double containment_frequency(const PathSampler& sampler, const Circuit& target, std::size_t k, std::size_t samples,
                             RngStream& rng);

}  // namespace circuitcheck
