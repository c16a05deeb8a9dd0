#include "circuitcheck/sampler.hpp"

#include <algorithm>

#include "circuitcheck/error.hpp"

namespace circuitcheck {

PathSampler::PathSampler(GraphPtr graph) : graph_(std::move(graph)) {
  EdgeSet all(graph_->edge_count());
  all.fill();
  walkable_ = io_path_edges(*graph_, all);
  build_options();
}

PathSampler::PathSampler(GraphPtr graph, const Circuit& restrict_to) : graph_(std::move(graph)) {
  if (!graph_->same_shape(restrict_to.graph())) throw InvalidArgument("restriction belongs to a different graph");
  walkable_ = io_path_edges(*graph_, restrict_to.edge_set());
  build_options();
}

void PathSampler::build_options() {
  options_.assign(graph_->node_count(), {});
  walkable_.for_each([&](std::size_t e) {
    options_[graph_->node_index(graph_->edge(e).sender)].push_back(static_cast<std::uint32_t>(e));
  });
}

std::vector<std::uint32_t> PathSampler::sample_path_indices(RngStream& rng) const {
  if (!has_path()) throw SamplingError("no embed->logits path exists under the restriction");
  std::vector<std::uint32_t> path;
  std::size_t node = graph_->embed_index();
  while (node != graph_->logits_index()) {
    const auto& opts = options_[node];
    const std::uint32_t e = opts[rng.uniform_index(opts.size())];
    path.push_back(e);
    node = graph_->node_index(graph_->edge(e).receiver);
  }
  return path;
}

std::vector<Edge> PathSampler::sample_path(RngStream& rng) const {
  std::vector<Edge> out;
  for (auto e : sample_path_indices(rng)) out.push_back(graph_->edge(e));
  return out;
}

Circuit PathSampler::sample_min_edges(std::size_t k, RngStream& rng) const {
  EdgeSet set(graph_->edge_count());
  if (k == 0) return Circuit(graph_, std::move(set));
  if (k > walkable_.count()) {
    throw SamplingError("cannot sample " + std::to_string(k) + " edges: only " + std::to_string(walkable_.count()) +
                        " edges lie on embed->logits paths");
  }
  for (std::size_t n = 0; set.count() < k; ++n) {
    if (n == kMaxPaths) throw SamplingError("path budget exhausted before reaching " + std::to_string(k) + " edges");
    for (auto e : sample_path_indices(rng)) set.insert(e);
  }
  return Circuit(graph_, std::move(set));
}

InflationSample PathSampler::inflate(const Circuit& base, RngStream& rng) const {
  if (!base.graph().same_shape(*graph_)) throw InvalidArgument("circuit belongs to a different graph");
  if (walkable_.is_subset_of(base.edge_set())) {
    throw SamplingError("cannot inflate: every walkable edge is already in the circuit");
  }
  for (std::size_t n = 0; n < kMaxPaths; ++n) {
    const auto path = sample_path_indices(rng);
    std::vector<std::uint32_t> novel;
    for (auto e : path) {
      if (!base.contains_index(e) && std::find(novel.begin(), novel.end(), e) == novel.end()) novel.push_back(e);
    }
    if (novel.empty()) continue;
    const std::uint32_t chosen = novel[rng.uniform_index(novel.size())];
    return {base.with_edges(novel), graph_->edge(chosen)};
  }
  throw SamplingError("path budget exhausted while inflating");
}

std::vector<Edge> sample_path(const GraphPtr& graph, const std::optional<Circuit>& restrict_to, RngStream& rng) {
  const PathSampler sampler = restrict_to ? PathSampler(graph, *restrict_to) : PathSampler(graph);
  return sampler.sample_path(rng);
}

Circuit sample_circuit_min_edges(const GraphPtr& graph, std::size_t k, const std::optional<Circuit>& restrict_to,
                                 RngStream& rng) {
  const PathSampler sampler = restrict_to ? PathSampler(graph, *restrict_to) : PathSampler(graph);
  return sampler.sample_min_edges(k, rng);
}

InflationSample inflate(const Circuit& base, RngStream& rng) {
  if (base.size() == base.graph().edge_count()) throw SamplingError("cannot inflate the full graph");
  return PathSampler(base.graph_ptr()).inflate(base, rng);
}

double containment_frequency(const PathSampler& sampler, const Circuit& target, std::size_t k, std::size_t samples,
                             RngStream& rng) {
  if (samples == 0) throw InvalidArgument("containment_frequency needs at least one sample");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    RngStream local = rng.child(i);
    if (target.is_subset_of(sampler.sample_min_edges(k, local))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples);
}

}  // namespace circuitcheck
