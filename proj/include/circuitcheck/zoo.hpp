#pragma once

#include <memory>
#include <string>
#include <vector>

#include "circuitcheck/engine.hpp"
#include "circuitcheck/graph.hpp"
#include "circuitcheck/rng.hpp"
#include "circuitcheck/tasks.hpp"

namespace circuitcheck {

// Hand-built model whose task circuit is known by construction.
struct ZooEntry {
  std::string name;
  std::shared_ptr<const ModelWeights> weights;
  GraphPtr graph;
  Circuit ground_truth;
  std::shared_ptr<const Task> task;
};

// The task heads sit at index 0 of their layers; every other head is a
// random distractor that reads token/position dimensions and writes only a
// junk block nothing reads, so it is inert by construction.
struct ZooOptions {
  int layers = 0;           // 0 = default for the entry
  int heads_per_layer = 0;  // 0 = default for the entry
  std::uint64_t seed = 20240601;
};

// 1 task head; position i attends to position len - i and copies its token.
ZooEntry make_reverse(const ZooOptions& options = {});
// 1 causal task head averaging an is-x indicator over non-BOS prefixes.
ZooEntry make_proportion(const ZooOptions& options = {});
// Previous-token head in layer 0 feeding an induction head in layer 1.
ZooEntry make_induction(const ZooOptions& options = {});

std::vector<std::string> zoo_names();
ZooEntry make_zoo(const std::string& name, const ZooOptions& options = {});

// A circuit with exactly |ground truth| edges, sampled by random walks, that
// differs from the ground truth.
Circuit decoy_circuit(const ZooEntry& entry, RngStream& rng);

inline constexpr int kBos = 0;

}  // namespace circuitcheck
