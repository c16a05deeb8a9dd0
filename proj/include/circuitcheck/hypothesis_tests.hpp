#pragma once

#include <optional>
#include <vector>

#include "circuitcheck/graph.hpp"
#include "circuitcheck/rng.hpp"
#include "circuitcheck/stats.hpp"
#include "circuitcheck/tasks.hpp"

namespace circuitcheck {

struct TestContext {
  const CircuitEvaluator& evaluator;
  int k_norm = 2;
  std::size_t workers = 1;
};

struct ReferenceOptions {
  std::size_t n_reference = 100;
  std::optional<std::size_t> size;  // minimum edges per reference circuit; default |candidate|
  double quantile = 0.9;
  double alpha = 0.05;
};

enum class ReferenceSource { ComplementOfCandidate, FullModel };
std::string reference_source_name(ReferenceSource source);
ReferenceSource parse_reference_source(const std::string& text);

// Is the candidate more faithful than random circuits of the same size?
TestResult sufficiency_test(const TestContext& ctx, const Circuit& candidate, const ReferenceOptions& options,
                            RngStream& rng);

// Is knocking the candidate out worse than knocking out random circuits?
// With ComplementOfCandidate, references are drawn inside the complement and
// their size is capped at the number of edges on complement paths.
TestResult partial_necessity_test(const TestContext& ctx, const Circuit& candidate, ReferenceSource source,
                                  const ReferenceOptions& options, RngStream& rng);

TestResult equivalence_circuit_test(const TestContext& ctx, const Circuit& candidate, double epsilon, double alpha);
TestResult independence_circuit_test(const TestContext& ctx, const Circuit& candidate,
                                     std::optional<double> bandwidth, std::size_t permutations, double alpha,
                                     RngStream& rng);

// delta(e, C) = mean |s(C(x)) - s(C_{-e}(x))|.
double edge_delta(const CircuitEvaluator& evaluator, const Circuit& circuit, const Edge& edge);

struct EdgeMinimality {
  Edge edge;
  TestResult result;
};

struct MinimalityResult {
  std::vector<EdgeMinimality> edges;
  std::vector<double> reference;  // delta(e^I, C^I) over inflation samples
  std::vector<Edge> reference_edges;
  double alpha = 0.05;
  double effective_alpha = 0.05;
  std::size_t rejections = 0;
  bool minimal = true;
};

// One inflation reference distribution is shared by every tested edge; each
// edge is tested at alpha / m.
MinimalityResult minimality_test(const TestContext& ctx, const Circuit& candidate,
                                 const std::vector<Edge>& edges_to_test, std::size_t n_reference, double quantile,
                                 double alpha, RngStream& rng);

}  // namespace circuitcheck
