#include <doctest.h>

#include <cmath>

#include "circuitcheck/error.hpp"
#include "circuitcheck/tasks.hpp"
#include "circuitcheck/zoo.hpp"

using namespace circuitcheck;

namespace {

Matrix run_gt(const ZooEntry& z, const Tokens& x) {
  return Engine(z.weights, z.graph).run_circuit(z.ground_truth, x, AblationScheme::zero());
}

std::vector<int> argmax_rows(const Matrix& m, int first) {
  std::vector<int> out;
  for (Eigen::Index r = first; r < m.rows(); ++r) {
    Eigen::Index c = 0;
    m.row(r).maxCoeff(&c);
    out.push_back(static_cast<int>(c));
  }
  return out;
}

}  // namespace

TEST_CASE("reverse decodes") {
  const ZooEntry z = make_reverse();
  const Engine engine(z.weights, z.graph);
  CHECK(argmax_rows(engine.forward_full({kBos, 1, 2, 3}).logits, 1) == std::vector<int>{3, 2, 1});
  CHECK(argmax_rows(engine.forward_full({kBos, 3, 1, 2}).logits, 1) == std::vector<int>{2, 1, 3});
  for (const TaskExample& ex : z.task->dataset) {
    const Matrix out = engine.forward_full(ex.input).logits;
    const Matrix& target = std::get<Matrix>(ex.label);
    CHECK((out.bottomRows(3) - target).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((run_gt(z, ex.input) - out).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK(z.task->dataset.size() == 6);
}

TEST_CASE("proportion reads out running fractions") {
  const ZooEntry z = make_proportion();
  const Engine engine(z.weights, z.graph);
  // BOS x a c x
  const Matrix out = engine.forward_full({kBos, 1, 2, 3, 1}).logits;
  const double want[] = {1.0, 0.5, 1.0 / 3, 0.5};
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(out(i + 1, 0) - want[i]) < 1e-6);
  CHECK(engine.forward_full({kBos, 2, 3, 2, 2}).logits.bottomRows(4).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((engine.forward_full({kBos, 1, 1, 1, 1}).logits.bottomRows(4).array() - 1.0).abs().maxCoeff() < 1e-6);
  for (const TaskExample& ex : z.task->dataset) {
    CHECK((run_gt(z, ex.input) - engine.forward_full(ex.input).logits).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("induction completes the repeated bigram") {
  const ZooEntry z = make_induction();
  const Engine engine(z.weights, z.graph);
  const auto ev = CircuitEvaluator(std::make_shared<const Engine>(z.weights, z.graph), z.task,
                                   AblationScheme::Kind::Zero);
  for (double s : ev.model_scores()) CHECK(s > std::log(0.99));
  for (double s : ev.circuit_scores(z.ground_truth)) CHECK(s > std::log(0.99));

  // Without the previous-token composition the induction head cannot find B.
  const Edge composition{NodeId::head(0, 0), NodeId::head(1, 0), Channel::Key};
  const auto broken = ev.circuit_scores(remove_edge(z.ground_truth, composition));
  const auto intact = ev.model_scores();
  for (std::size_t i = 0; i < broken.size(); ++i) CHECK(intact[i] - broken[i] >= 1.0);
  CHECK_THROWS_AS(make_induction({.layers = 1}), InvalidArgument);
}

TEST_CASE("ground truths are faithful and necessary") {
  for (const std::string& name : zoo_names()) {
    for (int heads : {0, 1, 3}) {
      const ZooEntry z = make_zoo(name, {.layers = 0, .heads_per_layer = heads});
      CAPTURE(name);
      CAPTURE(heads);
      const CircuitEvaluator ev(std::make_shared<const Engine>(z.weights, z.graph), z.task,
                                AblationScheme::Kind::Zero);
      const double f = ev.faithfulness(z.ground_truth, 2);
      const double ko = ev.faithfulness(complement(z.ground_truth), 2);
      CHECK(f < 1e-9);
      CHECK(ko > 0.0);
      CHECK(ko >= 1e3 * f);
      CHECK(is_io_connected(z.ground_truth).connected);
    }
  }
}

TEST_CASE("minimal one-head variants") {
  const ZooEntry r = make_reverse({.layers = 1, .heads_per_layer = 1});
  CHECK(r.graph->edge_count() == 5);
  CHECK(r.ground_truth.size() == 4);
  const ZooEntry p = make_proportion({.layers = 1, .heads_per_layer = 1});
  CHECK(p.graph->edge_count() == 5);
  const ZooEntry i = make_induction({.layers = 2, .heads_per_layer = 1});
  CHECK(i.graph->edge_count() == 12);
  CHECK(i.ground_truth.size() == 7);
}

TEST_CASE("distractor heads are inert") {
  for (const std::string& name : zoo_names()) {
    const ZooEntry z = make_zoo(name, {.layers = 0, .heads_per_layer = 5});
    const Engine engine(z.weights, z.graph);
    const EdgeSet& effective = engine.effective_edges();
    // Distractors may read the residual stream, but nothing reads what they write.
    effective.for_each([&](std::size_t i) {
      const Edge& e = z.graph->edge(i);
      if (e.sender.is_head()) CHECK(e.sender.index == 0);
    });
    std::size_t outgoing = 0;
    for (const Edge& e : z.graph->edges()) outgoing += e.sender.is_head() && e.sender.index != 0;
    CHECK(outgoing > 0);
  }
}

TEST_CASE("decoys") {
  for (const std::string& name : zoo_names()) {
    const ZooEntry z = make_zoo(name, {.layers = 0, .heads_per_layer = 4});
    RngStream rng(1, 5);
    for (int i = 0; i < 20; ++i) {
      const Circuit d = decoy_circuit(z, rng);
      CHECK(d.size() == z.ground_truth.size());
      CHECK_FALSE(d == z.ground_truth);
      CHECK(is_io_connected(d).connected);
    }
  }
  ZooEntry tiny = make_reverse({.layers = 1, .heads_per_layer = 1});
  tiny.ground_truth = Circuit::full(tiny.graph);
  RngStream rng(2, 5);
  CHECK_THROWS_AS(decoy_circuit(tiny, rng), SamplingError);
}

TEST_CASE("construction is seeded") {
  const ZooEntry a = make_reverse({.layers = 0, .heads_per_layer = 3, .seed = 4});
  const ZooEntry b = make_reverse({.layers = 0, .heads_per_layer = 3, .seed = 4});
  const ZooEntry c = make_reverse({.layers = 0, .heads_per_layer = 3, .seed = 5});
  CHECK(a.weights->head(0, 1).w_q == b.weights->head(0, 1).w_q);
  CHECK_FALSE(a.weights->head(0, 1).w_q == c.weights->head(0, 1).w_q);
  CHECK_THROWS_AS(make_zoo("nope"), InvalidArgument);
}
