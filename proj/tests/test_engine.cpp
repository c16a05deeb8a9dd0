#include <doctest.h>

#include "circuitcheck/engine.hpp"
#include "circuitcheck/error.hpp"
#include "circuitcheck/zoo.hpp"
#include "oracles.hpp"

using namespace circuitcheck;

namespace {

Tokens random_tokens(const ModelWeights& w, std::size_t len, RngStream& rng) {
  Tokens t(len);
  for (auto& v : t) v = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(w.vocab())));
  return t;
}

Circuit random_circuit(const GraphPtr& g, RngStream& rng) {
  const double p = rng.uniform01();
  EdgeSet s(g->edge_count());
  for (std::size_t i = 0; i < g->edge_count(); ++i)
    if (rng.uniform01() < p) s.insert(i);
  return Circuit(g, s);
}

struct RandomModel {
  std::shared_ptr<const ModelWeights> weights;
  GraphPtr graph;
  std::shared_ptr<const Engine> engine;
};

RandomModel random_model(RngStream& rng) {
  const int L = 1 + static_cast<int>(rng.uniform_index(2));
  const int H = 1 + static_cast<int>(rng.uniform_index(2));
  const bool causal = rng.uniform_index(2) == 1;
  auto w = std::make_shared<const ModelWeights>(make_random_weights(L, H, 5, 6, 7, 3, 4, causal, 0.7, rng));
  auto g = build_graph(L, H);
  return {w, g, std::make_shared<const Engine>(w, g)};
}

}  // namespace

TEST_CASE("patched runs match the brute-force evaluator") {
  RngStream rng(123, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const RandomModel m = random_model(rng);
    const std::size_t len = 1 + rng.uniform_index(7);
    const Tokens x = random_tokens(*m.weights, len, rng);
    const Tokens xc = random_tokens(*m.weights, len, rng);
    const Circuit c = random_circuit(m.graph, rng);
    CAPTURE(trial);

    const auto all = [](int, int, int) { return true; };
    const oracle::Run clean = oracle::run(*m.weights, x, all, nullptr);
    const oracle::Run corrupt = oracle::run(*m.weights, xc, all, nullptr);

    CHECK(oracle::max_abs_diff(m.engine->forward_full(x).logits, clean.logits) < 1e-10);

    const Matrix zero = m.engine->run_circuit(c, x, AblationScheme::zero());
    CHECK(oracle::max_abs_diff(zero, oracle::run(*m.weights, x, oracle::membership(c), nullptr).logits) < 1e-10);

    const auto cache = std::make_shared<const ActivationCache>(m.engine->forward_full(xc).cache);
    const Matrix patched = m.engine->run_circuit(c, x, AblationScheme::corrupted(cache));
    CHECK(oracle::max_abs_diff(patched, oracle::run(*m.weights, x, oracle::membership(c), &corrupt.writes).logits) <
          1e-10);

    const Matrix ko = m.engine->knockout(c, x, AblationScheme::corrupted(cache));
    CHECK(oracle::max_abs_diff(ko, oracle::run(*m.weights, x, oracle::membership(complement(c)), &corrupt.writes)
                                       .logits) < 1e-10);
  }
}

TEST_CASE("activation cache matches brute-force node outputs") {
  RngStream rng(5, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const RandomModel m = random_model(rng);
    const Tokens x = random_tokens(*m.weights, 1 + rng.uniform_index(7), rng);
    const ForwardResult r = m.engine->forward_full(x);
    const oracle::Run o = oracle::run(*m.weights, x, [](int, int, int) { return true; }, nullptr);
    REQUIRE(r.cache.outputs.size() == o.writes.size());
    for (std::size_t i = 0; i < o.writes.size(); ++i) CHECK(oracle::max_abs_diff(r.cache.at(i), o.writes[i]) < 1e-10);
  }
}

TEST_CASE("patching identities hold bitwise") {
  RngStream rng(99, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const RandomModel m = random_model(rng);
    const std::size_t len = 1 + rng.uniform_index(7);
    const Tokens x = random_tokens(*m.weights, len, rng);
    const Tokens xc = random_tokens(*m.weights, len, rng);
    const Circuit full = Circuit::full(m.graph);
    const Circuit empty(m.graph);
    const ForwardResult clean = m.engine->forward_full(x);
    const ForwardResult corrupt = m.engine->forward_full(xc);
    const auto cache = std::make_shared<const ActivationCache>(corrupt.cache);
    const auto self = std::make_shared<const ActivationCache>(clean.cache);

    CHECK(m.engine->run_circuit(full, x, AblationScheme::zero()) == clean.logits);
    CHECK(m.engine->run_circuit(full, x, AblationScheme::corrupted(cache)) == clean.logits);
    CHECK(m.engine->run_circuit(empty, x, AblationScheme::corrupted(cache)) == corrupt.logits);
    CHECK(m.engine->run_circuit(empty, x, AblationScheme::zero()).isZero(0.0));
    const Circuit c = random_circuit(m.graph, rng);
    CHECK(m.engine->run_circuit(c, x, AblationScheme::corrupted(self)) == clean.logits);
    CHECK(m.engine->knockout(empty, x, AblationScheme::zero()) == clean.logits);
    CHECK(m.engine->knockout(full, x, AblationScheme::corrupted(cache)) == corrupt.logits);
  }
}

TEST_CASE("zero weights give zero logits") {
  auto w = std::make_shared<const ModelWeights>(make_zero_weights(2, 2, 4, 5, 6, 2, 3, false));
  const Engine engine(w, build_graph(2, 2));
  CHECK(engine.forward_full({0, 1, 2, 3}).logits.isZero(0.0));
  CHECK(engine.effective_edges().empty());
}

TEST_CASE("random weights make every edge effective") {
  RngStream rng(4, 0);
  const RandomModel m = random_model(rng);
  CHECK(m.engine->effective_edges().count() == m.graph->edge_count());
}

TEST_CASE("equal canonical keys give equal outputs") {
  const ZooEntry zoo = make_reverse({.layers = 2, .heads_per_layer = 3});
  const Engine engine(zoo.weights, zoo.graph);
  RngStream rng(12, 0);
  const Tokens x = zoo.task->dataset[0].input;
  const auto cache = std::make_shared<const ActivationCache>(engine.forward_full(zoo.task->dataset[0].corrupted).cache);
  int collisions = 0;
  std::vector<std::pair<std::vector<std::uint32_t>, Circuit>> seen;
  for (int i = 0; i < 300; ++i) {
    const Circuit c = random_circuit(zoo.graph, rng);
    const auto key = engine.canonical_key(c);
    for (const auto& [k, other] : seen) {
      if (k != key) continue;
      ++collisions;
      CHECK(engine.run_circuit(c, x, AblationScheme::zero()) == engine.run_circuit(other, x, AblationScheme::zero()));
      CHECK(engine.run_circuit(c, x, AblationScheme::corrupted(cache)) ==
            engine.run_circuit(other, x, AblationScheme::corrupted(cache)));
    }
    seen.emplace_back(key, c);
  }
  CHECK(collisions > 0);
}

TEST_CASE("zoo models agree with the brute-force evaluator") {
  for (const std::string& name : zoo_names()) {
    const ZooEntry zoo = make_zoo(name);
    const Engine engine(zoo.weights, zoo.graph);
    for (std::size_t i = 0; i < std::min<std::size_t>(3, zoo.task->dataset.size()); ++i) {
      const auto& ex = zoo.task->dataset[i];
      const oracle::Run o = oracle::run(*zoo.weights, ex.input, oracle::membership(zoo.ground_truth), nullptr);
      CHECK(oracle::max_abs_diff(engine.run_circuit(zoo.ground_truth, ex.input, AblationScheme::zero()), o.logits) <
            1e-10);
    }
  }
}

TEST_CASE("input validation") {
  RngStream rng(1, 0);
  auto w = std::make_shared<const ModelWeights>(make_random_weights(1, 1, 4, 3, 5, 2, 2, false, 1.0, rng));
  const Engine engine(w, build_graph(1, 1));
  CHECK_THROWS_AS(engine.forward_full({0, 4}), InvalidArgument);
  CHECK_THROWS_AS(engine.forward_full({0, -1}), InvalidArgument);
  CHECK_THROWS_AS(engine.forward_full({0, 1, 2, 3, 0, 1}), InvalidArgument);
  CHECK_THROWS_AS(engine.forward_full({}), InvalidArgument);
  const auto short_cache = std::make_shared<const ActivationCache>(engine.forward_full({1, 2}).cache);
  try {
    engine.run_circuit(Circuit(build_graph(1, 1)), {1, 2, 3}, AblationScheme::corrupted(short_cache));
    FAIL("expected an exception");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("length-matched") != std::string::npos);
  }
  CHECK_THROWS_AS(Engine(w, build_graph(2, 1)), InvalidArgument);
  CHECK_THROWS_AS(engine.run_circuit(Circuit(build_graph(1, 2)), {1}, AblationScheme::zero()), InvalidArgument);
}

TEST_CASE("weights serialize losslessly") {
  RngStream rng(2, 0);
  const ModelWeights w = make_random_weights(2, 2, 4, 3, 5, 2, 2, true, 1.0, rng);
  const ModelWeights r = weights_from_json(nlohmann::json::parse(weights_to_json(w).dump()));
  CHECK(r.causal == w.causal);
  CHECK(r.token_embed == w.token_embed);
  CHECK(r.unembed == w.unembed);
  REQUIRE(r.heads.size() == w.heads.size());
  for (std::size_t i = 0; i < w.heads.size(); ++i) {
    CHECK(r.heads[i].w_q == w.heads[i].w_q);
    CHECK(r.heads[i].w_o == w.heads[i].w_o);
    CHECK(r.heads[i].attention_scale == w.heads[i].attention_scale);
  }
  ModelWeights bad = w;
  bad.heads[1].w_k = Matrix::Zero(4, 2);
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = w;
  bad.unembed(0, 0) = std::nan("");
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
