#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "circuitcheck/error.hpp"
#include "circuitcheck/tasks.hpp"
#include "circuitcheck/zoo.hpp"

using namespace circuitcheck;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

std::shared_ptr<const CircuitEvaluator> evaluator_for(const ZooEntry& z, AblationScheme::Kind kind) {
  return std::make_shared<const CircuitEvaluator>(std::make_shared<const Engine>(z.weights, z.graph), z.task, kind);
}

}  // namespace

TEST_CASE("score kinds") {
  const Matrix uniform = Matrix::Zero(2, 5);
  CHECK(score(LogProbCorrect{}, uniform, Label{3}) == doctest::Approx(-std::log(5.0)));
  const Matrix peaked = rows({{0, 0, 0}, {0, 0, 10}});
  const double lse = std::log(2.0 + std::exp(10.0));
  CHECK(score(LogProbCorrect{}, peaked, Label{2}) == doctest::Approx(10.0 - lse));
  CHECK(score(LogProbCorrect{0}, peaked, Label{2}) == doctest::Approx(-std::log(3.0)));

  const Matrix out = rows({{9, 9}, {1, 2}, {3, 4}});
  CHECK(score(NegL2ToTarget{1}, out, Label{rows({{1, 2}, {3, 4}})}) == 0.0);
  CHECK(score(NegL2ToTarget{1}, out, Label{rows({{0, 2}, {3, 6}})}) == doctest::Approx(-(1.0 + 4.0)));
  CHECK_THROWS_AS(score(NegL2ToTarget{1}, out, Label{rows({{1, 2}})}), InvalidArgument);

  const Matrix logits = rows({{1, 5, 2, 0}});
  CHECK(score(LogitDiff{}, logits, Label{LogitDiffLabel{1, {0, 2}}}) == doctest::Approx(5.0 - 1.5));
  CHECK_THROWS_AS(score(LogitDiff{}, logits, Label{LogitDiffLabel{1, {}}}), InvalidArgument);
  CHECK_THROWS_AS(score(LogProbCorrect{}, logits, Label{7}), InvalidArgument);
  CHECK_THROWS_AS(score(LogProbCorrect{3}, logits, Label{0}), InvalidArgument);
}

TEST_CASE("faithfulness arithmetic") {
  CHECK(faithfulness({1, 2, 3}, {1, 2, 3}, 2) == 0.0);
  CHECK(faithfulness({1, 2, 3}, {0, 4, 3}, 1) == doctest::Approx((1.0 + 2.0) / 3));
  CHECK(faithfulness({1, 2, 3}, {0, 4, 3}, 2) == doctest::Approx((1.0 + 4.0) / 3));
  CHECK_THROWS_AS(faithfulness({1}, {1, 2}, 2), InvalidArgument);
  CHECK_THROWS_AS(faithfulness({1}, {1}, 3), InvalidArgument);
}

TEST_CASE("evaluator invariants on the zoo") {
  for (const std::string& name : zoo_names()) {
    const ZooEntry z = make_zoo(name, {.layers = 0, .heads_per_layer = 4});
    for (auto kind : {AblationScheme::Kind::Zero, AblationScheme::Kind::CorruptedCache}) {
      CAPTURE(name);
      const auto ev = evaluator_for(z, kind);
      const Circuit full = Circuit::full(z.graph);
      const Circuit empty(z.graph);
      CHECK(ev->faithfulness(full, 2) == 0.0);
      CHECK(ev->faithfulness(full, 1) == 0.0);

      // Independent recomputation of F(empty) from raw engine outputs.
      const Engine& engine = ev->engine();
      double f1 = 0, f2 = 0;
      for (const TaskExample& ex : z.task->dataset) {
        const double m = score(*z.task, engine.forward_full(ex.input).logits, ex.label);
        const Matrix e = kind == AblationScheme::Kind::Zero
                             ? Matrix::Zero(ex.input.size(), z.weights->out_dim())
                             : engine.forward_full(ex.corrupted).logits;
        const double c = score(*z.task, e, ex.label);
        f1 += std::fabs(m - c);
        f2 += (m - c) * (m - c);
      }
      const double n = static_cast<double>(z.task->dataset.size());
      CHECK(ev->faithfulness(empty, 1) == doctest::Approx(f1 / n).epsilon(1e-12));
      CHECK(ev->faithfulness(empty, 2) == doctest::Approx(f2 / n).epsilon(1e-12));

      // Jensen: F_1^2 <= F_2.
      CHECK(ev->faithfulness(empty, 1) * ev->faithfulness(empty, 1) <= ev->faithfulness(empty, 2) * (1 + 1e-12));

      const auto delta = ev->delta_scores(empty);
      double sq = 0;
      for (double d : delta) sq += d * d;
      CHECK(sq / n == doctest::Approx(ev->faithfulness(empty, 2)).epsilon(1e-12));

      CHECK(ev->knockout_scores(empty) == ev->model_scores());
      CHECK(ev->knockout_scores(full) == ev->circuit_scores(empty));
    }
  }
}

TEST_CASE("faithfulness does not depend on dataset order") {
  const ZooEntry z = make_proportion({.layers = 0, .heads_per_layer = 3});
  auto shuffled = std::make_shared<Task>(*z.task);
  RngStream rng(3, 0);
  rng.shuffle(std::span<TaskExample>(shuffled->dataset));
  const auto engine = std::make_shared<const Engine>(z.weights, z.graph);
  const CircuitEvaluator a(engine, z.task, AblationScheme::Kind::Zero);
  const CircuitEvaluator b(engine, shuffled, AblationScheme::Kind::Zero);
  for (int i = 0; i < 20; ++i) {
    EdgeSet s(z.graph->edge_count());
    for (std::size_t e = 0; e < z.graph->edge_count(); ++e)
      if (rng.uniform01() < 0.5) s.insert(e);
    const Circuit c(z.graph, s);
    CHECK(a.faithfulness(c, 2) == doctest::Approx(b.faithfulness(c, 2)).epsilon(1e-12));
  }
}

TEST_CASE("model scores beat the empty circuit") {
  for (const std::string& name : zoo_names()) {
    const ZooEntry z = make_zoo(name, {.layers = 0, .heads_per_layer = 2});
    const auto ev = evaluator_for(z, z.task->ablation_default);
    const auto m = ev->model_scores();
    const auto e = ev->circuit_scores(Circuit(z.graph));
    double sm = 0, se = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      sm += m[i];
      se += e[i];
    }
    CAPTURE(name);
    CHECK(sm > se);
  }
}

TEST_CASE("memoisation evaluates logically equal circuits once") {
  const ZooEntry z = make_reverse({.layers = 0, .heads_per_layer = 4});
  const auto ev = evaluator_for(z, AblationScheme::Kind::Zero);
  // Distractors are inert, so the ground truth is already cached as the full model.
  const std::size_t before = ev->evaluations();
  ev->circuit_scores(z.ground_truth);
  CHECK(ev->evaluations() == before);
  const Circuit partial = remove_edge(z.ground_truth, z.ground_truth.edges().front());
  ev->circuit_scores(partial);
  CHECK(ev->evaluations() == before + 1);
  // Adding an edge out of a distractor head changes nothing observable.
  const std::vector<Edge> extra{{NodeId::head(0, 2), NodeId::logits(), Channel::LogitsIn}};
  const Circuit padded = partial.united(Circuit::from_edges(z.graph, extra));
  CHECK(ev->circuit_scores(padded) == ev->circuit_scores(partial));
  CHECK(ev->evaluations() == before + 1);
}

TEST_CASE("datasets round trip through JSON lines") {
  for (const std::string& name : zoo_names()) {
    const ZooEntry z = make_zoo(name, {.layers = 0, .heads_per_layer = 1});
    const auto back = dataset_from_jsonl(dataset_to_jsonl(*z.task), z.task->score);
    REQUIRE(back.size() == z.task->dataset.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].input == z.task->dataset[i].input);
      CHECK(back[i].corrupted == z.task->dataset[i].corrupted);
      CHECK(back[i].label.index() == z.task->dataset[i].label.index());
    }
  }
}

TEST_CASE("malformed dataset lines report their line") {
  const std::string text =
      "{\"input\": [0, 1], \"label\": 1, \"corrupted\": [0, 2]}\n"
      "{\"input\": [0, 1], \"label\": 1}\n";
  try {
    dataset_from_jsonl(text, LogProbCorrect{});
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(dataset_from_jsonl("{\"input\": [0, 1], \"label\": 1, \"corrupted\": [0, 2]}\n{oops\n",
                                     LogProbCorrect{}),
                  ParseError);
}

TEST_CASE("task validation") {
  Task t{"t", {}, LogProbCorrect{}, AblationScheme::Kind::Zero};
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
  t.dataset.push_back({{0, 1}, Label{1}, {0, 2}});
  CHECK_NOTHROW(t.validate());
  t.dataset.push_back({{0, 1, 2}, Label{1}, {0, 2, 1}});
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
  t.dataset.pop_back();
  t.dataset.push_back({{0, 1}, Label{1}, {0}});
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
  t.dataset.pop_back();
  t.dataset.push_back({{0, 1}, Label{Matrix::Zero(1, 1)}, {0, 1}});
  CHECK_THROWS_AS(t.validate(), InvalidArgument);
}

TEST_CASE("task descriptor loads relative to its file") {
  const ZooEntry z = make_reverse({.layers = 0, .heads_per_layer = 1});
  const auto dir = std::filesystem::temp_directory_path() / "circuitcheck_task_test";
  std::filesystem::create_directories(dir / "data");
  {
    std::ofstream(dir / "data" / "d.jsonl") << dataset_to_jsonl(*z.task);
    std::ofstream(dir / "task.json") << task_descriptor(*z.task, "data/d.jsonl").dump(2);
  }
  const Task loaded = load_task((dir / "task.json").string());
  CHECK(loaded.name == z.task->name);
  CHECK(loaded.dataset.size() == z.task->dataset.size());
  CHECK(score_kind_name(loaded.score) == score_kind_name(z.task->score));
  CHECK(loaded.ablation_default == z.task->ablation_default);
  std::filesystem::remove_all(dir);
}
