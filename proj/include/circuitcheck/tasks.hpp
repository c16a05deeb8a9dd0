#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "circuitcheck/engine.hpp"

namespace circuitcheck {

struct LogitDiffLabel {
  int correct = 0;
  std::vector<int> alternatives;
};

// Target token id, target output rows (one per scored position), or a
// correct-vs-alternatives logit difference.
using Label = std::variant<int, Matrix, LogitDiffLabel>;

struct TaskExample {
  Tokens input;
  Label label;
  Tokens corrupted;
};

// log softmax probability of the label token at `position` (-1 = last).
struct LogProbCorrect {
  int position = -1;
};
// -sum over positions >= first_position of ||out_t - target_t||^2; the label
// matrix holds one target row per scored position.
struct NegL2ToTarget {
  int first_position = 1;
};
// logit[correct] - mean(logit[alternatives]) at `position` (-1 = last).
struct LogitDiff {
  int position = -1;
};

using ScoreKind = std::variant<LogProbCorrect, NegL2ToTarget, LogitDiff>;

struct Task {
  std::string name;
  std::vector<TaskExample> dataset;
  ScoreKind score;
  AblationScheme::Kind ablation_default = AblationScheme::Kind::Zero;

  // Throws when the dataset is empty, lengths differ, or labels do not fit the score kind.
  void validate() const;
};

// Higher is better.
double score(const Task& task, const Matrix& logits, const Label& label);
double score(const ScoreKind& kind, const Matrix& logits, const Label& label);

std::string score_kind_name(const ScoreKind& kind);
std::string ablation_name(AblationScheme::Kind kind);
AblationScheme::Kind parse_ablation(const std::string& text);

// JSON lines: {"input": [...], "label": ..., "corrupted": [...]}
std::string dataset_to_jsonl(const Task& task);
std::vector<TaskExample> dataset_from_jsonl(const std::string& text, const ScoreKind& kind);

// Task descriptor: {"name", "score": {"kind", ...}, "ablation", "dataset": path}
nlohmann::json task_descriptor(const Task& task, const std::string& dataset_path);
Task load_task(const std::string& path);

// Scores circuits of one model on one task. Per-example scores of circuits are
// memoised on the engine's canonical key, so logically identical circuits are
// evaluated once. Thread-safe.
class CircuitEvaluator {
 public:
  CircuitEvaluator(std::shared_ptr<const Engine> engine, std::shared_ptr<const Task> task,
                   AblationScheme::Kind ablation);

  const Engine& engine() const { return *engine_; }
  const Task& task() const { return *task_; }
  AblationScheme::Kind ablation() const { return ablation_; }
  std::size_t size() const { return task_->dataset.size(); }

  const std::vector<double>& model_scores() const { return model_scores_; }
  std::vector<double> circuit_scores(const Circuit& circuit) const;
  std::vector<double> knockout_scores(const Circuit& circuit) const;
  // s(C(x)) - s(M(x)) per example.
  std::vector<double> delta_scores(const Circuit& circuit) const;
  double faithfulness(const Circuit& circuit, int k) const;

  Matrix circuit_logits(const Circuit& circuit, std::size_t example) const;

  std::size_t cache_entries() const;
  std::size_t evaluations() const;

 private:
  AblationScheme scheme_for(std::size_t example) const;
  std::vector<double> compute_scores(const Circuit& circuit) const;

  std::shared_ptr<const Engine> engine_;
  std::shared_ptr<const Task> task_;
  AblationScheme::Kind ablation_;
  std::vector<std::shared_ptr<const ActivationCache>> corrupted_caches_;
  std::vector<double> model_scores_;

  mutable std::mutex mutex_;
  mutable std::map<std::vector<std::uint32_t>, std::vector<double>> memo_;
  mutable std::size_t evaluations_ = 0;
  static constexpr std::size_t kMemoLimit = 200'000;
};

// Mean |a_i - b_i|^k.
double faithfulness(const std::vector<double>& model_scores, const std::vector<double>& circuit_scores, int k);

}  // namespace circuitcheck
