#include "circuitcheck/tasks.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "circuitcheck/error.hpp"
#include "circuitcheck/located_json.hpp"

namespace circuitcheck {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Eigen::Index resolve_position(int position, const Matrix& logits) {
  const Eigen::Index p = position < 0 ? logits.rows() + position : position;
  if (p < 0 || p >= logits.rows()) {
    throw InvalidArgument("score position " + std::to_string(position) + " is outside a sequence of length " +
                          std::to_string(logits.rows()));
  }
  return p;
}

double log_softmax_at(const Matrix& logits, Eigen::Index row, int token) {
  if (token < 0 || token >= logits.cols()) {
    throw InvalidArgument("label token " + std::to_string(token) + " is outside the logit range");
  }
  const double m = logits.row(row).maxCoeff();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) sum += std::exp(logits(row, j) - m);
  return logits(row, token) - m - std::log(sum);
}

}  // namespace

double score(const ScoreKind& kind, const Matrix& logits, const Label& label) {
  return std::visit(
      overloaded{
          [&](const LogProbCorrect& k) {
            const int* token = std::get_if<int>(&label);
            if (token == nullptr) throw InvalidArgument("log_prob_correct needs a token label");
            return log_softmax_at(logits, resolve_position(k.position, logits), *token);
          },
          [&](const NegL2ToTarget& k) {
            const Matrix* target = std::get_if<Matrix>(&label);
            if (target == nullptr) throw InvalidArgument("neg_l2_to_target needs a matrix label");
            const Eigen::Index first = k.first_position;
            if (first < 0 || target->rows() != logits.rows() - first || target->cols() != logits.cols()) {
              throw InvalidArgument("target shape " + std::to_string(target->rows()) + "x" +
                                    std::to_string(target->cols()) + " does not match outputs " +
                                    std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) +
                                    " from position " + std::to_string(first));
            }
            double total = 0.0;
            for (Eigen::Index t = 0; t < target->rows(); ++t) {
              for (Eigen::Index j = 0; j < target->cols(); ++j) {
                const double diff = logits(first + t, j) - (*target)(t, j);
                total += diff * diff;
              }
            }
            return -total;
          },
          [&](const LogitDiff& k) {
            const auto* lab = std::get_if<LogitDiffLabel>(&label);
            if (lab == nullptr || lab->alternatives.empty()) {
              throw InvalidArgument("logit_diff needs a correct token and at least one alternative");
            }
            const Eigen::Index row = resolve_position(k.position, logits);
            auto at = [&](int token) {
              if (token < 0 || token >= logits.cols()) throw InvalidArgument("label token outside the logit range");
              return logits(row, token);
            };
            double alt = 0.0;
            for (int a : lab->alternatives) alt += at(a);
            return at(lab->correct) - alt / static_cast<double>(lab->alternatives.size());
          },
      },
      kind);
}

double score(const Task& task, const Matrix& logits, const Label& label) { return score(task.score, logits, label); }

std::string score_kind_name(const ScoreKind& kind) {
  return std::visit(overloaded{[](const LogProbCorrect&) { return std::string("log_prob_correct"); },
                               [](const NegL2ToTarget&) { return std::string("neg_l2_to_target"); },
                               [](const LogitDiff&) { return std::string("logit_diff"); }},
                    kind);
}

std::string ablation_name(AblationScheme::Kind kind) {
  return kind == AblationScheme::Kind::Zero ? "zero" : "corrupted";
}

AblationScheme::Kind parse_ablation(const std::string& text) {
  if (text == "zero") return AblationScheme::Kind::Zero;
  if (text == "corrupted") return AblationScheme::Kind::CorruptedCache;
  throw InvalidArgument("unknown ablation \"" + text + "\" (expected zero or corrupted)");
}

void Task::validate() const {
  if (dataset.empty()) throw InvalidArgument("task " + name + " has an empty dataset");
  const std::size_t len = dataset.front().input.size();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const TaskExample& ex = dataset[i];
    const std::string where = "task " + name + " example " + std::to_string(i);
    if (ex.input.empty()) throw InvalidArgument(where + " has an empty input");
    if (ex.input.size() != len) throw InvalidArgument(where + " differs in length from the first example");
    if (ex.corrupted.size() != ex.input.size()) {
      throw InvalidArgument(where + ": corrupted input must have the same length as the input");
    }
    const bool ok = std::visit(overloaded{[&](const LogProbCorrect&) { return std::holds_alternative<int>(ex.label); },
                                          [&](const NegL2ToTarget&) { return std::holds_alternative<Matrix>(ex.label); },
                                          [&](const LogitDiff&) {
                                            return std::holds_alternative<LogitDiffLabel>(ex.label);
                                          }},
                               score);
    if (!ok) throw InvalidArgument(where + ": label does not fit score kind " + score_kind_name(score));
  }
}

// ---- serialization ----

namespace {

json label_to_json(const Label& label) {
  return std::visit(overloaded{[](int t) { return json(t); },
                               [](const Matrix& m) {
                                 json rows = json::array();
                                 for (Eigen::Index r = 0; r < m.rows(); ++r) {
                                   json row = json::array();
                                   for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
                                   rows.push_back(std::move(row));
                                 }
                                 return rows;
                               },
                               [](const LogitDiffLabel& l) {
                                 return json{{"correct", l.correct}, {"alternatives", l.alternatives}};
                               }},
                    label);
}

Label label_from_json(const json& j, const ScoreKind& kind, std::size_t line) {
  try {
    if (std::holds_alternative<LogProbCorrect>(kind)) return j.get<int>();
    if (std::holds_alternative<LogitDiff>(kind)) {
      return LogitDiffLabel{j.at("correct").get<int>(), j.at("alternatives").get<std::vector<int>>()};
    }
    if (!j.is_array() || j.empty() || !j[0].is_array()) throw ParseError("label must be a list of rows", line);
    Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
      if (!j[r].is_array() || j[r].size() != j[0].size()) throw ParseError("label rows differ in length", line);
      for (std::size_t c = 0; c < j[r].size(); ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
      }
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad label: ") + e.what(), line);
  }
}

}  // namespace

std::string dataset_to_jsonl(const Task& task) {
  std::ostringstream out;
  for (const TaskExample& ex : task.dataset) {
    out << json{{"input", ex.input}, {"label", label_to_json(ex.label)}, {"corrupted", ex.corrupted}}.dump() << "\n";
  }
  return out.str();
}

std::vector<TaskExample> dataset_from_jsonl(const std::string& text, const ScoreKind& kind) {
  std::vector<TaskExample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object() || !j.contains("input") || !j.contains("label") || !j.contains("corrupted")) {
      throw ParseError("each line needs \"input\", \"label\" and \"corrupted\"", line_no);
    }
    TaskExample ex;
    try {
      ex.input = j["input"].get<Tokens>();
      ex.corrupted = j["corrupted"].get<Tokens>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("token lists must be integers: ") + e.what(), line_no);
    }
    ex.label = label_from_json(j["label"], kind, line_no);
    out.push_back(std::move(ex));
  }
  return out;
}

json task_descriptor(const Task& task, const std::string& dataset_path) {
  json score_j = {{"kind", score_kind_name(task.score)}};
  std::visit(overloaded{[&](const LogProbCorrect& k) { score_j["position"] = k.position; },
                        [&](const NegL2ToTarget& k) { score_j["first_position"] = k.first_position; },
                        [&](const LogitDiff& k) { score_j["position"] = k.position; }},
             task.score);
  return {{"name", task.name},
          {"score", std::move(score_j)},
          {"ablation", ablation_name(task.ablation_default)},
          {"dataset", dataset_path}};
}

Task load_task(const std::string& path) {
  const LocatedJson doc = parse_located_json(read_text_file(path));
  const json& j = doc.value;
  Task task;
  try {
    task.name = j.at("name").get<std::string>();
    const json& s = j.at("score");
    const std::string kind = s.at("kind").get<std::string>();
    if (kind == "log_prob_correct") {
      task.score = LogProbCorrect{s.value("position", -1)};
    } else if (kind == "neg_l2_to_target") {
      task.score = NegL2ToTarget{s.value("first_position", 1)};
    } else if (kind == "logit_diff") {
      task.score = LogitDiff{s.value("position", -1)};
    } else {
      throw ParseError("unknown score kind \"" + kind + "\"", doc.line_of("/score/kind"));
    }
    task.ablation_default = parse_ablation(j.value("ablation", std::string("zero")));
    std::filesystem::path data = j.at("dataset").get<std::string>();
    if (data.is_relative()) data = std::filesystem::path(path).parent_path() / data;
    try {
      task.dataset = dataset_from_jsonl(read_text_file(data.string()), task.score);
    } catch (const ParseError& e) {
      throw ParseError(data.string() + ": " + e.what(), 0);
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  task.validate();
  return task;
}

// ---- evaluation ----

double faithfulness(const std::vector<double>& model_scores, const std::vector<double>& circuit_scores, int k) {
  if (k != 1 && k != 2) throw InvalidArgument("faithfulness exponent must be 1 or 2");
  if (model_scores.empty()) throw InvalidArgument("faithfulness of an empty dataset");
  if (model_scores.size() != circuit_scores.size()) throw InvalidArgument("score vectors differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < model_scores.size(); ++i) {
    const double d = std::abs(model_scores[i] - circuit_scores[i]);
    total += k == 1 ? d : d * d;
  }
  return total / static_cast<double>(model_scores.size());
}

CircuitEvaluator::CircuitEvaluator(std::shared_ptr<const Engine> engine, std::shared_ptr<const Task> task,
                                   AblationScheme::Kind ablation)
    : engine_(std::move(engine)), task_(std::move(task)), ablation_(ablation) {
  if (!engine_ || !task_) throw InvalidArgument("evaluator needs an engine and a task");
  task_->validate();
  for (const TaskExample& ex : task_->dataset) {
    engine_->check_tokens(ex.input);
    engine_->check_tokens(ex.corrupted);
  }
  if (ablation_ == AblationScheme::Kind::CorruptedCache) {
    corrupted_caches_.reserve(task_->dataset.size());
    for (const TaskExample& ex : task_->dataset) {
      corrupted_caches_.push_back(
          std::make_shared<const ActivationCache>(engine_->forward_full(ex.corrupted).cache));
    }
  }
  model_scores_ = circuit_scores(Circuit::full(engine_->graph_ptr()));
}

AblationScheme CircuitEvaluator::scheme_for(std::size_t example) const {
  if (ablation_ == AblationScheme::Kind::Zero) return AblationScheme::zero();
  return AblationScheme::corrupted(corrupted_caches_[example]);
}

Matrix CircuitEvaluator::circuit_logits(const Circuit& circuit, std::size_t example) const {
  return engine_->run_circuit(circuit, task_->dataset.at(example).input, scheme_for(example));
}

std::vector<double> CircuitEvaluator::compute_scores(const Circuit& circuit) const {
  std::vector<double> out;
  out.reserve(task_->dataset.size());
  for (std::size_t i = 0; i < task_->dataset.size(); ++i) {
    out.push_back(score(*task_, circuit_logits(circuit, i), task_->dataset[i].label));
  }
  return out;
}

std::vector<double> CircuitEvaluator::circuit_scores(const Circuit& circuit) const {
  std::vector<std::uint32_t> key = engine_->canonical_key(circuit);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  std::vector<double> scores = compute_scores(circuit);
  std::lock_guard<std::mutex> lock(mutex_);
  ++evaluations_;
  if (memo_.size() < kMemoLimit) memo_.emplace(std::move(key), scores);
  return scores;
}

std::vector<double> CircuitEvaluator::knockout_scores(const Circuit& circuit) const {
  return circuit_scores(complement(circuit));
}

std::vector<double> CircuitEvaluator::delta_scores(const Circuit& circuit) const {
  std::vector<double> s = circuit_scores(circuit);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] -= model_scores_[i];
  return s;
}

double CircuitEvaluator::faithfulness(const Circuit& circuit, int k) const {
  return circuitcheck::faithfulness(model_scores_, circuit_scores(circuit), k);
}

std::size_t CircuitEvaluator::cache_entries() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return memo_.size();
}

std::size_t CircuitEvaluator::evaluations() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return evaluations_;
}

}  // namespace circuitcheck
