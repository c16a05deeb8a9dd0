#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circuitcheck/hypothesis_tests.hpp"
#include "circuitcheck/zoo.hpp"

namespace circuitcheck {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

// Per-test random stream indices under the master seed.
namespace streams {
inline constexpr std::uint64_t kEquivalence = 0;
inline constexpr std::uint64_t kIndependence = 1;
inline constexpr std::uint64_t kMinimality = 2;
inline constexpr std::uint64_t kSufficiency = 3;
inline constexpr std::uint64_t kPartialNecessityComplement = 4;
inline constexpr std::uint64_t kDecoy = 5;
inline constexpr std::uint64_t kContainment = 6;
inline constexpr std::uint64_t kPartialNecessityModel = 7;
}  // namespace streams

const std::vector<std::string>& all_test_names();  // fixed execution order

struct SuiteConfig {
  std::string zoo;  // zoo model name, or empty for an external model
  int zoo_layers = 0;
  int zoo_heads = 0;
  std::string weights_path;
  std::string task_path;
  std::string circuit = "ground-truth";  // ground-truth | decoy | path to a circuit file
  std::vector<std::string> tests = all_test_names();
  double epsilon = 0.1;
  double quantile = 0.9;
  double alpha = 0.05;
  std::size_t n_reference = 100;
  std::size_t n_reference_minimality = 1000;
  std::size_t permutations = 1000;
  int k_norm = 2;
  std::optional<std::string> ablation;           // zero | corrupted; default from the task
  std::string reference_source = "both";         // complement | model | both
  std::optional<std::size_t> reference_size;     // default |candidate|
  std::optional<double> bandwidth;               // default median heuristic
  std::uint64_t seed = 0;
  std::size_t workers = 1;  // does not affect results

  void validate() const;
};

nlohmann::json config_to_json(const SuiteConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
SuiteConfig config_from_json(const nlohmann::json& doc, SuiteConfig base = {});

struct LoadedModel {
  std::string name;
  std::shared_ptr<const ModelWeights> weights;
  GraphPtr graph;
  std::shared_ptr<const Task> task;
  std::optional<Circuit> ground_truth;
  std::optional<ZooEntry> entry;
};

LoadedModel load_model(const SuiteConfig& config);
Circuit resolve_circuit(const SuiteConfig& config, const LoadedModel& model);

struct Session {
  LoadedModel model;
  std::shared_ptr<const Engine> engine;
  std::shared_ptr<const CircuitEvaluator> evaluator;
  Circuit candidate;
};

Session open_session(const SuiteConfig& config);

// Report JSON (deterministic: no timings, no worker count).
nlohmann::json run_suite(const SuiteConfig& config);
nlohmann::json run_suite(const SuiteConfig& config, const Session& session);
// Throws InvalidArgument describing the first schema violation.
void validate_report(const nlohmann::json& report);

struct SweepRow {
  std::size_t size = 0;
  double effective_size = 0;  // mean edge count of the sampled references
  double median_reference_faithfulness = 0;
  double candidate_faithfulness = 0;
  double statistic = 0;
  double p_value = 1;
  double containment_frequency = 0;
};

std::vector<SweepRow> sweep_reference_size(const SuiteConfig& config, const Session& session,
                                           const std::vector<std::size_t>& sizes, std::size_t containment_samples);
std::string sweep_csv(const std::vector<SweepRow>& rows);

struct KnockdownRow {
  std::size_t edges_removed = 0;
  std::string removed_edge;
  double minimality_score = 0;
  double faithfulness = 0;
  double candidate_faithfulness = 0;
  double empty_faithfulness = 0;
};

// Removes candidate edges one at a time in ascending order of delta(e, C).
std::vector<KnockdownRow> knockdown_curve(const SuiteConfig& config, const Session& session);
std::string knockdown_csv(const std::vector<KnockdownRow>& rows);

std::string format_double(double x);
void write_text(const std::string& path, const std::string& text);

}  // namespace circuitcheck
