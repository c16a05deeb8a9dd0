#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circuitcheck/rng.hpp"

namespace circuitcheck {

enum class Alternative { Greater, Less };
enum class Comparison { TargetLess, TargetGreater };

std::string alternative_name(Alternative a);
std::string comparison_name(Comparison c);

// Only the parameters that apply to a test are set.
struct TestParams {
  std::optional<double> epsilon;
  std::optional<double> quantile;
  std::optional<double> bandwidth_x;
  std::optional<double> bandwidth_y;
  std::optional<std::size_t> permutations;
  std::optional<Comparison> comparison;
  std::optional<Alternative> alternative;
  std::optional<std::size_t> correction_factor;
  std::optional<std::string> reference_source;
  std::optional<std::size_t> reference_size_requested;
  std::optional<std::size_t> reference_size_effective;
  std::optional<std::size_t> n_reference;
  std::optional<int> k_norm;
  std::optional<std::string> ablation;
  std::optional<std::string> edge;
};

struct TestResult {
  std::string test_name;
  double statistic = 0.0;
  double p_value = 1.0;
  double alpha = 0.05;
  double effective_alpha = 0.05;  // alpha after any Bonferroni division
  bool null_retained = true;      // p_value >= effective_alpha
  std::size_t n_samples = 0;
  TestParams params;
  std::optional<std::string> degenerate_flag;
  std::optional<double> target_value;      // Z* for tail tests
  std::vector<double> reference_samples;   // Z_i for tail tests
  std::optional<std::size_t> successes;    // comparison count for tail tests
};

nlohmann::json to_json(const TestResult& result);
TestResult test_result_from_json(const nlohmann::json& doc);

// Exact one-sided binomial tail: Greater -> P(K >= k), Less -> P(K <= k).
double binom_pvalue(std::size_t k, std::size_t n, double p0, Alternative alternative);

// Sign-test equivalence with margin epsilon. Exact ties are dropped.
TestResult equivalence_test(const std::vector<double>& deltas, double epsilon, double alpha);
// p-value for k positives among n untied deltas.
double equivalence_pvalue(std::size_t k, std::size_t n, double epsilon);

double median_heuristic(const std::vector<double>& xs);
// Biased centred HSIC with RBF kernels; a non-positive or absent bandwidth
// selects the median heuristic for that variable.
double hsic(const std::vector<double>& xs, const std::vector<double>& ys, std::optional<double> bandwidth = {});

TestResult independence_test(const std::vector<double>& scores_knockout, const std::vector<double>& scores_model,
                             std::optional<double> bandwidth, std::size_t permutations, RngStream& rng, double alpha);

struct TailTestSpec {
  double quantile = 0.9;
  Comparison comparison = Comparison::TargetLess;
  Alternative alternative = Alternative::Greater;
};

// Counts samples Z_i with Z* < Z_i (TargetLess) or Z* > Z_i (TargetGreater);
// ties count as failures. `effective_alpha` defaults to alpha.
TestResult tail_test(double z_star, const std::vector<double>& samples, const TailTestSpec& spec, double alpha,
                     std::optional<double> effective_alpha = {});

double bonferroni(double alpha, std::size_t m);

}  // namespace circuitcheck
