#include "circuitcheck/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "circuitcheck/error.hpp"

namespace circuitcheck {

using nlohmann::json;

std::string alternative_name(Alternative a) { return a == Alternative::Greater ? "greater" : "less"; }
std::string comparison_name(Comparison c) { return c == Comparison::TargetLess ? "target_less" : "target_greater"; }

namespace {

double log_binom_pmf(std::size_t j, std::size_t n, double log_p, double log_q) {
  const double dn = static_cast<double>(n);
  const double dj = static_cast<double>(j);
  return std::lgamma(dn + 1) - std::lgamma(dj + 1) - std::lgamma(dn - dj + 1) + dj * log_p + (dn - dj) * log_q;
}

// Sum of Binomial(n, p) pmf over j in [lo, hi] where keep(j) holds.
template <typename Keep>
double binom_mass(std::size_t n, double p, std::size_t lo, std::size_t hi, Keep keep) {
  if (p <= 0.0) return (lo == 0 && keep(0)) ? 1.0 : 0.0;
  if (p >= 1.0) return (hi >= n && keep(n)) ? 1.0 : 0.0;
  const double log_p = std::log(p);
  const double log_q = std::log1p(-p);
  std::vector<double> terms;
  for (std::size_t j = lo; j <= hi; ++j) {
    if (keep(j)) terms.push_back(log_binom_pmf(j, n, log_p, log_q));
  }
  if (terms.empty()) return 0.0;
  const double m = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - m);
  return std::clamp(std::exp(m) * sum, 0.0, 1.0);
}

void require_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
}

}  // namespace

double binom_pvalue(std::size_t k, std::size_t n, double p0, Alternative alternative) {
  if (n == 0) throw InvalidArgument("binomial test needs at least one trial");
  if (k > n) throw InvalidArgument("successes exceed trials");
  if (!(p0 >= 0.0 && p0 <= 1.0)) throw InvalidArgument("p0 must lie in [0, 1]");
  auto all = [](std::size_t) { return true; };
  if (alternative == Alternative::Greater) return binom_mass(n, p0, k, n, all);
  return binom_mass(n, p0, 0, k, all);
}

double equivalence_pvalue(std::size_t k, std::size_t n, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidArgument("epsilon must lie in (0, 1/2)");
  if (k > n) throw InvalidArgument("positives exceed trials");
  if (n == 0) return 1.0;
  // |j/n - 1/2| >= |k/n - 1/2| compared in integers.
  const auto observed = std::llabs(2 * static_cast<long long>(k) - static_cast<long long>(n));
  auto keep = [&](std::size_t j) {
    return std::llabs(2 * static_cast<long long>(j) - static_cast<long long>(n)) >= observed;
  };
  return binom_mass(n, 0.5 + epsilon, 0, n, keep);
}

TestResult equivalence_test(const std::vector<double>& deltas, double epsilon, double alpha) {
  if (deltas.empty()) throw InvalidArgument("equivalence test needs at least one delta");
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidArgument("epsilon must lie in (0, 1/2)");
  require_alpha(alpha);
  std::size_t n = 0;
  std::size_t k = 0;
  for (double d : deltas) {
    if (d != 0.0) ++n;
    if (d > 0.0) ++k;
  }
  TestResult r;
  r.test_name = "equivalence";
  r.alpha = alpha;
  r.effective_alpha = alpha;
  r.n_samples = n;
  r.params.epsilon = epsilon;
  if (n == 0) {
    r.statistic = 0.0;
    r.p_value = 1.0;
    r.degenerate_flag = "identical scores; sign test inapplicable";
  } else {
    r.statistic = std::abs(static_cast<double>(k) / static_cast<double>(n) - 0.5);
    r.p_value = equivalence_pvalue(k, n, epsilon);
  }
  r.successes = k;
  r.null_retained = r.p_value >= r.effective_alpha;
  return r;
}

double median_heuristic(const std::vector<double>& xs) {
  std::vector<double> diffs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      const double d = std::abs(xs[i] - xs[j]);
      if (d > 0.0) diffs.push_back(d);
    }
  }
  if (diffs.empty()) return 1.0;
  const std::size_t mid = diffs.size() / 2;
  std::nth_element(diffs.begin(), diffs.begin() + static_cast<std::ptrdiff_t>(mid), diffs.end());
  const double upper = diffs[mid];
  if (diffs.size() % 2 == 1) return upper;
  const double lower = *std::max_element(diffs.begin(), diffs.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

namespace {

using Gram = std::vector<double>;  // row-major n x n

Gram rbf_gram(const std::vector<double>& xs, double rho) {
  const std::size_t n = xs.size();
  Gram g(n * n);
  const double denom = 2.0 * rho * rho;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xs[i] - xs[j];
      g[i * n + j] = std::exp(-(d * d) / denom);
    }
  }
  return g;
}

// H K H with H = I - 11^T / n.
Gram center(const Gram& k, std::size_t n) {
  std::vector<double> row(n, 0.0);
  std::vector<double> col(n, 0.0);
  double all = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      row[i] += k[i * n + j];
      col[j] += k[i * n + j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) all += row[i];
  const double dn = static_cast<double>(n);
  Gram out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = k[i * n + j] - row[i] / dn - col[j] / dn + all / (dn * dn);
    }
  }
  return out;
}

double resolve_bandwidth(const std::vector<double>& xs, std::optional<double> bandwidth) {
  if (bandwidth && *bandwidth > 0.0) return *bandwidth;
  return median_heuristic(xs);
}

void check_pair(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("HSIC inputs differ in length");
  if (xs.size() < 2) throw InvalidArgument("HSIC needs at least two samples");
}

}  // namespace

double hsic(const std::vector<double>& xs, const std::vector<double>& ys, std::optional<double> bandwidth) {
  check_pair(xs, ys);
  if (bandwidth && !(*bandwidth > 0.0)) throw InvalidArgument("HSIC bandwidth must be positive");
  const std::size_t n = xs.size();
  const Gram kc = center(rbf_gram(xs, resolve_bandwidth(xs, bandwidth)), n);
  const Gram l = rbf_gram(ys, resolve_bandwidth(ys, bandwidth));
  // tr(HKH L) = sum_ij (HKH)_ij L_ij for symmetric L.
  double total = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) total += kc[i] * l[i];
  return std::max(0.0, total / static_cast<double>(n * n));
}

TestResult independence_test(const std::vector<double>& scores_knockout, const std::vector<double>& scores_model,
                             std::optional<double> bandwidth, std::size_t permutations, RngStream& rng, double alpha) {
  check_pair(scores_knockout, scores_model);
  if (permutations == 0) throw InvalidArgument("permutation test needs at least one permutation");
  if (bandwidth && !(*bandwidth > 0.0)) throw InvalidArgument("HSIC bandwidth must be positive");
  require_alpha(alpha);
  const std::size_t n = scores_knockout.size();
  TestResult r;
  r.test_name = "independence";
  r.alpha = alpha;
  r.effective_alpha = alpha;
  r.n_samples = n;
  r.params.permutations = permutations;
  const double rho_x = resolve_bandwidth(scores_knockout, bandwidth);
  const double rho_y = resolve_bandwidth(scores_model, bandwidth);
  r.params.bandwidth_x = rho_x;
  r.params.bandwidth_y = rho_y;

  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(scores_knockout) || constant(scores_model)) {
    // HSIC and every permuted HSIC are zero; no dependence can be shown.
    r.statistic = 0.0;
    r.p_value = 1.0;
    r.null_retained = true;
    r.degenerate_flag = "zero-variance statistic";
    return r;
  }

  const Gram kc = center(rbf_gram(scores_knockout, rho_x), n);
  const Gram l = rbf_gram(scores_model, rho_y);
  const double scale = static_cast<double>(n * n);
  auto statistic = [&](const std::vector<std::size_t>& perm) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* krow = &kc[i * n];
      const double* lrow = &l[perm[i] * n];
      for (std::size_t j = 0; j < n; ++j) total += krow[j] * lrow[perm[j]];
    }
    return total / scale;
  };
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  const double t_obs = statistic(perm);
  std::size_t exceed = 0;
  for (std::size_t b = 0; b < permutations; ++b) {
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    if (statistic(perm) > t_obs) ++exceed;
  }
  r.statistic = std::max(0.0, t_obs);
  r.p_value = static_cast<double>(exceed) / static_cast<double>(permutations);
  r.null_retained = r.p_value >= r.effective_alpha;
  return r;
}

TestResult tail_test(double z_star, const std::vector<double>& samples, const TailTestSpec& spec, double alpha,
                     std::optional<double> effective_alpha) {
  if (samples.empty()) throw InvalidArgument("tail test needs at least one reference sample");
  if (!(spec.quantile > 0.0 && spec.quantile < 1.0)) throw InvalidArgument("quantile must lie in (0, 1)");
  require_alpha(alpha);
  std::size_t count = 0;
  for (double z : samples) {
    const bool holds = spec.comparison == Comparison::TargetLess ? z_star < z : z_star > z;
    if (holds) ++count;
  }
  TestResult r;
  r.test_name = "tail";
  r.alpha = alpha;
  r.effective_alpha = effective_alpha.value_or(alpha);
  r.n_samples = samples.size();
  r.statistic = static_cast<double>(count) / static_cast<double>(samples.size());
  r.p_value = binom_pvalue(count, samples.size(), spec.quantile, spec.alternative);
  r.null_retained = r.p_value >= r.effective_alpha;
  r.params.quantile = spec.quantile;
  r.params.comparison = spec.comparison;
  r.params.alternative = spec.alternative;
  r.target_value = z_star;
  r.reference_samples = samples;
  r.successes = count;
  return r;
}

double bonferroni(double alpha, std::size_t m) {
  if (m == 0) throw InvalidArgument("Bonferroni correction needs at least one test");
  return alpha / static_cast<double>(m);
}

// ---- JSON ----

namespace {

template <typename T>
void put(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
void get(const json& j, const char* key, std::optional<T>& v) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) v = it->get<T>();
}

}  // namespace

json to_json(const TestResult& r) {
  json params = json::object();
  const TestParams& p = r.params;
  put(params, "epsilon", p.epsilon);
  put(params, "quantile", p.quantile);
  put(params, "bandwidth_x", p.bandwidth_x);
  put(params, "bandwidth_y", p.bandwidth_y);
  put(params, "permutations", p.permutations);
  if (p.comparison) params["comparison"] = comparison_name(*p.comparison);
  if (p.alternative) params["alternative"] = alternative_name(*p.alternative);
  put(params, "correction_factor", p.correction_factor);
  put(params, "reference_source", p.reference_source);
  put(params, "reference_size_requested", p.reference_size_requested);
  put(params, "reference_size_effective", p.reference_size_effective);
  put(params, "n_reference", p.n_reference);
  put(params, "k_norm", p.k_norm);
  put(params, "ablation", p.ablation);
  put(params, "edge", p.edge);

  json j = {{"test", r.test_name},
            {"statistic", r.statistic},
            {"p_value", r.p_value},
            {"alpha", r.alpha},
            {"effective_alpha", r.effective_alpha},
            {"null_retained", r.null_retained},
            {"n_samples", r.n_samples},
            {"params", std::move(params)}};
  j["degenerate_flag"] = r.degenerate_flag ? json(*r.degenerate_flag) : json(nullptr);
  put(j, "target_value", r.target_value);
  put(j, "successes", r.successes);
  if (!r.reference_samples.empty()) j["reference_samples"] = r.reference_samples;
  return j;
}

TestResult test_result_from_json(const json& j) {
  TestResult r;
  try {
    r.test_name = j.at("test").get<std::string>();
    r.statistic = j.at("statistic").get<double>();
    r.p_value = j.at("p_value").get<double>();
    r.alpha = j.at("alpha").get<double>();
    r.effective_alpha = j.at("effective_alpha").get<double>();
    r.null_retained = j.at("null_retained").get<bool>();
    r.n_samples = j.at("n_samples").get<std::size_t>();
    const json& p = j.at("params");
    get(p, "epsilon", r.params.epsilon);
    get(p, "quantile", r.params.quantile);
    get(p, "bandwidth_x", r.params.bandwidth_x);
    get(p, "bandwidth_y", r.params.bandwidth_y);
    get(p, "permutations", r.params.permutations);
    if (p.contains("comparison")) {
      r.params.comparison =
          p["comparison"] == "target_less" ? Comparison::TargetLess : Comparison::TargetGreater;
    }
    if (p.contains("alternative")) {
      r.params.alternative = p["alternative"] == "greater" ? Alternative::Greater : Alternative::Less;
    }
    get(p, "correction_factor", r.params.correction_factor);
    get(p, "reference_source", r.params.reference_source);
    get(p, "reference_size_requested", r.params.reference_size_requested);
    get(p, "reference_size_effective", r.params.reference_size_effective);
    get(p, "n_reference", r.params.n_reference);
    get(p, "k_norm", r.params.k_norm);
    get(p, "ablation", r.params.ablation);
    get(p, "edge", r.params.edge);
    get(j, "degenerate_flag", r.degenerate_flag);
    get(j, "target_value", r.target_value);
    get(j, "successes", r.successes);
    if (j.contains("reference_samples")) r.reference_samples = j["reference_samples"].get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed test result: ") + e.what());
  }
  if (!(r.p_value >= 0.0 && r.p_value <= 1.0)) throw InvalidArgument("test result p_value outside [0, 1]");
  if (r.null_retained != (r.p_value >= r.effective_alpha)) {
    throw InvalidArgument("test result decision disagrees with its p-value");
  }
  return r;
}

}  // namespace circuitcheck
