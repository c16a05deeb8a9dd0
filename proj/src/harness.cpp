#include "circuitcheck/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "circuitcheck/circuit_io.hpp"
#include "circuitcheck/error.hpp"
#include "circuitcheck/parallel.hpp"
#include "circuitcheck/sampler.hpp"

namespace circuitcheck {

using nlohmann::json;

const std::vector<std::string>& all_test_names() {
  static const std::vector<std::string> names = {"equivalence", "independence", "minimality", "sufficiency",
                                                 "partial-necessity"};
  return names;
}

void SuiteConfig::validate() const {
  if (zoo.empty() && (weights_path.empty() || task_path.empty())) {
    throw InvalidArgument("choose a zoo model (--zoo) or give both --weights and --task");
  }
  if (!zoo.empty() && (!weights_path.empty() || !task_path.empty())) {
    throw InvalidArgument("--zoo cannot be combined with --weights/--task");
  }
  if (zoo.empty() && (circuit == "ground-truth" || circuit == "decoy")) {
    throw InvalidArgument("--circuit " + circuit + " needs a zoo model; give a circuit file instead");
  }
  for (const std::string& t : tests) {
    if (std::find(all_test_names().begin(), all_test_names().end(), t) == all_test_names().end()) {
      throw InvalidArgument("unknown test \"" + t + "\"");
    }
  }
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidArgument("epsilon must lie in (0, 1/2)");
  if (!(quantile > 0.0 && quantile < 1.0)) throw InvalidArgument("quantile must lie in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
  if (n_reference == 0 || n_reference_minimality == 0) throw InvalidArgument("reference counts must be positive");
  if (permutations == 0) throw InvalidArgument("permutation count must be positive");
  if (k_norm != 1 && k_norm != 2) throw InvalidArgument("k-norm must be 1 or 2");
  if (ablation) parse_ablation(*ablation);
  if (reference_source != "both") parse_reference_source(reference_source);
  if (bandwidth && !(*bandwidth > 0.0)) throw InvalidArgument("bandwidth must be positive");
}

json config_to_json(const SuiteConfig& c) {
  json j = {{"zoo", c.zoo},
            {"zoo_layers", c.zoo_layers},
            {"zoo_heads", c.zoo_heads},
            {"weights", c.weights_path},
            {"task", c.task_path},
            {"circuit", c.circuit},
            {"tests", c.tests},
            {"epsilon", c.epsilon},
            {"quantile", c.quantile},
            {"alpha", c.alpha},
            {"n_reference", c.n_reference},
            {"n_reference_minimality", c.n_reference_minimality},
            {"permutations", c.permutations},
            {"k_norm", c.k_norm},
            {"reference_source", c.reference_source},
            {"seed", c.seed}};
  j["ablation"] = c.ablation ? json(*c.ablation) : json(nullptr);
  j["reference_size"] = c.reference_size ? json(*c.reference_size) : json(nullptr);
  j["bandwidth"] = c.bandwidth ? json(*c.bandwidth) : json(nullptr);
  return j;
}

SuiteConfig config_from_json(const json& doc, SuiteConfig c) {
  if (!doc.is_object()) throw InvalidArgument("config must be a JSON object");
  static const std::set<std::string> known = {
      "zoo",          "zoo_layers",  "zoo_heads", "weights", "task",  "circuit",         "tests",
      "epsilon",      "quantile",    "alpha",     "n_reference", "n_reference_minimality", "permutations",
      "k_norm",       "ablation",    "reference_source", "reference_size", "bandwidth", "seed", "workers"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw InvalidArgument("unknown config key \"" + key + "\"");
  }
  try {
    auto set = [&](const char* key, auto& field) {
      if (auto it = doc.find(key); it != doc.end() && !it->is_null()) {
        field = it->get<std::remove_reference_t<decltype(field)>>();
      }
    };
    auto set_opt = [&](const char* key, auto& field) {
      if (auto it = doc.find(key); it != doc.end()) {
        if (it->is_null()) {
          field.reset();
        } else {
          field = it->get<typename std::remove_reference_t<decltype(field)>::value_type>();
        }
      }
    };
    set("zoo", c.zoo);
    set("zoo_layers", c.zoo_layers);
    set("zoo_heads", c.zoo_heads);
    set("weights", c.weights_path);
    set("task", c.task_path);
    set("circuit", c.circuit);
    set("tests", c.tests);
    set("epsilon", c.epsilon);
    set("quantile", c.quantile);
    set("alpha", c.alpha);
    set("n_reference", c.n_reference);
    set("n_reference_minimality", c.n_reference_minimality);
    set("permutations", c.permutations);
    set("k_norm", c.k_norm);
    set("reference_source", c.reference_source);
    set("seed", c.seed);
    set("workers", c.workers);
    set_opt("ablation", c.ablation);
    set_opt("reference_size", c.reference_size);
    set_opt("bandwidth", c.bandwidth);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  return c;
}

LoadedModel load_model(const SuiteConfig& config) {
  LoadedModel m;
  if (!config.zoo.empty()) {
    ZooOptions options;
    options.layers = config.zoo_layers;
    options.heads_per_layer = config.zoo_heads;
    ZooEntry entry = make_zoo(config.zoo, options);
    m.name = entry.name;
    m.weights = entry.weights;
    m.graph = entry.graph;
    m.task = entry.task;
    m.ground_truth = entry.ground_truth;
    m.entry = std::move(entry);
    return m;
  }
  auto weights = std::make_shared<const ModelWeights>(load_weights(config.weights_path));
  m.graph = build_graph(weights->layers, weights->heads_per_layer);
  m.weights = std::move(weights);
  m.task = std::make_shared<const Task>(load_task(config.task_path));
  m.name = m.task->name;
  return m;
}

Circuit resolve_circuit(const SuiteConfig& config, const LoadedModel& model) {
  if (config.circuit == "ground-truth") {
    if (!model.ground_truth) throw InvalidArgument("this model has no built-in ground-truth circuit");
    return *model.ground_truth;
  }
  if (config.circuit == "decoy") {
    if (!model.entry) throw InvalidArgument("decoy circuits need a zoo model");
    RngStream rng(config.seed, streams::kDecoy);
    return decoy_circuit(*model.entry, rng);
  }
  return load_circuit(config.circuit, model.graph);
}

Session open_session(const SuiteConfig& config) {
  config.validate();
  LoadedModel model = load_model(config);
  Circuit candidate = resolve_circuit(config, model);
  auto engine = std::make_shared<const Engine>(model.weights, model.graph);
  const AblationScheme::Kind ablation =
      config.ablation ? parse_ablation(*config.ablation) : model.task->ablation_default;
  auto evaluator = std::make_shared<const CircuitEvaluator>(engine, model.task, ablation);
  return Session{std::move(model), std::move(engine), std::move(evaluator), std::move(candidate)};
}

namespace {

bool wants(const SuiteConfig& config, const std::string& test) {
  return std::find(config.tests.begin(), config.tests.end(), test) != config.tests.end();
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

json minimality_to_json(const MinimalityResult& m) {
  json edges = json::array();
  for (const EdgeMinimality& e : m.edges) {
    TestResult r = e.result;
    r.reference_samples.clear();  // shared; stored once below
    edges.push_back(to_json(r));
  }
  json ref_edges = json::array();
  for (const Edge& e : m.reference_edges) ref_edges.push_back(e.label());
  return {{"alpha", m.alpha},
          {"effective_alpha", m.effective_alpha},
          {"rejections", m.rejections},
          {"minimal", m.minimal},
          {"edges", std::move(edges)},
          {"reference_samples", m.reference},
          {"reference_edges", std::move(ref_edges)}};
}

}  // namespace

json run_suite(const SuiteConfig& config) { return run_suite(config, open_session(config)); }

json run_suite(const SuiteConfig& config, const Session& session) {
  config.validate();
  const CircuitEvaluator& ev = *session.evaluator;
  const Circuit& candidate = session.candidate;
  const TestContext ctx{ev, config.k_norm, config.workers};
  const ConnectivityReport connectivity = is_io_connected(candidate);

  json report;
  report["schema_version"] = kReportSchemaVersion;
  report["tool_version"] = kToolVersion;
  report["config"] = config_to_json(config);
  report["model"] = {{"name", session.model.name},
                     {"layers", session.model.graph->layer_count()},
                     {"heads_per_layer", session.model.graph->heads_per_layer()},
                     {"edges", session.model.graph->edge_count()},
                     {"dataset_size", ev.size()},
                     {"score", score_kind_name(ev.task().score)},
                     {"ablation", ablation_name(ev.ablation())}};
  json stranded = json::array();
  for (const Edge& e : connectivity.stranded) stranded.push_back(e.label());
  report["circuit"] = {{"source", config.circuit},
                       {"size", candidate.size()},
                       {"io_connected", connectivity.connected},
                       {"stranded_edges", std::move(stranded)},
                       {"definition", circuit_to_json(candidate)}};
  report["faithfulness"] = {
      {"k_norm", config.k_norm},
      {"mean_model_score", mean(ev.model_scores())},
      {"candidate", ev.faithfulness(candidate, config.k_norm)},
      {"knockout", ev.faithfulness(complement(candidate), config.k_norm)},
      {"empty", ev.faithfulness(Circuit(candidate.graph_ptr()), config.k_norm)}};

  json tests = json::object();
  if (wants(config, "equivalence")) {
    tests["equivalence"] = to_json(equivalence_circuit_test(ctx, candidate, config.epsilon, config.alpha));
  }
  if (wants(config, "independence")) {
    RngStream rng(config.seed, streams::kIndependence);
    tests["independence"] =
        to_json(independence_circuit_test(ctx, candidate, config.bandwidth, config.permutations, config.alpha, rng));
  }
  if (wants(config, "minimality")) {
    RngStream rng(config.seed, streams::kMinimality);
    tests["minimality"] = minimality_to_json(
        minimality_test(ctx, candidate, {}, config.n_reference_minimality, config.quantile, config.alpha, rng));
  }
  const ReferenceOptions ref{config.n_reference, config.reference_size, config.quantile, config.alpha};
  if (wants(config, "sufficiency")) {
    RngStream rng(config.seed, streams::kSufficiency);
    tests["sufficiency"] = to_json(sufficiency_test(ctx, candidate, ref, rng));
  }
  if (wants(config, "partial-necessity")) {
    json pn = json::object();
    if (config.reference_source != "model") {
      RngStream rng(config.seed, streams::kPartialNecessityComplement);
      pn["complement"] =
          to_json(partial_necessity_test(ctx, candidate, ReferenceSource::ComplementOfCandidate, ref, rng));
    }
    if (config.reference_source != "complement") {
      RngStream rng(config.seed, streams::kPartialNecessityModel);
      pn["model"] = to_json(partial_necessity_test(ctx, candidate, ReferenceSource::FullModel, ref, rng));
    }
    tests["partial_necessity"] = std::move(pn);
  }
  report["tests"] = std::move(tests);
  validate_report(report);
  return report;
}

void validate_report(const json& report) {
  auto fail = [](const std::string& what) { throw InvalidArgument("report: " + what); };
  if (!report.is_object()) fail("not an object");
  for (const char* key : {"schema_version", "tool_version", "config", "model", "circuit", "faithfulness", "tests"}) {
    if (!report.contains(key)) fail(std::string("missing \"") + key + "\"");
  }
  if (report["schema_version"] != kReportSchemaVersion) fail("unsupported schema_version");
  const SuiteConfig config = config_from_json(report["config"]);
  config.validate();
  const json& tests = report["tests"];
  if (!tests.is_object()) fail("\"tests\" must be an object");
  for (const auto& [name, value] : tests.items()) {
    if (name == "equivalence" || name == "independence" || name == "sufficiency") {
      test_result_from_json(value);
    } else if (name == "partial_necessity") {
      if (!value.is_object() || value.empty()) fail("partial_necessity must map sources to results");
      for (const auto& [source, r] : value.items()) {
        parse_reference_source(source);
        test_result_from_json(r);
      }
    } else if (name == "minimality") {
      for (const char* key : {"alpha", "effective_alpha", "rejections", "minimal", "edges", "reference_samples"}) {
        if (!value.contains(key)) fail(std::string("minimality missing \"") + key + "\"");
      }
      std::size_t rejections = 0;
      for (const json& e : value["edges"]) {
        if (!test_result_from_json(e).null_retained) ++rejections;
      }
      if (rejections != value["rejections"].get<std::size_t>()) fail("minimality rejection count mismatch");
      if (value["minimal"].get<bool>() != (rejections == 0)) fail("minimality verdict mismatch");
    } else {
      fail("unknown test \"" + name + "\"");
    }
  }
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::vector<SweepRow> sweep_reference_size(const SuiteConfig& config, const Session& session,
                                           const std::vector<std::size_t>& sizes, std::size_t containment_samples) {
  const CircuitEvaluator& ev = *session.evaluator;
  const PathSampler sampler(session.model.graph);
  const double z_star = ev.faithfulness(session.candidate, config.k_norm);
  std::vector<SweepRow> rows;
  for (std::size_t k : sizes) {
    RngStream rng(config.seed, streams::kSufficiency);
    const TestContext ctx{ev, config.k_norm, config.workers};
    const ReferenceOptions ref{config.n_reference, k, config.quantile, config.alpha};
    const TestResult r = sufficiency_test(ctx, session.candidate, ref, rng);

    // Reference sizes, redrawn from the same streams the test used.
    std::vector<double> edge_counts = parallel_map(config.n_reference, config.workers, [&](std::size_t i) {
      RngStream local = rng.child(i);
      return static_cast<double>(sampler.sample_min_edges(k, local).size());
    });
    std::vector<double> refs = r.reference_samples;
    std::sort(refs.begin(), refs.end());
    const std::size_t n = refs.size();
    const double median = n % 2 == 1 ? refs[n / 2] : 0.5 * (refs[n / 2 - 1] + refs[n / 2]);

    SweepRow row;
    row.size = k;
    row.effective_size = mean(edge_counts);
    row.median_reference_faithfulness = median;
    row.candidate_faithfulness = z_star;
    row.statistic = r.statistic;
    row.p_value = r.p_value;
    if (containment_samples > 0) {
      RngStream crng(config.seed, streams::kContainment);
      row.containment_frequency =
          containment_frequency(sampler, session.candidate, k, containment_samples, crng);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "size,effective_size,median_reference_faithfulness,candidate_faithfulness,statistic,p_value,"
         "containment_frequency\n";
  for (const SweepRow& r : rows) {
    out << r.size << "," << format_double(r.effective_size) << "," << format_double(r.median_reference_faithfulness)
        << "," << format_double(r.candidate_faithfulness) << "," << format_double(r.statistic) << ","
        << format_double(r.p_value) << "," << format_double(r.containment_frequency) << "\n";
  }
  return out.str();
}

std::vector<KnockdownRow> knockdown_curve(const SuiteConfig& config, const Session& session) {
  const CircuitEvaluator& ev = *session.evaluator;
  const Circuit& candidate = session.candidate;
  const std::vector<Edge> edges = candidate.edges();
  const std::vector<double> scores = parallel_map(edges.size(), config.workers, [&](std::size_t i) {
    return edge_delta(ev, candidate, edges[i]);
  });
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  const double full = ev.faithfulness(candidate, config.k_norm);
  const double empty = ev.faithfulness(Circuit(candidate.graph_ptr()), config.k_norm);
  std::vector<KnockdownRow> rows;
  rows.push_back({0, "", 0.0, full, full, empty});
  Circuit current = candidate;
  for (std::size_t step = 0; step < order.size(); ++step) {
    const Edge& e = edges[order[step]];
    current = remove_edge(current, e);
    rows.push_back({step + 1, e.label(), scores[order[step]], ev.faithfulness(current, config.k_norm), full, empty});
  }
  return rows;
}

std::string knockdown_csv(const std::vector<KnockdownRow>& rows) {
  std::ostringstream out;
  out << "edges_removed,removed_edge,minimality_score,faithfulness,candidate_faithfulness,empty_faithfulness\n";
  for (const KnockdownRow& r : rows) {
    out << r.edges_removed << "," << r.removed_edge << "," << format_double(r.minimality_score) << ","
        << format_double(r.faithfulness) << "," << format_double(r.candidate_faithfulness) << ","
        << format_double(r.empty_faithfulness) << "\n";
  }
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
  if (!out) throw Error("failed writing " + path);
}

}  // namespace circuitcheck
