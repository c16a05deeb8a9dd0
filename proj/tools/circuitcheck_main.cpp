// circuitcheck: run circuit hypothesis tests on zoo or external models.

#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "circuitcheck/circuit_io.hpp"
#include "circuitcheck/error.hpp"
#include "circuitcheck/harness.hpp"
#include "circuitcheck/located_json.hpp"

namespace fs = std::filesystem;
using namespace circuitcheck;

namespace {

struct SuiteFlags {
  std::string config_file;
  std::string zoo;
  int zoo_layers = 0;
  int zoo_heads = 0;
  std::string weights;
  std::string task;
  std::string circuit;
  std::vector<std::string> tests;
  double epsilon = 0;
  double quantile = 0;
  double alpha = 0;
  std::size_t n_reference = 0;
  std::size_t n_reference_minimality = 0;
  std::size_t permutations = 0;
  int k_norm = 0;
  std::string ablation;
  std::string reference_source;
  std::size_t reference_size = 0;
  double bandwidth = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string out = ".";
};

void add_suite_flags(CLI::App* cmd, SuiteFlags& f) {
  cmd->add_option("--config", f.config_file, "JSON config file; flags override its values");
  cmd->add_option("--zoo", f.zoo, "Built-in model: reverse, proportion or induction");
  cmd->add_option("--zoo-layers", f.zoo_layers, "Override the zoo model's layer count");
  cmd->add_option("--zoo-heads", f.zoo_heads, "Override the zoo model's heads per layer");
  cmd->add_option("--weights", f.weights, "Weights JSON for an external model");
  cmd->add_option("--task", f.task, "Task JSON for an external model");
  cmd->add_option("--circuit", f.circuit, "ground-truth, decoy, or a circuit JSON file");
  cmd->add_option("--tests", f.tests, "Tests to run (all, or any of equivalence independence minimality "
                                      "sufficiency partial-necessity)")
      ->delimiter(',');
  cmd->add_option("--epsilon", f.epsilon, "Equivalence margin (default 0.1)");
  cmd->add_option("--quantile", f.quantile, "Tail-test quantile q* (default 0.9)");
  cmd->add_option("--alpha", f.alpha, "Significance level (default 0.05)");
  cmd->add_option("--n-reference", f.n_reference, "Reference circuits per tail test (default 100)");
  cmd->add_option("--n-reference-minimality", f.n_reference_minimality, "Inflation samples (default 1000)");
  cmd->add_option("--permutations", f.permutations, "Independence permutations (default 1000)");
  cmd->add_option("--k-norm", f.k_norm, "Faithfulness exponent, 1 or 2 (default 2)");
  cmd->add_option("--ablation", f.ablation, "zero or corrupted (default: task default)");
  cmd->add_option("--reference-source", f.reference_source, "Partial necessity references: complement, model, both");
  cmd->add_option("--min-edges,--reference-size", f.reference_size, "Reference circuit size (default |candidate|)");
  cmd->add_option("--bandwidth", f.bandwidth, "HSIC RBF bandwidth (default median heuristic)");
  cmd->add_option("--seed", f.seed, "Master seed (default 0)");
  cmd->add_option("--workers", f.workers, "Worker threads; results do not depend on it (default 1)");
  cmd->add_option("--out", f.out, "Output directory (default .)");
}

SuiteConfig build_config(CLI::App* cmd, const SuiteFlags& f) {
  SuiteConfig c;
  if (!f.config_file.empty()) {
    const LocatedJson doc = parse_located_json(read_text_file(f.config_file));
    c = config_from_json(doc.value);
  }
  auto given = [&](const char* name) { return cmd->count(name) > 0; };
  if (given("--zoo")) c.zoo = f.zoo;
  if (given("--zoo-layers")) c.zoo_layers = f.zoo_layers;
  if (given("--zoo-heads")) c.zoo_heads = f.zoo_heads;
  if (given("--weights")) c.weights_path = f.weights;
  if (given("--task")) c.task_path = f.task;
  if (given("--circuit")) c.circuit = f.circuit;
  if (given("--tests")) {
    if (f.tests.size() == 1 && f.tests[0] == "all") {
      c.tests = all_test_names();
    } else {
      // Keep the fixed execution order regardless of the order given.
      c.tests.clear();
      for (const std::string& t : all_test_names()) {
        if (std::find(f.tests.begin(), f.tests.end(), t) != f.tests.end()) c.tests.push_back(t);
      }
      for (const std::string& t : f.tests) {
        if (std::find(all_test_names().begin(), all_test_names().end(), t) == all_test_names().end()) {
          throw InvalidArgument("unknown test \"" + t + "\"");
        }
      }
    }
  }
  if (given("--epsilon")) c.epsilon = f.epsilon;
  if (given("--quantile")) c.quantile = f.quantile;
  if (given("--alpha")) c.alpha = f.alpha;
  if (given("--n-reference")) c.n_reference = f.n_reference;
  if (given("--n-reference-minimality")) c.n_reference_minimality = f.n_reference_minimality;
  if (given("--permutations")) c.permutations = f.permutations;
  if (given("--k-norm")) c.k_norm = f.k_norm;
  if (given("--ablation")) c.ablation = f.ablation;
  if (given("--reference-source")) c.reference_source = f.reference_source;
  if (given("--min-edges")) c.reference_size = f.reference_size;
  if (given("--bandwidth")) c.bandwidth = f.bandwidth;
  if (given("--seed")) c.seed = f.seed;
  if (given("--workers")) c.workers = f.workers;
  c.validate();
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir + ": " + ec.message());
}

void print_summary(const nlohmann::json& report) {
  const auto& tests = report["tests"];
  auto line = [](const std::string& name, const nlohmann::json& r) {
    std::cout << "  " << name << ": p=" << r["p_value"].get<double>()
              << (r["null_retained"].get<bool>() ? " null retained" : " null rejected");
    if (!r["degenerate_flag"].is_null()) std::cout << " (" << r["degenerate_flag"].get<std::string>() << ")";
    std::cout << "\n";
  };
  std::cout << report["model"]["name"].get<std::string>() << ", circuit of " << report["circuit"]["size"]
            << " edges, faithfulness " << report["faithfulness"]["candidate"].get<double>() << "\n";
  for (const char* name : {"equivalence", "independence", "sufficiency"}) {
    if (tests.contains(name)) line(name, tests[name]);
  }
  if (tests.contains("partial_necessity")) {
    for (const auto& [source, r] : tests["partial_necessity"].items()) line("partial necessity (" + source + ")", r);
  }
  if (tests.contains("minimality")) {
    const auto& m = tests["minimality"];
    std::cout << "  minimality: " << m["rejections"] << " of " << m["edges"].size() << " edge nulls rejected -> "
              << (m["minimal"].get<bool>() ? "minimal" : "not minimal") << "\n";
  }
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> sizes;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      sizes.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw InvalidArgument("bad size \"" + item + "\" in --sizes");
    }
  }
  if (sizes.empty()) throw InvalidArgument("--sizes needs at least one value");
  return sizes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypothesis tests for transformer circuits"};
  app.require_subcommand(1);

  SuiteFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "Run hypothesis tests and write report.json");
  add_suite_flags(run, run_flags);

  SuiteFlags sweep_flags;
  std::string sizes_text;
  std::size_t containment_samples = 10000;
  CLI::App* sweep = app.add_subcommand("sweep", "Sufficiency and containment across reference sizes (sweep.csv)");
  add_suite_flags(sweep, sweep_flags);
  sweep->add_option("--sizes", sizes_text, "Comma-separated reference sizes")->required();
  sweep->add_option("--containment-samples", containment_samples, "Samples per size for containment (default 10000)");

  SuiteFlags knock_flags;
  CLI::App* knock = app.add_subcommand("knockdown", "Faithfulness while pruning the least minimal edges (knockdown.csv)");
  add_suite_flags(knock, knock_flags);

  CLI::App* zoo = app.add_subcommand("zoo", "Zoo model utilities");
  zoo->require_subcommand(1);
  std::string export_name;
  std::string export_out;
  int export_layers = 0;
  int export_heads = 0;
  CLI::App* zoo_export = zoo->add_subcommand("export", "Write weights, circuit, task and dataset files");
  zoo_export->add_option("--name", export_name, "reverse, proportion or induction")->required();
  zoo_export->add_option("--out", export_out, "Output directory")->required();
  zoo_export->add_option("--layers", export_layers, "Override the layer count");
  zoo_export->add_option("--heads", export_heads, "Override heads per layer");

  CLI::App* graph_cmd = app.add_subcommand("graph", "Computational graph utilities");
  graph_cmd->require_subcommand(1);
  int g_layers = 0;
  int g_heads = 0;
  std::string g_zoo;
  bool g_edges = false;
  CLI::App* describe = graph_cmd->add_subcommand("describe", "Print node and edge counts");
  describe->add_option("--layers", g_layers, "Layer count");
  describe->add_option("--heads", g_heads, "Heads per layer");
  describe->add_option("--zoo", g_zoo, "Describe a zoo model's graph and ground truth");
  describe->add_flag("--edges", g_edges, "List every edge");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const SuiteConfig config = build_config(run, run_flags);
      const auto start = std::chrono::steady_clock::now();
      const nlohmann::json report = run_suite(config);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      ensure_dir(run_flags.out);
      write_text((fs::path(run_flags.out) / "report.json").string(), report.dump(2) + "\n");
      write_text((fs::path(run_flags.out) / "timing.json").string(),
                 nlohmann::json{{"wall_clock_seconds", seconds}, {"workers", config.workers}}.dump(2) + "\n");
      print_summary(report);
      std::cerr << "wrote " << (fs::path(run_flags.out) / "report.json").string() << " in " << seconds << " s\n";
    } else if (sweep->parsed()) {
      const SuiteConfig config = build_config(sweep, sweep_flags);
      const Session session = open_session(config);
      const auto rows = sweep_reference_size(config, session, parse_sizes(sizes_text), containment_samples);
      ensure_dir(sweep_flags.out);
      const std::string csv = sweep_csv(rows);
      write_text((fs::path(sweep_flags.out) / "sweep.csv").string(), csv);
      std::cout << csv;
    } else if (knock->parsed()) {
      const SuiteConfig config = build_config(knock, knock_flags);
      const Session session = open_session(config);
      const std::string csv = knockdown_csv(knockdown_curve(config, session));
      ensure_dir(knock_flags.out);
      write_text((fs::path(knock_flags.out) / "knockdown.csv").string(), csv);
      std::cout << csv;
    } else if (zoo_export->parsed()) {
      ZooOptions options;
      options.layers = export_layers;
      options.heads_per_layer = export_heads;
      const ZooEntry entry = make_zoo(export_name, options);
      ensure_dir(export_out);
      const fs::path dir(export_out);
      save_weights(*entry.weights, (dir / "weights.json").string());
      write_text((dir / "circuit.json").string(), circuit_to_string(entry.ground_truth));
      write_text((dir / "dataset.jsonl").string(), dataset_to_jsonl(*entry.task));
      write_text((dir / "task.json").string(), task_descriptor(*entry.task, "dataset.jsonl").dump(2) + "\n");
      std::cout << "exported " << entry.name << " (" << entry.graph->layer_count() << "x"
                << entry.graph->heads_per_layer() << ", " << entry.graph->edge_count() << " edges) to "
                << export_out << "\n";
    } else if (describe->parsed()) {
      GraphPtr graph;
      std::optional<Circuit> gt;
      if (!g_zoo.empty()) {
        const ZooEntry entry = make_zoo(g_zoo);
        graph = entry.graph;
        gt = entry.ground_truth;
      } else {
        if (g_layers < 1 || g_heads < 1) throw InvalidArgument("give --layers and --heads (both >= 1) or --zoo");
        graph = build_graph(g_layers, g_heads);
      }
      std::cout << "layers " << graph->layer_count() << ", heads per layer " << graph->heads_per_layer() << ", nodes "
                << graph->node_count() << ", edges " << graph->edge_count() << "\n";
      if (gt) {
        std::cout << "ground truth (" << gt->size() << " edges):\n";
        for (const Edge& e : gt->edges()) std::cout << "  " << e.label() << "\n";
      }
      if (g_edges) {
        for (std::size_t i = 0; i < graph->edge_count(); ++i) std::cout << i << " " << graph->edge(i).label() << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
