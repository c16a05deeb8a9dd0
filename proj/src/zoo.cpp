#include "circuitcheck/zoo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "circuitcheck/error.hpp"
#include "circuitcheck/sampler.hpp"

namespace circuitcheck {

namespace {

// Query/key gap of 30 at scale 30 puts off-target attention logits 900 below
// the target, so exp() underflows to exactly zero.
constexpr double kSharp = 30.0;
constexpr int kJunk = 4;
constexpr int kDistractorDHead = 2;

struct Layout {
  int next = 0;
  int block(int width) {
    const int start = next;
    next += width;
    return start;
  }
};

// Fills every non-task head with random weights that read only `read_rows`
// and write only the junk block.
void add_distractors(ModelWeights& w, int junk_start, const std::vector<int>& read_rows,
                     const std::vector<std::pair<int, int>>& task_heads, std::uint64_t seed) {
  RngStream rng(seed, 0xD15);
  const int d = w.d_model();
  for (int l = 0; l < w.layers; ++l) {
    for (int i = 0; i < w.heads_per_layer; ++i) {
      if (std::find(task_heads.begin(), task_heads.end(), std::make_pair(l, i)) != task_heads.end()) continue;
      HeadWeights& h = w.head(l, i);
      h.w_q = Matrix::Zero(d, kDistractorDHead);
      h.w_k = Matrix::Zero(d, kDistractorDHead);
      h.w_v = Matrix::Zero(d, kDistractorDHead);
      h.w_o = Matrix::Zero(kDistractorDHead, d);
      for (int r : read_rows) {
        for (int c = 0; c < kDistractorDHead; ++c) {
          h.w_q(r, c) = rng.normal();
          h.w_k(r, c) = rng.normal();
          h.w_v(r, c) = rng.normal();
        }
      }
      for (int r = 0; r < kDistractorDHead; ++r) {
        for (int c = 0; c < kJunk; ++c) h.w_o(r, junk_start + c) = rng.normal();
      }
      h.attention_scale = 1.0 / std::sqrt(static_cast<double>(kDistractorDHead));
    }
  }
}

std::vector<int> range(int start, int width) {
  std::vector<int> out(static_cast<std::size_t>(width));
  std::iota(out.begin(), out.end(), start);
  return out;
}

void resolve(const ZooOptions& options, int default_layers, int default_heads, int min_layers, int& layers,
             int& heads) {
  layers = options.layers > 0 ? options.layers : default_layers;
  heads = options.heads_per_layer > 0 ? options.heads_per_layer : default_heads;
  if (layers < min_layers) {
    throw InvalidArgument("this zoo model needs at least " + std::to_string(min_layers) + " layers");
  }
}

Tokens resample(RngStream& rng, std::size_t length, int low, int high) {
  Tokens out{kBos};
  for (std::size_t i = 1; i < length; ++i) out.push_back(low + static_cast<int>(rng.uniform_index(high - low + 1)));
  return out;
}

ZooEntry finish(std::string name, ModelWeights weights, std::vector<Edge> gt_edges, Task task) {
  GraphPtr graph = build_graph(weights.layers, weights.heads_per_layer);
  weights.validate();
  task.validate();
  Circuit ground_truth = Circuit::from_edges(graph, gt_edges);
  return ZooEntry{std::move(name), std::make_shared<const ModelWeights>(std::move(weights)), graph,
                  std::move(ground_truth), std::make_shared<const Task>(std::move(task))};
}

// Every example must be solved by the full model; `floor` is the lowest acceptable score.
void check_behavior(const ZooEntry& entry, double floor) {
  const Engine engine(entry.weights, entry.graph);
  const Circuit full = Circuit::full(entry.graph);
  for (std::size_t i = 0; i < entry.task->dataset.size(); ++i) {
    const TaskExample& ex = entry.task->dataset[i];
    const double s = score(*entry.task, engine.run_circuit(full, ex.input, AblationScheme::zero()), ex.label);
    if (!(s >= floor)) {
      throw Error("zoo model " + entry.name + " fails example " + std::to_string(i) + " (score " +
                  std::to_string(s) + ")");
    }
  }
}

}  // namespace

// Residual blocks: tok[4] pos[4] read[4] junk[4].
ZooEntry make_reverse(const ZooOptions& options) {
  int layers = 0;
  int heads = 0;
  resolve(options, 2, 64, 1, layers, heads);
  constexpr int kVocab = 4;  // BOS, 1, 2, 3
  constexpr int kLen = 4;
  Layout lay;
  const int tok = lay.block(kVocab);
  const int pos = lay.block(kLen);
  const int read = lay.block(kVocab);
  const int junk = lay.block(kJunk);
  const int d = lay.next;

  ModelWeights w = make_zero_weights(layers, heads, kVocab, d, kLen, kDistractorDHead, kVocab, false);
  for (int t = 0; t < kVocab; ++t) w.token_embed(t, tok + t) = 1.0;
  for (int i = 0; i < kLen; ++i) w.pos_embed(i, pos + i) = 1.0;

  HeadWeights& h = w.head(0, 0);
  const int dh = std::max(kVocab, kLen);
  h.w_q = Matrix::Zero(d, dh);
  h.w_k = Matrix::Zero(d, dh);
  h.w_v = Matrix::Zero(d, dh);
  h.w_o = Matrix::Zero(dh, d);
  for (int i = 0; i < kLen; ++i) {
    const int target = i == 0 ? 0 : kLen - i;
    h.w_q(pos + i, target) = 1.0;
    h.w_k(pos + i, i) = kSharp;
  }
  for (int t = 0; t < kVocab; ++t) {
    h.w_v(tok + t, t) = 1.0;
    h.w_o(t, read + t) = 1.0;
    w.unembed(read + t, t) = 1.0;
  }
  h.attention_scale = kSharp;
  std::vector<int> distractor_reads = range(tok, kVocab);
  for (int r : range(pos, kLen)) distractor_reads.push_back(r);
  add_distractors(w, junk, distractor_reads, {{0, 0}}, options.seed);

  Task task;
  task.name = "reverse";
  task.score = NegL2ToTarget{1};
  task.ablation_default = AblationScheme::Kind::Zero;
  RngStream rng(options.seed, 0x4E5);
  Tokens body{1, 2, 3};
  do {
    TaskExample ex;
    ex.input = {kBos, body[0], body[1], body[2]};
    Matrix target = Matrix::Zero(kLen - 1, kVocab);
    for (int i = 1; i < kLen; ++i) target(i - 1, ex.input[kLen - i]) = 1.0;
    ex.label = target;
    ex.corrupted = resample(rng, kLen, 1, 3);
    task.dataset.push_back(std::move(ex));
  } while (std::next_permutation(body.begin(), body.end()));

  const NodeId e = NodeId::embed();
  const NodeId head = NodeId::head(0, 0);
  std::vector<Edge> gt = {{e, head, Channel::Query},
                          {e, head, Channel::Key},
                          {e, head, Channel::Value},
                          {head, NodeId::logits(), Channel::LogitsIn}};
  ZooEntry entry = finish("reverse", std::move(w), std::move(gt), std::move(task));
  check_behavior(entry, -1e-12);
  return entry;
}

// Residual blocks: tok[4] pos[5] one[1] notbos[1] read[1] junk[4].
ZooEntry make_proportion(const ZooOptions& options) {
  int layers = 0;
  int heads = 0;
  resolve(options, 2, 64, 1, layers, heads);
  constexpr int kVocab = 4;  // BOS, x, a, c
  constexpr int kX = 1;
  constexpr int kLen = 5;
  Layout lay;
  const int tok = lay.block(kVocab);
  const int pos = lay.block(kLen);
  const int one = lay.block(1);
  const int notbos = lay.block(1);
  const int read = lay.block(1);
  const int junk = lay.block(kJunk);
  const int d = lay.next;

  ModelWeights w = make_zero_weights(layers, heads, kVocab, d, kLen, kDistractorDHead, 1, true);
  for (int t = 0; t < kVocab; ++t) {
    w.token_embed(t, tok + t) = 1.0;
    w.token_embed(t, one) = 1.0;
    if (t != kBos) w.token_embed(t, notbos) = 1.0;
  }
  for (int i = 0; i < kLen; ++i) w.pos_embed(i, pos + i) = 1.0;

  // Every query matches every non-BOS key equally, so attention is uniform
  // over the non-BOS prefix and the value is the is-x indicator.
  HeadWeights& h = w.head(0, 0);
  h.w_q = Matrix::Zero(d, 2);
  h.w_k = Matrix::Zero(d, 2);
  h.w_v = Matrix::Zero(d, 2);
  h.w_o = Matrix::Zero(2, d);
  h.w_q(one, 0) = 1.0;
  h.w_k(notbos, 0) = kSharp;
  h.w_v(tok + kX, 1) = 1.0;
  h.w_o(1, read) = 1.0;
  h.attention_scale = kSharp;
  w.unembed(read, 0) = 1.0;
  std::vector<int> distractor_reads = range(tok, kVocab);
  for (int r : range(pos, kLen)) distractor_reads.push_back(r);
  add_distractors(w, junk, distractor_reads, {{0, 0}}, options.seed);

  Task task;
  task.name = "proportion";
  task.score = NegL2ToTarget{1};
  task.ablation_default = AblationScheme::Kind::Zero;
  RngStream rng(options.seed, 0x960);
  for (int n = 0; n < 50; ++n) {
    TaskExample ex;
    ex.input = resample(rng, kLen, 1, 3);
    Matrix target(kLen - 1, 1);
    int count = 0;
    for (int i = 1; i < kLen; ++i) {
      if (ex.input[i] == kX) ++count;
      target(i - 1, 0) = static_cast<double>(count) / static_cast<double>(i);
    }
    ex.label = target;
    ex.corrupted = resample(rng, kLen, 1, 3);
    task.dataset.push_back(std::move(ex));
  }

  const NodeId e = NodeId::embed();
  const NodeId head = NodeId::head(0, 0);
  std::vector<Edge> gt = {{e, head, Channel::Query},
                          {e, head, Channel::Key},
                          {e, head, Channel::Value},
                          {head, NodeId::logits(), Channel::LogitsIn}};
  ZooEntry entry = finish("proportion", std::move(w), std::move(gt), std::move(task));
  check_behavior(entry, -1e-12);
  return entry;
}

// Residual blocks: tok[V] pos[16] prev[V] read[V] junk[4].
ZooEntry make_induction(const ZooOptions& options) {
  int layers = 0;
  int heads = 0;
  resolve(options, 2, 512, 2, layers, heads);
  constexpr int kVocab = 12;
  constexpr int kLen = 16;
  Layout lay;
  const int tok = lay.block(kVocab);
  const int pos = lay.block(kLen);
  const int prev = lay.block(kVocab);
  const int read = lay.block(kVocab);
  const int junk = lay.block(kJunk);
  const int d = lay.next;

  ModelWeights w = make_zero_weights(layers, heads, kVocab, d, kLen, kDistractorDHead, kVocab, true);
  for (int t = 0; t < kVocab; ++t) w.token_embed(t, tok + t) = 1.0;
  for (int i = 0; i < kLen; ++i) w.pos_embed(i, pos + i) = 1.0;

  // Layer 0: position i attends to i - 1 and writes that token into `prev`.
  HeadWeights& h0 = w.head(0, 0);
  const int dh0 = std::max(kVocab, kLen);
  h0.w_q = Matrix::Zero(d, dh0);
  h0.w_k = Matrix::Zero(d, dh0);
  h0.w_v = Matrix::Zero(d, dh0);
  h0.w_o = Matrix::Zero(dh0, d);
  for (int i = 0; i < kLen; ++i) {
    h0.w_q(pos + i, i == 0 ? 0 : i - 1) = 1.0;
    h0.w_k(pos + i, i) = kSharp;
  }
  for (int t = 0; t < kVocab; ++t) {
    h0.w_v(tok + t, t) = 1.0;
    h0.w_o(t, prev + t) = 1.0;
  }
  h0.attention_scale = kSharp;

  // Layer 1: attend to the position whose previous token is the current token,
  // copy that position's token to the logits.
  HeadWeights& h1 = w.head(1, 0);
  h1.w_q = Matrix::Zero(d, kVocab);
  h1.w_k = Matrix::Zero(d, kVocab);
  h1.w_v = Matrix::Zero(d, kVocab);
  h1.w_o = Matrix::Zero(kVocab, d);
  for (int t = 0; t < kVocab; ++t) {
    h1.w_q(tok + t, t) = 1.0;
    h1.w_k(prev + t, t) = kSharp;
    h1.w_v(tok + t, t) = 1.0;
    h1.w_o(t, read + t) = 1.0;
    w.unembed(read + t, t) = kSharp;
  }
  h1.attention_scale = kSharp;
  std::vector<int> distractor_reads = range(tok, kVocab);
  for (int r : range(pos, kLen)) distractor_reads.push_back(r);
  add_distractors(w, junk, distractor_reads, {{0, 0}, {1, 0}}, options.seed);

  Task task;
  task.name = "induction";
  task.score = LogProbCorrect{-1};
  task.ablation_default = AblationScheme::Kind::Zero;
  RngStream rng(options.seed, 0x1D0);
  auto draw_token = [&](std::initializer_list<int> avoid) {
    for (;;) {
      const int t = 1 + static_cast<int>(rng.uniform_index(kVocab - 1));
      if (std::find(avoid.begin(), avoid.end(), t) == avoid.end()) return t;
    }
  };
  for (int n = 0; n < 128; ++n) {
    const int a = draw_token({});
    const int b = draw_token({a});
    const int p = 1 + static_cast<int>(rng.uniform_index(kLen - 3));  // 1..13
    TaskExample ex;
    ex.input.assign(kLen, kBos);
    for (int i = 1; i < kLen; ++i) ex.input[i] = draw_token({a, b});
    ex.input[p] = a;
    ex.input[p + 1] = b;
    ex.input[kLen - 1] = a;
    ex.label = b;
    ex.corrupted = ex.input;
    ex.corrupted[kLen - 1] = draw_token({a});
    task.dataset.push_back(std::move(ex));
  }

  const NodeId e = NodeId::embed();
  const NodeId prev_head = NodeId::head(0, 0);
  const NodeId ind_head = NodeId::head(1, 0);
  std::vector<Edge> gt = {{e, prev_head, Channel::Query},   {e, prev_head, Channel::Key},
                          {e, prev_head, Channel::Value},   {prev_head, ind_head, Channel::Key},
                          {e, ind_head, Channel::Query},    {e, ind_head, Channel::Value},
                          {ind_head, NodeId::logits(), Channel::LogitsIn}};
  ZooEntry entry = finish("induction", std::move(w), std::move(gt), std::move(task));
  check_behavior(entry, std::log(0.99));
  return entry;
}

std::vector<std::string> zoo_names() { return {"reverse", "proportion", "induction"}; }

ZooEntry make_zoo(const std::string& name, const ZooOptions& options) {
  if (name == "reverse") return make_reverse(options);
  if (name == "proportion") return make_proportion(options);
  if (name == "induction") return make_induction(options);
  throw InvalidArgument("unknown zoo model \"" + name + "\" (expected reverse, proportion or induction)");
}

Circuit decoy_circuit(const ZooEntry& entry, RngStream& rng) {
  const std::size_t k = entry.ground_truth.size();
  const PathSampler sampler(entry.graph);
  if (k == 0 || k >= sampler.walkable().count()) {
    throw SamplingError("graph too small for a decoy of " + std::to_string(k) + " edges");
  }
  constexpr int kAttempts = 100'000;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    Circuit c = sampler.sample_min_edges(k, rng);
    if (c.size() == k && !(c == entry.ground_truth)) return c;
  }
  throw SamplingError("no decoy of exactly " + std::to_string(k) + " edges found");
}

}  // namespace circuitcheck
