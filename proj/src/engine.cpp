#include "circuitcheck/engine.hpp"

#include <algorithm>
#include <cmath>

#include "circuitcheck/error.hpp"

namespace circuitcheck {

AblationScheme AblationScheme::corrupted(std::shared_ptr<const ActivationCache> cache) {
  if (!cache) throw InvalidArgument("corrupted-cache ablation needs a cache");
  return AblationScheme(Kind::CorruptedCache, std::move(cache));
}

namespace {

std::vector<Eigen::Index> nonzero_rows(const Matrix& m) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if ((m.row(r).array() != 0.0).any()) out.push_back(r);
  }
  return out;
}

std::vector<Eigen::Index> nonzero_cols(const Matrix& m) {
  std::vector<Eigen::Index> out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if ((m.col(c).array() != 0.0).any()) out.push_back(c);
  }
  return out;
}

Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

Matrix select_cols(const Matrix& m, const std::vector<Eigen::Index>& cols) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(cols[i]);
  return out;
}

bool intersects(const std::vector<Eigen::Index>& a, const std::vector<Eigen::Index>& b) {
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return true;
    if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

// Scaled dot-product attention; the softmax normalisation is applied after
// the weighted sum so one-hot attention reproduces values exactly.
Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, double scale, bool causal) {
  const Eigen::Index n = q.rows();
  const Matrix scores = (q * k.transpose()) * scale;
  Matrix out = Matrix::Zero(n, v.cols());
  std::vector<double> e(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index last = causal ? i : n - 1;
    double row_max = scores(i, 0);
    for (Eigen::Index j = 1; j <= last; ++j) row_max = std::max(row_max, scores(i, j));
    double denom = 0.0;
    for (Eigen::Index j = 0; j <= last; ++j) {
      e[j] = std::exp(scores(i, j) - row_max);
      denom += e[j];
    }
    for (Eigen::Index j = 0; j <= last; ++j) {
      if (e[j] != 0.0) out.row(i) += e[j] * v.row(j);
    }
    out.row(i) /= denom;
  }
  return out;
}

}  // namespace

Engine::Engine(std::shared_ptr<const ModelWeights> weights, GraphPtr graph)
    : weights_(std::move(weights)), graph_(std::move(graph)) {
  if (!weights_ || !graph_) throw InvalidArgument("engine needs weights and a graph");
  weights_->validate();
  if (weights_->layers != graph_->layer_count() || weights_->heads_per_layer != graph_->heads_per_layer()) {
    throw InvalidArgument("weights describe a " + std::to_string(weights_->layers) + "x" +
                          std::to_string(weights_->heads_per_layer) + " model but the graph is " +
                          std::to_string(graph_->layer_count()) + "x" + std::to_string(graph_->heads_per_layer()));
  }

  const std::size_t n = graph_->node_count();
  plans_.assign(n, {});
  std::vector<std::vector<Eigen::Index>> writes(n);

  Matrix embed_both(weights_->token_embed.rows() + weights_->pos_embed.rows(), weights_->d_model());
  embed_both << weights_->token_embed, weights_->pos_embed;
  writes[graph_->embed_index()] = nonzero_cols(embed_both);
  embed_cols_ = writes[graph_->embed_index()];

  for (std::size_t v = 1; v + 1 < n; ++v) {
    const NodeId node = graph_->nodes()[v];
    const HeadWeights& hw = weights_->head(node.layer, node.index);
    NodePlan& plan = plans_[v];
    const Matrix* mats[3] = {&hw.w_q, &hw.w_k, &hw.w_v};
    for (int c = 0; c < 3; ++c) {
      plan.channels[c].rows = nonzero_rows(*mats[c]);
      plan.channels[c].weight = select_rows(*mats[c], plan.channels[c].rows);
    }
    plan.write_cols = nonzero_cols(hw.w_o);
    plan.w_o = select_cols(hw.w_o, plan.write_cols);
    plan.scale = hw.attention_scale;
    writes[v] = plan.write_cols;
  }
  NodePlan& logits = plans_[graph_->logits_index()];
  logits.channels[0].rows = nonzero_rows(weights_->unembed);
  logits.channels[0].weight = select_rows(weights_->unembed, logits.channels[0].rows);

  effective_ = EdgeSet(graph_->edge_count());
  for (std::size_t e = 0; e < graph_->edge_count(); ++e) {
    const Edge& edge = graph_->edge(e);
    const std::size_t s = graph_->node_index(edge.sender);
    const std::size_t r = graph_->node_index(edge.receiver);
    const int c = edge.channel == Channel::LogitsIn ? 0 : static_cast<int>(edge.channel);
    ChannelPlan& ch = plans_[r].channels[c];
    if (intersects(writes[s], ch.rows)) {
      effective_.insert(e);
      ch.senders.push_back(static_cast<std::uint32_t>(s));
      ch.edges.push_back(static_cast<std::uint32_t>(e));
    }
  }
}

void Engine::check_tokens(const Tokens& tokens) const {
  if (tokens.empty()) throw InvalidArgument("input sequence is empty");
  if (static_cast<int>(tokens.size()) > weights_->max_len()) {
    throw InvalidArgument("input length " + std::to_string(tokens.size()) + " exceeds max_len " +
                          std::to_string(weights_->max_len()));
  }
  for (int t : tokens) {
    if (t < 0 || t >= weights_->vocab()) {
      throw InvalidArgument("token " + std::to_string(t) + " is outside the vocabulary of size " +
                            std::to_string(weights_->vocab()));
    }
  }
}

std::vector<char> Engine::needed_nodes(const EdgeSet* present) const {
  const std::size_t n = graph_->node_count();
  std::vector<char> needed(n, 0);
  needed[graph_->logits_index()] = 1;
  for (std::size_t v = n; v-- > 1;) {
    if (!needed[v]) continue;
    for (const ChannelPlan& ch : plans_[v].channels) {
      for (std::size_t i = 0; i < ch.edges.size(); ++i) {
        if (present == nullptr || present->test(ch.edges[i])) needed[ch.senders[i]] = 1;
      }
    }
  }
  return needed;
}

Matrix Engine::gather(const ChannelPlan& plan, const EdgeSet* present, const AblationScheme& ablation,
                      const std::vector<Matrix>& acts, Eigen::Index seq_len) const {
  Matrix x = Matrix::Zero(seq_len, static_cast<Eigen::Index>(plan.rows.size()));
  const ActivationCache* cache = ablation.kind() == AblationScheme::Kind::CorruptedCache ? ablation.cache() : nullptr;
  for (std::size_t i = 0; i < plan.senders.size(); ++i) {
    const Matrix* source = nullptr;
    if (present == nullptr || present->test(plan.edges[i])) {
      source = &acts[plan.senders[i]];
    } else if (cache != nullptr) {
      source = &cache->outputs[plan.senders[i]];
    } else {
      continue;  // zero ablation: the edge contributes nothing
    }
    for (std::size_t r = 0; r < plan.rows.size(); ++r) {
      x.col(static_cast<Eigen::Index>(r)) += source->col(plan.rows[r]);
    }
  }
  return x;
}

Matrix Engine::evaluate(const Tokens& tokens, const EdgeSet* present, const AblationScheme& ablation, bool all_nodes,
                        std::vector<Matrix>& acts) const {
  check_tokens(tokens);
  const auto seq_len = static_cast<Eigen::Index>(tokens.size());
  const std::size_t n = graph_->node_count();
  if (ablation.kind() == AblationScheme::Kind::CorruptedCache) {
    const ActivationCache* cache = ablation.cache();
    if (cache->outputs.size() != n - 1) throw InvalidArgument("corrupted cache does not match the graph");
    for (const Matrix& m : cache->outputs) {
      if (m.rows() != seq_len || m.cols() != weights_->d_model()) {
        throw InvalidArgument("corrupted cache has shape " + std::to_string(m.rows()) + "x" +
                              std::to_string(m.cols()) + " but the input has length " + std::to_string(seq_len) +
                              " (corrupted inputs must be length-matched)");
      }
    }
  }

  const std::vector<char> needed = all_nodes ? std::vector<char>(n, 1) : needed_nodes(present);
  acts.assign(n - 1, Matrix());
  const Eigen::Index d = weights_->d_model();

  if (needed[graph_->embed_index()]) {
    Matrix embed(seq_len, d);
    for (Eigen::Index t = 0; t < seq_len; ++t) {
      embed.row(t) = weights_->token_embed.row(tokens[t]) + weights_->pos_embed.row(t);
    }
    acts[graph_->embed_index()] = std::move(embed);
  }
  for (std::size_t v = 1; v + 1 < n; ++v) {
    if (!needed[v]) continue;
    const NodePlan& plan = plans_[v];
    const Matrix q = gather(plan.channels[0], present, ablation, acts, seq_len) * plan.channels[0].weight;
    const Matrix k = gather(plan.channels[1], present, ablation, acts, seq_len) * plan.channels[1].weight;
    const Matrix val = gather(plan.channels[2], present, ablation, acts, seq_len) * plan.channels[2].weight;
    const Matrix z = attend(q, k, val, plan.scale, weights_->causal);
    const Matrix written = z * plan.w_o;
    Matrix out = Matrix::Zero(seq_len, d);
    for (std::size_t c = 0; c < plan.write_cols.size(); ++c) {
      out.col(plan.write_cols[c]) = written.col(static_cast<Eigen::Index>(c));
    }
    acts[v] = std::move(out);
  }
  const ChannelPlan& readout = plans_[graph_->logits_index()].channels[0];
  return gather(readout, present, ablation, acts, seq_len) * readout.weight;
}

ForwardResult Engine::forward_full(const Tokens& tokens) const {
  ForwardResult result;
  result.logits = evaluate(tokens, nullptr, AblationScheme::zero(), true, result.cache.outputs);
  return result;
}

Matrix Engine::run_circuit(const Circuit& circuit, const Tokens& tokens, const AblationScheme& ablation) const {
  if (!circuit.graph().same_shape(*graph_)) throw InvalidArgument("circuit belongs to a different graph");
  std::vector<Matrix> acts;
  return evaluate(tokens, &circuit.edge_set(), ablation, false, acts);
}

Matrix Engine::knockout(const Circuit& circuit, const Tokens& tokens, const AblationScheme& ablation) const {
  return run_circuit(complement(circuit), tokens, ablation);
}

std::vector<std::uint32_t> Engine::canonical_key(const Circuit& circuit) const {
  const EdgeSet& present = circuit.edge_set();
  const std::vector<char> needed = needed_nodes(&present);
  std::vector<std::uint32_t> key;
  for (std::size_t v = 1; v < graph_->node_count(); ++v) {
    if (!needed[v]) continue;
    for (const ChannelPlan& ch : plans_[v].channels) {
      for (auto e : ch.edges) {
        if (present.test(e)) key.push_back(e);
      }
    }
  }
  std::sort(key.begin(), key.end());
  return key;
}

}  // namespace circuitcheck
