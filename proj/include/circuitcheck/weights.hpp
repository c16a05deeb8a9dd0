#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "circuitcheck/rng.hpp"

namespace circuitcheck {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Tokens = std::vector<int>;

struct HeadWeights {
  Matrix w_q;  // d_model x d_head
  Matrix w_k;
  Matrix w_v;
  Matrix w_o;  // d_head x d_model
  double attention_scale = 1.0;

  int d_head() const { return static_cast<int>(w_q.cols()); }
};

// Attention-only transformer without biases, layer norm or MLPs.
struct ModelWeights {
  int layers = 0;
  int heads_per_layer = 0;
  bool causal = false;
  Matrix token_embed;  // vocab x d_model
  Matrix pos_embed;    // max_len x d_model
  Matrix unembed;      // d_model x out_dim
  std::vector<HeadWeights> heads;  // layer-major

  int vocab() const { return static_cast<int>(token_embed.rows()); }
  int d_model() const { return static_cast<int>(token_embed.cols()); }
  int max_len() const { return static_cast<int>(pos_embed.rows()); }
  int out_dim() const { return static_cast<int>(unembed.cols()); }

  const HeadWeights& head(int layer, int index) const { return heads[layer * heads_per_layer + index]; }
  HeadWeights& head(int layer, int index) { return heads[layer * heads_per_layer + index]; }

  // Throws InvalidArgument on inconsistent shapes, non-positive scales or non-finite entries.
  void validate() const;
};

// Zero-initialised weights with the given shapes.
ModelWeights make_zero_weights(int layers, int heads_per_layer, int vocab, int d_model, int max_len, int d_head,
                               int out_dim, bool causal);

// Every entry i.i.d. N(0, scale^2); attention scale 1/sqrt(d_head).
ModelWeights make_random_weights(int layers, int heads_per_layer, int vocab, int d_model, int max_len, int d_head,
                                 int out_dim, bool causal, double scale, RngStream& rng);

nlohmann::json weights_to_json(const ModelWeights& weights);
ModelWeights weights_from_json(const nlohmann::json& doc);
void save_weights(const ModelWeights& weights, const std::string& path);
ModelWeights load_weights(const std::string& path);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& doc, const std::string& what);

}  // namespace circuitcheck
