#include "circuitcheck/weights.hpp"

#include <cmath>
#include <fstream>

#include "circuitcheck/error.hpp"
#include "circuitcheck/located_json.hpp"
#include "circuitcheck/rng.hpp"

namespace circuitcheck {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidArgument("weights: " + message);
}

void require_finite(const Matrix& m, const std::string& what) {
  require(m.allFinite(), what + " contains non-finite entries");
}

std::string shape_str(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

void ModelWeights::validate() const {
  require(layers >= 1 && heads_per_layer >= 1, "need at least one layer and one head");
  require(token_embed.rows() >= 1 && token_embed.cols() >= 1, "token_embed is empty");
  require(pos_embed.rows() >= 1, "pos_embed is empty");
  require(pos_embed.cols() == token_embed.cols(),
          "pos_embed is " + shape_str(pos_embed) + ", expected d_model " + std::to_string(d_model()));
  require(unembed.rows() == token_embed.cols() && unembed.cols() >= 1,
          "unembed is " + shape_str(unembed) + ", expected " + std::to_string(d_model()) + " rows");
  require(heads.size() == static_cast<std::size_t>(layers) * heads_per_layer,
          "expected " + std::to_string(layers * heads_per_layer) + " heads, got " + std::to_string(heads.size()));
  require_finite(token_embed, "token_embed");
  require_finite(pos_embed, "pos_embed");
  require_finite(unembed, "unembed");
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const HeadWeights& w = heads[h];
    const std::string name = "head " + std::to_string(h / heads_per_layer) + "." + std::to_string(h % heads_per_layer);
    const auto d = token_embed.cols();
    const auto dh = w.w_q.cols();
    require(dh >= 1, name + " has d_head 0");
    require(w.w_q.rows() == d && w.w_k.rows() == d && w.w_v.rows() == d,
            name + ": W_Q/W_K/W_V must have d_model rows");
    require(w.w_k.cols() == dh && w.w_v.cols() == dh, name + ": W_Q/W_K/W_V must share d_head");
    require(w.w_o.rows() == dh && w.w_o.cols() == d, name + ": W_O is " + shape_str(w.w_o) + ", expected " +
                                                         std::to_string(dh) + "x" + std::to_string(d));
    require(std::isfinite(w.attention_scale) && w.attention_scale > 0, name + ": attention_scale must be positive");
    require_finite(w.w_q, name + " W_Q");
    require_finite(w.w_k, name + " W_K");
    require_finite(w.w_v, name + " W_V");
    require_finite(w.w_o, name + " W_O");
  }
}

ModelWeights make_zero_weights(int layers, int heads_per_layer, int vocab, int d_model, int max_len, int d_head,
                               int out_dim, bool causal) {
  ModelWeights w;
  w.layers = layers;
  w.heads_per_layer = heads_per_layer;
  w.causal = causal;
  w.token_embed = Matrix::Zero(vocab, d_model);
  w.pos_embed = Matrix::Zero(max_len, d_model);
  w.unembed = Matrix::Zero(d_model, out_dim);
  w.heads.resize(static_cast<std::size_t>(layers) * heads_per_layer);
  for (auto& h : w.heads) {
    h.w_q = Matrix::Zero(d_model, d_head);
    h.w_k = Matrix::Zero(d_model, d_head);
    h.w_v = Matrix::Zero(d_model, d_head);
    h.w_o = Matrix::Zero(d_head, d_model);
    h.attention_scale = 1.0;
  }
  return w;
}

ModelWeights make_random_weights(int layers, int heads_per_layer, int vocab, int d_model, int max_len, int d_head,
                                 int out_dim, bool causal, double scale, RngStream& rng) {
  ModelWeights w = make_zero_weights(layers, heads_per_layer, vocab, d_model, max_len, d_head, out_dim, causal);
  auto fill = [&](Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  };
  fill(w.token_embed);
  fill(w.pos_embed);
  fill(w.unembed);
  for (auto& h : w.heads) {
    fill(h.w_q);
    fill(h.w_k);
    fill(h.w_v);
    fill(h.w_o);
    h.attention_scale = 1.0 / std::sqrt(static_cast<double>(d_head));
  }
  return w;
}

json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& doc, const std::string& what) {
  if (!doc.is_object() || !doc.contains("shape") || !doc.contains("data")) {
    throw InvalidArgument("weights: " + what + " must be {\"shape\": [rows, cols], \"data\": [...]}");
  }
  const json& shape = doc["shape"];
  if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_unsigned() || !shape[1].is_number_unsigned()) {
    throw InvalidArgument("weights: " + what + " shape must be two nonnegative integers");
  }
  const auto rows = shape[0].get<std::size_t>();
  const auto cols = shape[1].get<std::size_t>();
  const json& data = doc["data"];
  if (!data.is_array() || data.size() != rows * cols) {
    throw InvalidArgument("weights: " + what + " declares shape " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " but has " + std::to_string(data.is_array() ? data.size() : 0) +
                          " entries");
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].is_number()) throw InvalidArgument("weights: " + what + " entry " + std::to_string(i) + " is not a number");
    m.data()[i] = data[i].get<double>();
  }
  return m;
}

json weights_to_json(const ModelWeights& weights) {
  json heads = json::array();
  for (int l = 0; l < weights.layers; ++l) {
    for (int i = 0; i < weights.heads_per_layer; ++i) {
      const HeadWeights& h = weights.head(l, i);
      heads.push_back({{"layer", l},
                       {"index", i},
                       {"attention_scale", h.attention_scale},
                       {"w_q", matrix_to_json(h.w_q)},
                       {"w_k", matrix_to_json(h.w_k)},
                       {"w_v", matrix_to_json(h.w_v)},
                       {"w_o", matrix_to_json(h.w_o)}});
    }
  }
  return {{"format", "circuitcheck-weights"},
          {"version", 1},
          {"layers", weights.layers},
          {"heads_per_layer", weights.heads_per_layer},
          {"causal", weights.causal},
          {"token_embed", matrix_to_json(weights.token_embed)},
          {"pos_embed", matrix_to_json(weights.pos_embed)},
          {"unembed", matrix_to_json(weights.unembed)},
          {"heads", std::move(heads)}};
}

ModelWeights weights_from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidArgument("weights: document must be an object");
  if (doc.value("format", std::string{}) != "circuitcheck-weights") {
    throw InvalidArgument("weights: missing \"format\": \"circuitcheck-weights\"");
  }
  if (doc.value("version", 0) != 1) throw InvalidArgument("weights: unsupported version");
  ModelWeights w;
  try {
    w.layers = doc.at("layers").get<int>();
    w.heads_per_layer = doc.at("heads_per_layer").get<int>();
    w.causal = doc.at("causal").get<bool>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("weights: ") + e.what());
  }
  if (w.layers < 1 || w.heads_per_layer < 1) throw InvalidArgument("weights: need at least one layer and one head");
  w.token_embed = matrix_from_json(doc.value("token_embed", json{}), "token_embed");
  w.pos_embed = matrix_from_json(doc.value("pos_embed", json{}), "pos_embed");
  w.unembed = matrix_from_json(doc.value("unembed", json{}), "unembed");
  const json heads = doc.value("heads", json::array());
  if (!heads.is_array()) throw InvalidArgument("weights: \"heads\" must be an array");
  w.heads.resize(static_cast<std::size_t>(w.layers) * w.heads_per_layer);
  std::vector<char> seen(w.heads.size(), 0);
  for (const json& h : heads) {
    const int l = h.value("layer", -1);
    const int i = h.value("index", -1);
    if (l < 0 || l >= w.layers || i < 0 || i >= w.heads_per_layer) {
      throw InvalidArgument("weights: head entry with invalid layer/index");
    }
    const std::size_t slot = static_cast<std::size_t>(l) * w.heads_per_layer + i;
    if (seen[slot]) throw InvalidArgument("weights: duplicate head " + std::to_string(l) + "." + std::to_string(i));
    seen[slot] = 1;
    const std::string name = "head " + std::to_string(l) + "." + std::to_string(i);
    HeadWeights& hw = w.heads[slot];
    hw.attention_scale = h.value("attention_scale", 0.0);
    hw.w_q = matrix_from_json(h.value("w_q", json{}), name + " w_q");
    hw.w_k = matrix_from_json(h.value("w_k", json{}), name + " w_k");
    hw.w_v = matrix_from_json(h.value("w_v", json{}), name + " w_v");
    hw.w_o = matrix_from_json(h.value("w_o", json{}), name + " w_o");
  }
  for (std::size_t s = 0; s < seen.size(); ++s) {
    if (!seen[s]) {
      throw InvalidArgument("weights: missing head " + std::to_string(s / w.heads_per_layer) + "." +
                            std::to_string(s % w.heads_per_layer));
    }
  }
  w.validate();
  return w;
}

void save_weights(const ModelWeights& weights, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << weights_to_json(weights).dump() << "\n";
}

ModelWeights load_weights(const std::string& path) {
  const std::string text = read_text_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
  return weights_from_json(doc);
}

}  // namespace circuitcheck
