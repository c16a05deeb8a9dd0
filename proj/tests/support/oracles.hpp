#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance binary. They share no numerical code with the library.

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <vector>

#include "circuitcheck/graph.hpp"
#include "circuitcheck/weights.hpp"

namespace oracle {

using circuitcheck::Circuit;
using circuitcheck::ComputationalGraph;
using circuitcheck::Matrix;
using circuitcheck::ModelWeights;
using circuitcheck::Tokens;
using Rational = boost::multiprecision::cpp_rational;

// ---- exact binomial arithmetic ----

inline Rational choose(unsigned n, unsigned k) {
  Rational c = 1;
  for (unsigned i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

inline Rational power(const Rational& base, unsigned e) {
  Rational out = 1;
  for (unsigned i = 0; i < e; ++i) out *= base;
  return out;
}

inline Rational pmf(unsigned j, unsigned n, const Rational& p) { return choose(n, j) * power(p, j) * power(1 - p, n - j); }

// P(K >= k) or P(K <= k) under Binomial(n, p).
inline double binom_tail(unsigned k, unsigned n, const Rational& p, bool greater) {
  Rational total = 0;
  for (unsigned j = 0; j <= n; ++j) {
    if (greater ? j >= k : j <= k) total += pmf(j, n, p);
  }
  return static_cast<double>(total);
}

// Sum of Binomial(n, 1/2 + eps) mass over j with |j/n - 1/2| >= |k/n - 1/2|.
inline double equivalence(unsigned k, unsigned n, const Rational& half_plus_eps) {
  if (n == 0) return 1.0;
  const Rational half(1, 2);
  const Rational t = abs(Rational(k, n) - half);
  Rational total = 0;
  for (unsigned j = 0; j <= n; ++j) {
    if (abs(Rational(j, n) - half) >= t) total += pmf(j, n, half_plus_eps);
  }
  return static_cast<double>(total);
}

// ---- HSIC by explicit summation ----

inline double median_nonzero_gap(const std::vector<double>& v) {
  std::vector<double> d;
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      if (v[i] != v[j]) d.push_back(std::fabs(v[i] - v[j]));
    }
  }
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size();
  return m % 2 ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
}

// (1/n^2) sum K.L - (2/n^3) sum_i sum_j sum_q K_ij L_iq + (1/n^4) sum K sum L
inline double hsic(const std::vector<double>& x, const std::vector<double>& y, double rho_x, double rho_y) {
  const std::size_t n = x.size();
  auto kx = [&](std::size_t i, std::size_t j) { return std::exp(-(x[i] - x[j]) * (x[i] - x[j]) / (2 * rho_x * rho_x)); };
  auto ly = [&](std::size_t i, std::size_t j) { return std::exp(-(y[i] - y[j]) * (y[i] - y[j]) / (2 * rho_y * rho_y)); };
  double a = 0, b = 0, sk = 0, sl = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double rk = 0, rl = 0;
    for (std::size_t j = 0; j < n; ++j) {
      a += kx(i, j) * ly(i, j);
      rk += kx(i, j);
      rl += ly(i, j);
    }
    b += rk * rl;  // sum_j sum_q K_ij L_iq
    sk += rk;
    sl += rl;
  }
  const double dn = static_cast<double>(n);
  return a / (dn * dn) - 2 * b / (dn * dn * dn) + sk * sl / (dn * dn * dn * dn);
}

// ---- brute-force patched forward pass ----

struct Run {
  Matrix logits;
  std::vector<Matrix> writes;  // embed, heads layer-major
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

// Evaluates every node with explicit per-edge contributions. `present(sender,
// receiver_slot, channel)` decides whether an edge is in the circuit; absent
// edges use `ablated` writes (nullptr = zero ablation).
template <typename Present>
Run run(const ModelWeights& w, const Tokens& x, Present present, const std::vector<Matrix>* ablated) {
  const auto n = static_cast<Eigen::Index>(x.size());
  const Eigen::Index d = w.d_model();
  const int heads = w.layers * w.heads_per_layer;
  Run out;
  Matrix embed(n, d);
  for (Eigen::Index t = 0; t < n; ++t)
    for (Eigen::Index c = 0; c < d; ++c) embed(t, c) = w.token_embed(x[t], c) + w.pos_embed(t, c);
  out.writes.push_back(embed);

  // Sender slot s: 0 = embed, 1 + h = head h (layer-major).
  auto channel_input = [&](int receiver, int channel, int n_senders) {
    std::vector<Matrix> contributions;
    for (int s = 0; s < n_senders; ++s) {
      if (present(s, receiver, channel)) {
        contributions.push_back(out.writes[s]);
      } else if (ablated != nullptr) {
        contributions.push_back((*ablated)[s]);
      } else {
        contributions.push_back(Matrix::Zero(n, d));
      }
    }
    Matrix sum = Matrix::Zero(n, d);
    for (const Matrix& m : contributions) sum += m;
    return sum;
  };

  for (int h = 0; h < heads; ++h) {
    const int layer = h / w.heads_per_layer;
    const int senders = 1 + layer * w.heads_per_layer;
    const auto& hw = w.heads[h];
    const Matrix q = matmul(channel_input(h, 0, senders), hw.w_q);
    const Matrix k = matmul(channel_input(h, 1, senders), hw.w_k);
    const Matrix v = matmul(channel_input(h, 2, senders), hw.w_v);
    Matrix z = Matrix::Zero(n, hw.w_v.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index last = w.causal ? i : n - 1;
      std::vector<double> s(static_cast<std::size_t>(last + 1));
      double mx = -INFINITY;
      for (Eigen::Index j = 0; j <= last; ++j) {
        double dot = 0;
        for (Eigen::Index c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
        s[j] = dot * hw.attention_scale;
        mx = std::max(mx, s[j]);
      }
      double total = 0;
      for (auto& e : s) total += (e = std::exp(e - mx));
      for (Eigen::Index j = 0; j <= last; ++j)
        for (Eigen::Index c = 0; c < v.cols(); ++c) z(i, c) += s[j] / total * v(j, c);
    }
    out.writes.push_back(matmul(z, hw.w_o));
  }
  out.logits = matmul(channel_input(heads, 3, 1 + heads), w.unembed);
  return out;
}

// Adapts a Circuit to the sender-slot convention above.
inline auto membership(const Circuit& c) {
  return [&c](int sender, int receiver, int channel) {
    const ComputationalGraph& g = c.graph();
    const int hpl = g.heads_per_layer();
    const auto node = [&](int slot) {
      return slot == 0 ? circuitcheck::NodeId::embed() : circuitcheck::NodeId::head((slot - 1) / hpl, (slot - 1) % hpl);
    };
    const bool to_logits = receiver == static_cast<int>(g.head_count());
    const circuitcheck::Edge e{node(sender),
                               to_logits ? circuitcheck::NodeId::logits() : node(receiver + 1),
                               to_logits ? circuitcheck::Channel::LogitsIn : static_cast<circuitcheck::Channel>(channel)};
    return c.contains(e);
  };
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

}  // namespace oracle
