#pragma once

// Token-level transformer-convolution GNN. Memory token k of a node only
// exchanges messages with memory token k of its in-neighbours; indices never
// mix inside the layer.

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gofa/compressor.hpp"
#include "gofa/ops.hpp"
#include "gofa/params.hpp"

namespace gofa {

template <typename T>
struct BasicGnnLayer {
  BasicTensor<T> attn_norm, edge_norm;
  BasicTensor<T> w_q, w_k_node, w_k_edge, w_v_node, w_v_edge, w_o;
  BasicTensor<T> gate_gnn;  // [1], tanh-gated, starts at 0
  BasicTensor<T> ff_norm, w_up, w_down;
  BasicTensor<T> gate_ff;  // [1]
  std::size_t n_heads = 1;

  BasicGnnLayer() = default;
  BasicGnnLayer(BasicParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg, std::mt19937_64& rng)
      : n_heads(static_cast<std::size_t>(cfg.n_heads)) {
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto f = d * static_cast<std::size_t>(cfg.ff_mult);
    const T s = T(1) / std::sqrt(static_cast<T>(d));
    attn_norm = store.add(prefix + ".attn_norm", {d}, T(1));
    edge_norm = store.add(prefix + ".edge_norm", {d}, T(1));
    w_q = store.add_normal(prefix + ".w_q", {d, d}, s, rng);
    w_k_node = store.add_normal(prefix + ".w_k_node", {d, d}, s, rng);
    w_k_edge = store.add_normal(prefix + ".w_k_edge", {d, d}, s, rng);
    w_v_node = store.add_normal(prefix + ".w_v_node", {d, d}, s, rng);
    w_v_edge = store.add_normal(prefix + ".w_v_edge", {d, d}, s, rng);
    w_o = store.add_normal(prefix + ".w_o", {d, d}, s, rng);
    gate_gnn = store.add(prefix + ".gate_gnn", {1}, T(0));
    ff_norm = store.add(prefix + ".ff_norm", {d}, T(1));
    w_up = store.add_normal(prefix + ".w_up", {d, f}, s, rng);
    w_down = store.add_normal(prefix + ".w_down", {f, d}, T(1) / std::sqrt(static_cast<T>(f)), rng);
    gate_ff = store.add(prefix + ".gate_ff", {1}, T(0));
  }

  /// node_mem: [N·K, d] node-major memory rows; edge_mem: [E·K, d].
  /// Returns H with the same shape as node_mem. Nodes with no incoming arc are
  /// returned unchanged.
  BasicTensor<T> forward(const BasicTensor<T>& node_mem, const BasicTensor<T>& edge_mem, std::span<const ops::Arc> arcs,
                         std::size_t tokens, std::vector<T>* attention_out = nullptr) const {
    using namespace ops;
    if (node_mem.rank() != 2 || edge_mem.rank() != 2 || node_mem.dim(1) != w_q.dim(0) ||
        edge_mem.dim(1) != w_q.dim(0) || tokens == 0 || node_mem.dim(0) % tokens != 0 ||
        edge_mem.dim(0) % tokens != 0) {
      throw ShapeError("gnn_layer: node memory " + shape_str(node_mem.shape()) + " / edge memory " +
                       shape_str(edge_mem.shape()) + " do not match d_model " + std::to_string(w_q.dim(0)) +
                       " and " + std::to_string(tokens) + " tokens");
    }
    const std::size_t n_nodes = node_mem.dim(0) / tokens;
    std::vector<char> has_in(n_nodes, 0);
    for (const auto& a : arcs) {
      if (a.dst >= 0 && static_cast<std::size_t>(a.dst) < n_nodes) has_in[static_cast<std::size_t>(a.dst)] = 1;
    }
    std::vector<int> active;
    for (std::size_t i = 0; i < n_nodes; ++i) {
      if (!has_in[i]) continue;
      for (std::size_t t = 0; t < tokens; ++t) active.push_back(static_cast<int>(i * tokens + t));
    }
    if (active.empty()) {
      if (attention_out) attention_out->clear();
      return node_mem;
    }
    const auto n = rms_norm(node_mem, attn_norm);
    const auto e = rms_norm(edge_mem, edge_norm);
    const auto att = graph_attention(matmul(n, w_q), matmul(n, w_k_node), matmul(n, w_v_node), matmul(e, w_k_edge),
                                     matmul(e, w_v_edge), arcs, tokens, n_heads, attention_out);
    const auto h = add(node_mem, scale_by(matmul(att, w_o), tanh(gate_gnn)));
    const auto out = add(h, scale_by(matmul(silu(matmul(rms_norm(h, ff_norm), w_up)), w_down), tanh(gate_ff)));
    if (active.size() == node_mem.dim(0)) return out;
    return scatter_rows(node_mem, std::span<const int>(active), gather_rows(out, std::span<const int>(active)));
  }
};

/// ‖H − Q‖_F / ‖Q‖_F.
template <typename T>
T representation_change_ratio(const BasicTensor<T>& h, const BasicTensor<T>& q) {
  if (h.shape() != q.shape()) {
    throw ShapeError("representation_change_ratio: shape mismatch " + shape_str(h.shape()) + " vs " +
                     shape_str(q.shape()));
  }
  T num = 0, den = 0;
  for (std::size_t i = 0; i < q.numel(); ++i) {
    num += (h[i] - q[i]) * (h[i] - q[i]);
    den += q[i] * q[i];
  }
  if (den == T(0)) throw std::invalid_argument("representation_change_ratio: reference tensor has zero norm");
  return std::sqrt(num) / std::sqrt(den);
}

using GnnLayer = BasicGnnLayer<double>;

}  // namespace gofa
