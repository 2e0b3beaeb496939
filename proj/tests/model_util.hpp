#pragma once

#include <random>
#include <string>

#include "gofa/corpus.hpp"
#include "gofa/model.hpp"

namespace gofa::testing {

inline ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 4;
  c.n_layers = 3;
  c.decoder_layers = 2;
  c.memory_tokens = 2;
  c.gnn_layers = {1, 2};
  c.max_seq_len = 64;
  c.init_seed = seed;
  return c;
}

/// Sets every GNN gate of the model to `value`.
inline void set_gates(GofaModel& m, double value) {
  for (auto& p : m.params().all()) {
    if (p.name.ends_with(".gate_gnn") || p.name.ends_with(".gate_ff")) p.tensor[0] = value;
  }
}

inline TAG random_text_graph(std::mt19937_64& rng, int n_min = 2, int n_max = 6) {
  const int n = n_min + static_cast<int>(rng() % static_cast<std::uint64_t>(n_max - n_min + 1));
  TAG g;
  for (int i = 0; i < n; ++i) {
    std::string t;
    const int words = static_cast<int>(rng() % 4);
    for (int w = 0; w < words; ++w) t += (w ? " " : "") + pseudo_word(rng);
    g.add_node(t);
  }
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && u(rng) < 0.35) g.add_arc(i, j, u(rng) < 0.5 ? "cites" : "");
    }
  }
  return g;
}

}  // namespace gofa::testing
