#pragma once

// Decoder-only transformer layers over packed sequences. Each node's text is
// followed by K memory tokens; the memory rows of the last layer are the
// node's compressed representation.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gofa/log.hpp"
#include "gofa/ops.hpp"
#include "gofa/params.hpp"
#include "gofa/tokenizer.hpp"

namespace gofa {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  int vocab_size = ByteTokenizer::kVocabSize;
  int d_model = 128;
  int n_heads = 4;
  int n_layers = 6;
  int decoder_layers = 6;
  int memory_tokens = 4;          // K
  std::vector<int> gnn_layers{3, 4, 5};  // GNN runs after these (1-based) transformer layers
  int max_seq_len = 128;
  int ff_mult = 4;
  double rope_base = 10000.0;
  bool tie_decoder = false;
  std::uint64_t init_seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (vocab_size < ByteTokenizer::kVocabSize) fail("vocab_size must cover the byte tokenizer (260)");
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
    if ((d_model / n_heads) % 2 != 0) fail("head dimension must be even for rotary positions");
    if (n_layers < 1 || decoder_layers < 1) fail("layer counts must be positive");
    if (memory_tokens < 1) fail("memory_tokens must be >= 1");
    if (max_seq_len <= memory_tokens) fail("max_seq_len must exceed memory_tokens");
    if (ff_mult < 1) fail("ff_mult must be >= 1");
    std::set<int> seen;
    for (int l : gnn_layers) {
      if (l < 1 || l > n_layers - 1) fail("gnn layer " + std::to_string(l) + " outside 1..n_layers-1");
      if (!seen.insert(l).second) fail("duplicate gnn layer " + std::to_string(l));
    }
    if (tie_decoder && decoder_layers != n_layers) fail("tie_decoder requires decoder_layers == n_layers");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},         {"d_model", c.d_model},
                     {"n_heads", c.n_heads},               {"n_layers", c.n_layers},
                     {"decoder_layers", c.decoder_layers}, {"memory_tokens", c.memory_tokens},
                     {"gnn_layers", c.gnn_layers},         {"max_seq_len", c.max_seq_len},
                     {"ff_mult", c.ff_mult},               {"rope_base", c.rope_base},
                     {"tie_decoder", c.tie_decoder},       {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known{"vocab_size", "d_model",     "n_heads",   "n_layers",
                                           "decoder_layers", "memory_tokens", "gnn_layers", "max_seq_len",
                                           "ff_mult",    "rope_base",   "tie_decoder", "init_seed"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("model config: unknown key '" + k + "'");
  }
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.memory_tokens = j.value("memory_tokens", c.memory_tokens);
  c.gnn_layers = j.value("gnn_layers", c.gnn_layers);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  c.rope_base = j.value("rope_base", c.rope_base);
  c.tie_decoder = j.value("tie_decoder", c.tie_decoder);
  c.init_seed = j.value("init_seed", c.init_seed);
}

/// Row layout of a packed batch of [text ; memory] sequences.
struct PackedLayout {
  ops::Segments segments;
  std::vector<int> positions;       // rotary position of every row
  std::vector<std::size_t> text_len;  // per sequence, after truncation
  std::size_t memory_tokens = 0;

  std::size_t sequences() const { return segments.count(); }
  /// Row of memory slot `j` of sequence `s`.
  int memory_row(std::size_t s, std::size_t j) const {
    return static_cast<int>(segments.begin(s) + text_len[s] + j);
  }
  std::vector<int> memory_rows(std::size_t s) const {
    std::vector<int> rows;
    for (std::size_t j = 0; j < memory_tokens; ++j) rows.push_back(memory_row(s, j));
    return rows;
  }
};

/// Packed per-layer activations of a set of sequences (one per node or edge text).
template <typename T>
struct BasicLayerState {
  BasicTensor<T> rows;  // [total_rows, d_model]
  PackedLayout layout;
  int layer = 0;  // number of transformer layers applied so far

  BasicTensor<T> text(std::size_t s) const {
    return ops::slice(rows, 0, layout.segments.begin(s), layout.segments.begin(s) + layout.text_len[s]);
  }
  BasicTensor<T> memory(std::size_t s) const {
    const auto b = static_cast<std::size_t>(layout.memory_row(s, 0));
    return ops::slice(rows, 0, b, b + layout.memory_tokens);
  }
};

/// Pre-norm transformer block: causal self-attention then SiLU feed-forward.
template <typename T>
struct BasicTransformerBlock {
  BasicTensor<T> attn_norm, w_q, w_k, w_v, w_o, ff_norm, w_up, w_down;
  int n_heads = 1;
  T rope_base = T(10000);

  BasicTransformerBlock() = default;
  BasicTransformerBlock(BasicParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                        int depth, std::mt19937_64& rng)
      : n_heads(cfg.n_heads), rope_base(static_cast<T>(cfg.rope_base)) {
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto f = d * static_cast<std::size_t>(cfg.ff_mult);
    const T s_in = T(1) / std::sqrt(static_cast<T>(d));
    const T s_out = s_in / std::sqrt(T(2) * static_cast<T>(depth));
    attn_norm = store.add(prefix + ".attn_norm", {d}, T(1));
    w_q = store.add_normal(prefix + ".w_q", {d, d}, s_in, rng);
    w_k = store.add_normal(prefix + ".w_k", {d, d}, s_in, rng);
    w_v = store.add_normal(prefix + ".w_v", {d, d}, s_in, rng);
    w_o = store.add_normal(prefix + ".w_o", {d, d}, s_out, rng);
    ff_norm = store.add(prefix + ".ff_norm", {d}, T(1));
    w_up = store.add_normal(prefix + ".w_up", {d, f}, s_in, rng);
    w_down = store.add_normal(prefix + ".w_down", {f, d}, s_out / std::sqrt(static_cast<T>(cfg.ff_mult)), rng);
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, const PackedLayout& layout) const {
    using namespace ops;
    const auto n = rms_norm(x, attn_norm);
    const auto q = rope(matmul(n, w_q), std::span<const int>(layout.positions), static_cast<std::size_t>(n_heads), rope_base);
    const auto k = rope(matmul(n, w_k), std::span<const int>(layout.positions), static_cast<std::size_t>(n_heads), rope_base);
    const auto v = matmul(n, w_v);
    const auto h = add(x, matmul(causal_attention(q, k, v, layout.segments, static_cast<std::size_t>(n_heads)), w_o));
    return add(h, matmul(silu(matmul(rms_norm(h, ff_norm), w_up)), w_down));
  }
};

/// Token embedding, K memory embeddings and a stack of transformer blocks.
template <typename T>
struct BasicCompressor {
  BasicTensor<T> embed;   // [V, d]
  BasicTensor<T> memory;  // [K, d], shared by every node
  std::vector<BasicTransformerBlock<T>> blocks;
  std::size_t memory_tokens = 0;
  std::size_t max_seq_len = 0;

  BasicCompressor() = default;
  BasicCompressor(BasicParameterStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng)
      : memory_tokens(static_cast<std::size_t>(cfg.memory_tokens)), max_seq_len(static_cast<std::size_t>(cfg.max_seq_len)) {
    const auto d = static_cast<std::size_t>(cfg.d_model);
    embed = store.add_normal("compressor.embed", {static_cast<std::size_t>(cfg.vocab_size), d}, T(0.5), rng);
    memory = store.add_normal("compressor.memory", {memory_tokens, d}, T(0.5), rng);
    for (int l = 0; l < cfg.n_layers; ++l) {
      blocks.emplace_back(store, "compressor.layers." + std::to_string(l), cfg, cfg.n_layers, rng);
    }
  }

  /// Embeds each text followed by the K memory tokens. Text longer than
  /// max_seq_len − K is truncated from the left.
  BasicLayerState<T> embed_texts(const std::vector<std::vector<int>>& texts) const {
    BasicLayerState<T> st;
    st.layout.memory_tokens = memory_tokens;
    const std::size_t vocab = embed.dim(0);
    std::vector<int> ids;
    const std::size_t room = max_seq_len - memory_tokens;
    for (const auto& t : texts) {
      std::size_t skip = 0;
      if (t.size() > room) {
        skip = t.size() - room;
        static std::atomic<long> count{0};
        log::warn_limited(count, "node text of " + std::to_string(t.size()) + " tokens truncated to " + std::to_string(room));
      }
      const std::size_t len = t.size() - skip;
      for (std::size_t i = skip; i < t.size(); ++i) ids.push_back(t[i]);
      for (std::size_t j = 0; j < memory_tokens; ++j) ids.push_back(static_cast<int>(vocab + j));
      for (std::size_t p = 0; p < len + memory_tokens; ++p) st.layout.positions.push_back(static_cast<int>(p));
      st.layout.text_len.push_back(len);
      st.layout.segments.push(len + memory_tokens);
    }
    const auto table = ops::concat<T>({embed, memory}, 0);
    st.rows = ops::gather_rows(table, std::span<const int>(ids));
    return st;
  }

  /// Applies transformer layer `t` (0-based) to every sequence independently.
  void apply_layer(BasicLayerState<T>& st, std::size_t t) const {
    st.rows = blocks.at(t).forward(st.rows, st.layout);
    st.layer = static_cast<int>(t) + 1;
  }
};

/// Embeds a single text with the compressor's token table: [len, d].
template <typename T>
BasicTensor<T> embed_node_text(const BasicCompressor<T>& comp, std::string_view text) {
  const auto ids = ByteTokenizer::encode(text);
  if (ids.empty()) return BasicTensor<T>(Shape{0, comp.embed.dim(1)});
  return ops::gather_rows(comp.embed, std::span<const int>(ids));
}

/// Causal transformer reading [memory ; target tokens] and predicting the target.
template <typename T>
struct BasicDecoder {
  BasicTensor<T> embed;
  std::vector<BasicTransformerBlock<T>> blocks;
  BasicTensor<T> final_norm;
  BasicTensor<T> lm_head;  // [d, V]

  BasicDecoder() = default;
  BasicDecoder(BasicParameterStore<T>& store, const ModelConfig& cfg, std::mt19937_64& rng,
               const BasicCompressor<T>* tie_to = nullptr) {
    const auto d = static_cast<std::size_t>(cfg.d_model);
    if (tie_to) {
      embed = tie_to->embed;
      blocks = tie_to->blocks;
    } else {
      embed = store.add_normal("decoder.embed", {static_cast<std::size_t>(cfg.vocab_size), d}, T(0.5), rng);
      for (int l = 0; l < cfg.decoder_layers; ++l) {
        blocks.emplace_back(store, "decoder.layers." + std::to_string(l), cfg, cfg.decoder_layers, rng);
      }
    }
    final_norm = store.add("decoder.final_norm", {d}, T(1));
    lm_head = store.add_normal("decoder.lm_head", {d, static_cast<std::size_t>(cfg.vocab_size)}, T(0.02), rng);
  }
};

using TransformerBlock = BasicTransformerBlock<double>;
using Compressor = BasicCompressor<double>;
using Decoder = BasicDecoder<double>;
using LayerState = BasicLayerState<double>;

}  // namespace gofa
