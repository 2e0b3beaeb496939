#pragma once

// The graph language model: compressor layers with interleaved token-level
// GNN layers encode every node into K memory rows; a separate decoder reads
// the memory of a node of generation and predicts the target text.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "gofa/checkpoint.hpp"
#include "gofa/compressor.hpp"
#include "gofa/gnn.hpp"
#include "gofa/tag.hpp"
#include "gofa/tokenizer.hpp"

namespace gofa {

enum class DecodeMode { greedy, sample };

struct GenerateOptions {
  int max_new_tokens = 64;
  DecodeMode mode = DecodeMode::greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

template <typename T>
struct BasicEncoding {
  BasicTensor<T> node_memory;            // [Σ nodes · K, d], graph-major then node-major
  std::vector<std::size_t> node_offset;  // first node of graph g in the packed order
  std::size_t tokens = 0;
  /// ratios[l][g]: change ratio ‖H−Q‖/‖Q‖ of GNN layer l on graph g (when captured)
  std::vector<std::vector<T>> change_ratios;

  /// Memory rows [K, d] of node `v` of graph `g`.
  BasicTensor<T> memory(std::size_t g, int v) const {
    const std::size_t b = (node_offset[g] + static_cast<std::size_t>(v)) * tokens;
    return ops::slice(node_memory, 0, b, b + tokens);
  }
};

struct EncodeOptions {
  bool use_gnn = true;
  bool capture_ratios = false;
};

/// Sums over decoded target tokens.
struct TargetStats {
  double nll_sum = 0;
  std::size_t tokens = 0;
  std::size_t targets = 0;
};

template <typename T>
class BasicGofaModel {
 public:
  explicit BasicGofaModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed);
    compressor_ = BasicCompressor<T>(store_, cfg_, rng);
    for (std::size_t i = 0; i < cfg_.gnn_layers.size(); ++i) {
      gnn_.emplace_back(store_, "gnn." + std::to_string(i), cfg_, rng);
    }
    std::vector<int> sorted = cfg_.gnn_layers;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < cfg_.gnn_layers.size(); ++i) gnn_after_[cfg_.gnn_layers[i]] = i;
    decoder_ = BasicDecoder<T>(store_, cfg_, rng, cfg_.tie_decoder ? &compressor_ : nullptr);
  }

  BasicGofaModel(const BasicGofaModel&) = delete;
  BasicGofaModel& operator=(const BasicGofaModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  BasicParameterStore<T>& params() { return store_; }
  const BasicParameterStore<T>& params() const { return store_; }
  const BasicCompressor<T>& compressor() const { return compressor_; }
  const std::vector<BasicGnnLayer<T>>& gnn_layers() const { return gnn_; }
  std::size_t tokens() const { return static_cast<std::size_t>(cfg_.memory_tokens); }

  // -------------------------------------------------------------------------
  // Encoding

  /// Encodes several graphs at once as one disjoint union. Edge texts go
  /// through the compressor like node texts; identical edge texts share one
  /// sequence since their memories are identical.
  BasicEncoding<T> encode(const std::vector<const TAG*>& graphs, const EncodeOptions& opt = {}) const {
    const std::size_t K = tokens();
    BasicEncoding<T> enc;
    enc.tokens = K;
    std::vector<std::vector<int>> texts;
    std::size_t n_nodes = 0;
    for (const TAG* g : graphs) {
      enc.node_offset.push_back(n_nodes);
      for (const auto& n : g->nodes()) texts.push_back(ByteTokenizer::encode(n.text));
      n_nodes += g->size();
    }
    const bool run_gnn = opt.use_gnn && !gnn_.empty();
    std::vector<ops::Arc> arcs;
    std::size_t n_edge_seqs = 0;
    if (run_gnn) {
      std::map<std::string, int> slot;
      std::vector<std::string> edge_texts;
      for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        for (const auto& e : graphs[gi]->edges()) {
          auto [it, fresh] = slot.emplace(e.text, static_cast<int>(edge_texts.size()));
          if (fresh) edge_texts.push_back(e.text);
          arcs.push_back({static_cast<int>(enc.node_offset[gi]) + e.src, static_cast<int>(enc.node_offset[gi]) + e.dst,
                          it->second});
        }
      }
      for (const auto& t : edge_texts) texts.push_back(ByteTokenizer::encode(t));
      n_edge_seqs = edge_texts.size();
    }
    auto st = compressor_.embed_texts(texts);
    std::vector<int> node_rows, edge_rows;
    for (std::size_t s = 0; s < n_nodes; ++s) {
      for (std::size_t j = 0; j < K; ++j) node_rows.push_back(st.layout.memory_row(s, j));
    }
    for (std::size_t s = n_nodes; s < n_nodes + n_edge_seqs; ++s) {
      for (std::size_t j = 0; j < K; ++j) edge_rows.push_back(st.layout.memory_row(s, j));
    }
    if (opt.capture_ratios) enc.change_ratios.assign(gnn_.size(), {});
    for (std::size_t t = 0; t < compressor_.blocks.size(); ++t) {
      compressor_.apply_layer(st, t);
      auto it = gnn_after_.find(static_cast<int>(t) + 1);
      if (!run_gnn || it == gnn_after_.end() || arcs.empty()) {
        if (opt.capture_ratios && it != gnn_after_.end()) enc.change_ratios[it->second].assign(graphs.size(), T(0));
        continue;
      }
      const auto q = ops::gather_rows(st.rows, std::span<const int>(node_rows));
      const auto e = ops::gather_rows(st.rows, std::span<const int>(edge_rows));
      const auto h = gnn_[it->second].forward(q, e, std::span<const ops::Arc>(arcs), K);
      if (opt.capture_ratios) {
        auto& ratios = enc.change_ratios[it->second];
        for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
          const std::size_t b = enc.node_offset[gi] * K, n = graphs[gi]->size() * K;
          ratios.push_back(representation_change_ratio(ops::slice(h, 0, b, b + n), ops::slice(q, 0, b, b + n)));
        }
      }
      st.rows = ops::scatter_rows(st.rows, std::span<const int>(node_rows), h);
    }
    enc.node_memory = ops::gather_rows(st.rows, std::span<const int>(node_rows));
    return enc;
  }

  BasicEncoding<T> encode(const TAG& g, const EncodeOptions& opt = {}) const { return encode({&g}, opt); }

  // -------------------------------------------------------------------------
  // Decoding

  struct DecodeItem {
    BasicTensor<T> memory;  // [K, d]
    std::vector<int> target;  // token ids ending in EOS
    T weight = T(1);          // applied to every token NLL of this item
  };

  /// Target token ids with EOS appended. A target that does not fit after the
  /// memory keeps its head and loses the tail, EOS included.
  std::vector<int> target_ids(const std::string& text) const {
    auto ids = ByteTokenizer::encode(text);
    ids.push_back(ByteTokenizer::kEos);
    const std::size_t room = static_cast<std::size_t>(cfg_.max_seq_len - cfg_.memory_tokens) + 1;
    if (ids.size() > room) {
      static std::atomic<long> count{0};
      log::warn_limited(count, "target of " + std::to_string(ids.size()) + " tokens truncated to " + std::to_string(room));
      ids.resize(room);
    }
    return ids;
  }

  /// Σ_items weight · Σ_tokens NLL under teacher forcing. The decoder input is
  /// [memory ; target[0..l-2]]; the last memory row predicts target[0].
  BasicTensor<T> decode(const std::vector<DecodeItem>& items, TargetStats* stats = nullptr) const {
    const std::size_t K = tokens();
    std::vector<BasicTensor<T>> parts;
    PackedLayout layout;
    layout.memory_tokens = K;
    std::vector<int> predict_rows, targets;
    std::vector<T> weights;
    for (const auto& it : items) {
      if (it.memory.rank() != 2 || it.memory.dim(0) != K) {
        throw ShapeError("decode: memory must be [K, d], got " + shape_str(it.memory.shape()));
      }
      if (it.target.empty()) throw std::invalid_argument("decode: empty target");
      const std::size_t l = it.target.size();
      const std::size_t base = layout.segments.total();
      parts.push_back(it.memory);
      if (l > 1) {
        parts.push_back(ops::gather_rows(decoder_.embed, std::span<const int>(it.target.data(), l - 1)));
      }
      layout.segments.push(K + l - 1);
      layout.text_len.push_back(0);
      for (std::size_t p = 0; p < K + l - 1; ++p) layout.positions.push_back(static_cast<int>(p));
      for (std::size_t i = 0; i < l; ++i) {
        predict_rows.push_back(static_cast<int>(base + K - 1 + i));
        targets.push_back(it.target[i]);
        weights.push_back(it.weight);
      }
      if (stats) {
        stats->tokens += l;
        stats->targets += 1;
      }
    }
    auto x = ops::concat(parts, 0);
    for (const auto& b : decoder_.blocks) x = b.forward(x, layout);
    const auto h = ops::rms_norm(ops::gather_rows(x, std::span<const int>(predict_rows)), decoder_.final_norm);
    const auto logits = ops::matmul(h, decoder_.lm_head);
    auto loss = ops::weighted_nll<T>(logits, std::span<const int>(targets), std::span<const T>(weights));
    if (stats) {
      // token NLL sum is the loss with unit weights
      T unit = 0;
      const std::size_t V = logits.dim(1);
      for (std::size_t r = 0; r < targets.size(); ++r) {
        const T* row = logits.data().data() + r * V;
        const T mx = *std::max_element(row, row + V);
        T z = 0;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(row[j] - mx);
        unit += mx + std::log(z) - row[targets[r]];
      }
      stats->nll_sum += static_cast<double>(unit);
    }
    return loss;
  }

  /// Mean token NLL of `target` given the memory of a node of generation.
  BasicTensor<T> decode_loss(const BasicTensor<T>& nog_memory, const std::string& target) const {
    if (target.empty()) throw std::invalid_argument("decode_loss: empty target");
    auto ids = target_ids(target);
    const T w = T(1) / static_cast<T>(ids.size());
    return decode({DecodeItem{nog_memory, std::move(ids), w}});
  }

  /// Next-token logits after [memory ; prefix].
  std::vector<T> next_logits(const BasicTensor<T>& memory, const std::vector<int>& prefix) const {
    BasicNoGradGuard<T> guard;
    const std::size_t K = tokens();
    std::vector<BasicTensor<T>> parts{memory};
    if (!prefix.empty()) parts.push_back(ops::gather_rows(decoder_.embed, std::span<const int>(prefix)));
    PackedLayout layout;
    layout.memory_tokens = K;
    layout.segments.push(K + prefix.size());
    layout.text_len.push_back(0);
    for (std::size_t p = 0; p < K + prefix.size(); ++p) layout.positions.push_back(static_cast<int>(p));
    auto x = ops::concat(parts, 0);
    for (const auto& b : decoder_.blocks) x = b.forward(x, layout);
    const int last = static_cast<int>(K + prefix.size() - 1);
    const auto h = ops::rms_norm(ops::gather_rows(x, std::span<const int>(&last, 1)), decoder_.final_norm);
    return ops::matmul(h, decoder_.lm_head).data();
  }

  /// Autoregressive decoding from a memory prefix until EOS or the budget.
  std::string generate(const BasicTensor<T>& nog_memory, const GenerateOptions& opt = {}) const {
    if (opt.max_new_tokens < 1) throw std::invalid_argument("generate: max_new_tokens must be >= 1");
    std::mt19937_64 rng(opt.seed);
    std::vector<int> out;
    const std::size_t cap = static_cast<std::size_t>(cfg_.max_seq_len - cfg_.memory_tokens);
    for (int step = 0; step < opt.max_new_tokens && out.size() < cap; ++step) {
      const auto logits = next_logits(nog_memory, out);
      int next = 0;
      if (opt.mode == DecodeMode::greedy || opt.temperature <= 0.0) {
        next = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      } else {
        std::vector<double> w(logits.size());
        const T mx = *std::max_element(logits.begin(), logits.end());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(static_cast<double>(logits[i] - mx) / opt.temperature);
        std::discrete_distribution<int> dist(w.begin(), w.end());
        next = dist(rng);
      }
      if (next == ByteTokenizer::kEos) break;
      out.push_back(next);
    }
    return ByteTokenizer::decode(out);
  }

  // -------------------------------------------------------------------------
  // Batched objective

  /// Mean over every generation target in `samples` of its mean token NLL.
  BasicTensor<T> forward_batch(const std::vector<const TaskSample*>& samples, const EncodeOptions& opt = {},
                               TargetStats* stats = nullptr) const {
    std::size_t n_targets = 0;
    for (const auto* s : samples) n_targets += s->targets.size();
    if (n_targets == 0) throw std::invalid_argument("forward_batch: no generation targets");
    std::vector<const TAG*> graphs;
    for (const auto* s : samples) graphs.push_back(&s->graph);
    const auto enc = encode(graphs, opt);
    std::vector<DecodeItem> items;
    for (std::size_t g = 0; g < samples.size(); ++g) {
      for (const auto& t : samples[g]->targets) {
        if (t.target_text.empty()) throw std::invalid_argument("forward_batch: empty target text");
        auto ids = target_ids(t.target_text);
        const T w = T(1) / (static_cast<T>(n_targets) * static_cast<T>(ids.size()));
        items.push_back({enc.memory(g, t.nog), std::move(ids), w});
      }
    }
    return decode(items, stats);
  }

  BasicTensor<T> forward_batch(const std::vector<TaskSample>& samples, const EncodeOptions& opt = {},
                               TargetStats* stats = nullptr) const {
    std::vector<const TaskSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    return forward_batch(ptrs, opt, stats);
  }

  /// Compression objective on single-node graphs: reconstruct each text from
  /// its own memory rows.
  BasicTensor<T> autoencode_loss(const std::vector<std::string>& texts) const {
    if (texts.empty()) throw std::invalid_argument("autoencode_loss: empty batch");
    std::vector<TAG> graphs(texts.size());
    std::vector<const TAG*> ptrs;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      graphs[i].add_node(texts[i]);
      ptrs.push_back(&graphs[i]);
    }
    const auto enc = encode(ptrs, {.use_gnn = false});
    std::vector<DecodeItem> items;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto ids = target_ids(texts[i]);
      const T w = T(1) / (static_cast<T>(texts.size()) * static_cast<T>(ids.size()));
      items.push_back({enc.memory(i, 0), std::move(ids), w});
    }
    return decode(items);
  }

  // -------------------------------------------------------------------------
  // Persistence

  void save(Checkpoint& ck) const {
    nlohmann::json j = cfg_;
    ck.put_bytes("__config__", j.dump());
    for (const auto& p : store_.all()) ck.put_tensor(p.name, p.tensor);
  }

  void load(const Checkpoint& ck) {
    for (auto& p : store_.all()) {
      const auto& e = ck.entry(p.name);
      if (e.dims != p.tensor.shape()) {
        throw CheckpointError("parameter " + p.name + " has shape " + shape_str(e.dims) + " in checkpoint, expected " +
                              shape_str(p.tensor.shape()));
      }
      p.tensor.data() = ck.values<T>(p.name);
    }
  }

  static ModelConfig config_from(const Checkpoint& ck) {
    return nlohmann::json::parse(ck.bytes("__config__")).get<ModelConfig>();
  }

 private:
  ModelConfig cfg_;
  BasicParameterStore<T> store_;
  BasicCompressor<T> compressor_;
  std::vector<BasicGnnLayer<T>> gnn_;
  std::map<int, std::size_t> gnn_after_;
  BasicDecoder<T> decoder_;
};

using GofaModel = BasicGofaModel<double>;
using Encoding = BasicEncoding<double>;

}  // namespace gofa
