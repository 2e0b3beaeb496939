#pragma once

// Synthetic text-attributed graphs and task corpora.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gofa/sampler.hpp"
#include "gofa/tag.hpp"
#include "gofa/taskgen.hpp"

namespace gofa {

/// Pronounceable pseudo-word of `syllables` consonant-vowel pairs.
inline std::string pseudo_word(std::mt19937_64& rng, int syllables = 2) {
  static const char* cons = "bdfgklmnprstvz";
  static const char* vows = "aeiou";
  std::string w;
  for (int i = 0; i < syllables; ++i) {
    w += cons[rng() % 14];
    w += vows[rng() % 5];
  }
  return w;
}

/// `n` distinct pseudo-words drawn from `rng`.
inline std::vector<std::string> word_pool(std::size_t n, std::mt19937_64& rng, int syllables = 2) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < n) {
    auto w = pseudo_word(rng, syllables);
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

template <typename V>
const V& pick(const std::vector<V>& v, std::mt19937_64& rng) {
  return v[static_cast<std::size_t>(rng() % v.size())];
}

// ---------------------------------------------------------------------------
// Citation-like graph

struct CitationConfig {
  int n_nodes = 200;
  int n_topics = 8;
  double avg_degree = 4.0;
  double homophily = 0.9;  // probability an edge stays inside the community
  std::uint64_t seed = 0;

  void validate() const {
    if (n_nodes < 2) throw std::invalid_argument("citation: n_nodes must be >= 2");
    if (n_topics < 1) throw std::invalid_argument("citation: n_topics must be >= 1");
    if (!(avg_degree > 0)) throw std::invalid_argument("citation: avg_degree must be > 0");
    if (!(homophily >= 0 && homophily <= 1)) throw std::invalid_argument("citation: homophily must be in [0,1]");
  }
};

/// Community graph with undirected "cites" edges. Every node reads
/// "<w1> <w2> studies <topic>", so the second half of a node's sentence is its
/// community's topic word, which its neighbors mostly share.
inline TAG make_citation_graph(const CitationConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const auto topics = word_pool(static_cast<std::size_t>(cfg.n_topics), rng, 3);
  TAG g;
  std::vector<int> community(static_cast<std::size_t>(cfg.n_nodes));
  std::vector<std::vector<int>> members(static_cast<std::size_t>(cfg.n_topics));
  for (int i = 0; i < cfg.n_nodes; ++i) {
    const int c = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.n_topics));
    community[static_cast<std::size_t>(i)] = c;
    members[static_cast<std::size_t>(c)].push_back(i);
    g.add_node(pseudo_word(rng) + " " + pseudo_word(rng) + " studies " + topics[static_cast<std::size_t>(c)]);
  }
  const auto n_edges = static_cast<std::size_t>(cfg.avg_degree * cfg.n_nodes / 2.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::size_t added = 0, tries = 0;
  while (added < n_edges && tries++ < 50 * n_edges) {
    const int u = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.n_nodes));
    const auto& same = members[static_cast<std::size_t>(community[static_cast<std::size_t>(u)])];
    const int v = unif(rng) < cfg.homophily ? pick(same, rng)
                                            : static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.n_nodes));
    if (u == v || g.has_arc(u, v)) continue;
    g.add_undirected(u, v, "cites");
    ++added;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Neighbor-determined completion corpus

struct NeighborCorpusConfig {
  int n_samples = 256;
  int n_topics = 32;
  int min_neighbors = 2;
  int max_neighbors = 5;
  std::uint64_t seed = 0;
};

/// Star-shaped graphs sharing one topic. The root keeps only "<w1> <w2>" and
/// must be completed with the topic word, which appears in every neighbor's
/// text and nowhere in the root's own half. `with_graph=false` emits the same
/// roots as single-node graphs.
inline std::vector<TaskSample> make_neighbor_corpus(const NeighborCorpusConfig& cfg, bool with_graph,
                                                    std::uint64_t topic_seed = 7) {
  std::mt19937_64 topic_rng(topic_seed);
  const auto topics = word_pool(static_cast<std::size_t>(cfg.n_topics), topic_rng, 2);
  std::mt19937_64 rng(cfg.seed);
  std::vector<TaskSample> out;
  for (int s = 0; s < cfg.n_samples; ++s) {
    const auto& topic = pick(topics, rng);
    const auto root_half = pseudo_word(rng) + " " + pseudo_word(rng);
    const int m = cfg.min_neighbors + static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.max_neighbors - cfg.min_neighbors + 1));
    TaskSample t;
    t.task_kind = TaskKind::completion;
    t.graph.add_node(root_half);
    std::vector<std::string> nb;
    for (int j = 0; j < m; ++j) nb.push_back(pseudo_word(rng) + " " + pseudo_word(rng) + " " + topic);
    if (with_graph) {
      for (const auto& text : nb) {
        const int v = t.graph.add_node(text);
        t.graph.add_undirected(0, v, "cites");
      }
    }
    t.targets.push_back({0, "", topic, TaskKind::completion});
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural corpus

struct StructuralCorpusConfig {
  int n_graphs = 800;
  int min_nodes = 6;
  int max_nodes = 12;
  double extra_edge_prob = 0.15;
  int hops = 3;
  int max_per_hop = 3;
  int n_selected = 3;
  EdgeMode edge_mode = EdgeMode::double_;
  std::uint64_t seed = 0;
};

/// Random connected graph: a random tree plus independent extra edges.
inline TAG random_connected_graph(int n, double extra_p, std::mt19937_64& rng) {
  TAG g;
  for (int i = 0; i < n; ++i) g.add_node(pseudo_word(rng, 1));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 1; i < n; ++i) {
    const int p = static_cast<int>(rng() % static_cast<std::uint64_t>(i));
    g.add_undirected(p, i, "");
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (!g.has_arc(i, j) && unif(rng) < extra_p) g.add_undirected(i, j, "");
    }
  }
  return g;
}

/// Random graphs cut down by the k-hop sampler, each labelled with
/// shortest-path and common-neighbor questions for n_selected nodes.
inline std::vector<TaskSample> make_structural_corpus(const StructuralCorpusConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<TaskSample> out;
  while (out.size() < static_cast<std::size_t>(cfg.n_graphs)) {
    const int n = cfg.min_nodes + static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.max_nodes - cfg.min_nodes + 1));
    const TAG g = random_connected_graph(n, cfg.extra_edge_prob, rng);
    const auto sub = sample_node_subgraph(g, 0, {cfg.hops, cfg.max_per_hop, rng()});
    if (sub.graph.size() < 2 || static_cast<int>(sub.graph.size()) > cfg.max_nodes) continue;
    PretrainConfig pc;
    pc.n_selected = cfg.n_selected;
    pc.rng_seed = rng();
    pc.structural_edge_mode = cfg.edge_mode;
    out.push_back(make_structural_tasks(sub.graph, pc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prompt-dependent labelling corpus

struct LookupCorpusConfig {
  int n_samples = 512;
  int n_labels = 6;
  int pool_size = 48;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& lookup_labels() {
  static const std::vector<std::string> labels{"red", "blue", "green", "gold", "pink", "gray", "teal", "brown"};
  return labels;
}

/// One content node holding a keyword, and a prompt naming one of n_labels
/// labels. The answer "<label> <keyword>" is generated at the content node,
/// so it can follow the prompt only when the prompt's text reaches that node:
/// with single edges the content node never sees the prompt and the label is
/// a guess.
inline std::vector<TaskSample> make_lookup_corpus(const LookupCorpusConfig& cfg, EdgeMode mode,
                                                  std::uint64_t pool_seed = 11) {
  if (cfg.n_labels < 2 || cfg.n_labels > static_cast<int>(lookup_labels().size()) || cfg.pool_size < 1) {
    throw std::invalid_argument("lookup corpus: n_labels must be in 2..8 and pool_size >= 1");
  }
  std::mt19937_64 pool_rng(pool_seed);
  const auto pool = word_pool(static_cast<std::size_t>(cfg.pool_size), pool_rng, 2);
  std::mt19937_64 rng(cfg.seed);
  std::vector<TaskSample> out;
  for (int s = 0; s < cfg.n_samples; ++s) {
    TaskSample t;
    t.task_kind = TaskKind::downstream;
    t.graph.add_node(pool[rng() % pool.size()]);
    const auto& label = lookup_labels()[rng() % static_cast<std::uint64_t>(cfg.n_labels)];
    const std::string q = "Label the node " + label + ".";
    attach_prompt_node(t.graph, {0}, q, mode);
    t.targets.push_back({0, q, label + " " + t.graph.node(0).text, TaskKind::downstream});
    out.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conversations

/// k rounds of templated question/answer pairs about pseudo-word entities.
inline Conversation random_conversation(int k, std::mt19937_64& rng) {
  Conversation c;
  for (int r = 0; r < k; ++r) {
    const auto a = pseudo_word(rng), b = pseudo_word(rng);
    c.rounds.push_back({"What does " + a + " relate to?", a + " relates to " + b + "."});
  }
  return c;
}

}  // namespace gofa
