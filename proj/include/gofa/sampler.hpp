#pragma once

// k-hop rooted subgraph extraction with per-hop caps.

#include <algorithm>
#include <cstdint>
#include <set>
#include <unordered_map>
#include <vector>

#include "gofa/tag.hpp"

namespace gofa {

struct SamplerConfig {
  int hops = 3;
  int max_per_hop = 5;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (hops < 0 || hops > 8) throw std::invalid_argument("sampler: hops must be in 0..8");
    if (max_per_hop < 1) throw std::invalid_argument("sampler: max_per_hop must be >= 1");
  }
};

struct Subgraph {
  TAG graph;
  std::vector<int> original;  // subgraph index -> source index
};

/// Undirected adjacency over content nodes; self-loops and prompt nodes excluded.
inline std::vector<std::vector<int>> undirected_neighbors(const TAG& g) {
  std::vector<std::set<int>> sets(g.size());
  for (const auto& e : g.edges()) {
    if (e.src == e.dst) continue;
    if (g.node(e.src).kind != NodeKind::content || g.node(e.dst).kind != NodeKind::content) continue;
    sets[static_cast<std::size_t>(e.src)].insert(e.dst);
    sets[static_cast<std::size_t>(e.dst)].insert(e.src);
  }
  std::vector<std::vector<int>> out(g.size());
  for (std::size_t i = 0; i < sets.size(); ++i) out[i].assign(sets[i].begin(), sets[i].end());
  return out;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Per-hop kept sets, root first. Each hop keeps the max_per_hop new nodes
/// with the smallest seeded priority, so a larger cap only adds nodes.
inline std::vector<std::vector<int>> bfs_hops(const TAG& g, const std::vector<std::vector<int>>& adj, int root,
                                              const SamplerConfig& cfg) {
  std::vector<std::vector<int>> hops{{root}};
  std::set<int> seen{root};
  for (int h = 1; h <= cfg.hops; ++h) {
    std::set<int> frontier;
    for (int u : hops.back()) {
      for (int v : adj[static_cast<std::size_t>(u)]) {
        if (!seen.count(v)) frontier.insert(v);
      }
    }
    if (frontier.empty()) break;
    std::vector<int> cand(frontier.begin(), frontier.end());
    auto prio = [&](int v) { return splitmix64(cfg.rng_seed * 0x100000001B3ULL ^ static_cast<std::uint64_t>(v)); };
    std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return prio(a) < prio(b); });
    if (cand.size() > static_cast<std::size_t>(cfg.max_per_hop)) cand.resize(static_cast<std::size_t>(cfg.max_per_hop));
    std::sort(cand.begin(), cand.end());
    for (int v : cand) seen.insert(v);
    hops.push_back(std::move(cand));
  }
  (void)g;
  return hops;
}

inline Subgraph induce(const TAG& g, const std::vector<int>& keep) {
  Subgraph out;
  std::unordered_map<int, int> remap;
  for (int v : keep) {
    if (remap.count(v)) continue;
    const auto& n = g.node(v);
    const int id = out.graph.add_node(n.text, n.kind);
    out.graph.node(id).node_id_tag = n.node_id_tag;
    remap.emplace(v, id);
    out.original.push_back(v);
  }
  for (const auto& e : g.edges()) {
    auto s = remap.find(e.src), d = remap.find(e.dst);
    if (s == remap.end() || d == remap.end()) continue;
    out.graph.add_arc(s->second, d->second, e.text);
  }
  return out;
}

inline void require_content_root(const TAG& g, int root) {
  g.check_index(root);
  if (g.node(root).kind != NodeKind::content) {
    throw GraphError("sampling root " + std::to_string(root) + " is a prompt node");
  }
}

}  // namespace detail

/// Induced subgraph over the root and up to max_per_hop new nodes per hop.
/// The root is index 0 of the result.
inline Subgraph sample_node_subgraph(const TAG& g, int root, const SamplerConfig& cfg) {
  cfg.validate();
  detail::require_content_root(g, root);
  const auto adj = undirected_neighbors(g);
  std::vector<int> keep;
  for (const auto& hop : detail::bfs_hops(g, adj, root, cfg)) keep.insert(keep.end(), hop.begin(), hop.end());
  return detail::induce(g, keep);
}

/// Union of the rooted subgraphs of u and v; u is index 0 and v index 1.
inline Subgraph sample_link_subgraph(const TAG& g, int u, int v, const SamplerConfig& cfg) {
  cfg.validate();
  detail::require_content_root(g, u);
  detail::require_content_root(g, v);
  if (u == v) throw GraphError("sample_link_subgraph: both roots are node " + std::to_string(u));
  const auto adj = undirected_neighbors(g);
  std::vector<int> keep{u, v};
  for (int root : {u, v}) {
    for (const auto& hop : detail::bfs_hops(g, adj, root, cfg)) keep.insert(keep.end(), hop.begin(), hop.end());
  }
  return detail::induce(g, keep);
}

}  // namespace gofa
