#pragma once

// Exact shortest-path and common-neighbour computations over the undirected
// content view of a graph. These label the structural tasks and double as
// reference answers in evaluation.

#include <algorithm>
#include <cstdio>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "gofa/sampler.hpp"
#include "gofa/tag.hpp"

namespace gofa {

inline constexpr std::size_t kMaxPaths = 64;

struct PathSet {
  std::optional<int> distance;  // empty when unreachable
  std::vector<std::vector<int>> paths;
  bool truncated = false;

  bool reachable() const { return distance.has_value(); }
  friend bool operator==(const PathSet&, const PathSet&) = default;
};

/// Ordering key of a node: its ID tag, or a zero-padded index when untagged.
inline std::string order_key(const TAG& g, int v) {
  const auto& n = g.node(v);
  if (n.node_id_tag) return *n.node_id_tag;
  char buf[32];
  std::snprintf(buf, sizeof buf, "#%010d", v);
  return buf;
}

inline bool path_less(const TAG& g, const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                      [&](int x, int y) { return order_key(g, x) < order_key(g, y); });
}

namespace detail {
inline void require_content(const TAG& g, int v, const char* op) {
  g.check_index(v);
  if (g.node(v).kind != NodeKind::content) {
    throw GraphError(std::string(op) + ": node " + std::to_string(v) + " is not a content node");
  }
}

inline std::vector<int> bfs_distances(const std::vector<std::vector<int>>& adj, int from) {
  std::vector<int> dist(adj.size(), -1);
  std::deque<int> queue{from};
  dist[static_cast<std::size_t>(from)] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (dist[static_cast<std::size_t>(v)] < 0) {
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}
}  // namespace detail

/// BFS layering from both endpoints, then a walk of the shortest-path DAG in
/// tag order, so paths come out already sorted. At most kMaxPaths are kept.
inline PathSet all_shortest_paths(const TAG& g, int src, int dst) {
  detail::require_content(g, src, "all_shortest_paths");
  detail::require_content(g, dst, "all_shortest_paths");
  PathSet out;
  const auto adj = undirected_neighbors(g);
  const auto from_src = detail::bfs_distances(adj, src);
  const int d = from_src[static_cast<std::size_t>(dst)];
  if (d < 0) return out;
  out.distance = d;
  const auto to_dst = detail::bfs_distances(adj, dst);
  std::vector<std::vector<int>> next(g.size());
  for (std::size_t u = 0; u < g.size(); ++u) {
    for (int w : adj[u]) {
      const auto wi = static_cast<std::size_t>(w);
      if (from_src[wi] == from_src[u] + 1 && to_dst[wi] >= 0 && to_dst[wi] == to_dst[u] - 1) next[u].push_back(w);
    }
    std::sort(next[u].begin(), next[u].end(), [&](int a, int b) { return order_key(g, a) < order_key(g, b); });
  }
  std::vector<int> path{src};
  auto walk = [&](auto&& self, int u) -> bool {
    if (u == dst) {
      if (out.paths.size() == kMaxPaths) {
        out.truncated = true;
        return false;
      }
      out.paths.push_back(path);
      return true;
    }
    for (int w : next[static_cast<std::size_t>(u)]) {
      path.push_back(w);
      const bool go_on = self(self, w);
      path.pop_back();
      if (!go_on) return false;
    }
    return true;
  };
  walk(walk, src);
  return out;
}

/// Nodes adjacent to both u and v, sorted by ID tag.
inline std::vector<int> common_neighbors(const TAG& g, int u, int v) {
  detail::require_content(g, u, "common_neighbors");
  detail::require_content(g, v, "common_neighbors");
  if (u == v) throw GraphError("common_neighbors: both endpoints are node " + std::to_string(u));
  const auto adj = undirected_neighbors(g);
  std::vector<int> out;
  std::set_intersection(adj[static_cast<std::size_t>(u)].begin(), adj[static_cast<std::size_t>(u)].end(),
                        adj[static_cast<std::size_t>(v)].begin(), adj[static_cast<std::size_t>(v)].end(),
                        std::back_inserter(out));
  std::sort(out.begin(), out.end(), [&](int a, int b) { return order_key(g, a) < order_key(g, b); });
  return out;
}

}  // namespace gofa
