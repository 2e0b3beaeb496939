#pragma once

// Self-supervised task construction: sentence completion, shortest-path and
// common-neighbour questions, QA chains, and downstream prompts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gofa/structure.hpp"
#include "gofa/tag.hpp"

namespace gofa {

struct PretrainConfig {
  int n_selected = 3;
  double split_fraction = 0.5;
  std::uint64_t rng_seed = 0;
  EdgeMode structural_edge_mode = EdgeMode::single;

  void validate() const {
    if (n_selected < 1) throw std::invalid_argument("pretrain: n_selected must be >= 1");
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw std::invalid_argument("pretrain: split_fraction must be in (0,1)");
  }
};

struct Conversation {
  std::vector<std::pair<std::string, std::string>> rounds;  // (question, answer)
};

// ---------------------------------------------------------------------------
// Prompt and answer templates

namespace templates {

inline std::string completion_question_root() { return "Complete the sentence of the target node."; }
inline std::string completion_question(const std::string& tag) { return "Complete the sentence of the node" + tag + "."; }

inline std::string spd_question(const std::string& root_tag, const std::string& tag) {
  return "Compute the shortest path distance between the target node " + root_tag + " and node " + tag +
         " and generate all shortest paths from the target node to the node " + tag +
         ". Please separate nodes in the path with ->. If multiple paths exist, generate all of them with an "
         "ascending order of node sequences and separate different paths with ;.";
}

inline std::string cn_question(const std::string& root_tag, const std::string& tag) {
  return "Is there any common neighbor between the target node " + root_tag + " and node " + tag +
         "? If it exist, please give the total number and list all common neighbors in ascending order of node, "
         "separate nodes with ;.";
}

inline constexpr const char* kNotConnected = "The two nodes are not connected.";
inline constexpr const char* kNoCommonNeighbors = "There are no common neighbors between two nodes.";

}  // namespace templates

/// "The shortest path distance is 2. Shortest paths: [NODEID.L] -> [NODEID.G] -> [NODEID.B]."
inline std::string render_spd_answer(const TAG& g, const PathSet& ps) {
  if (!ps.reachable()) return templates::kNotConnected;
  std::string out = "The shortest path distance is " + std::to_string(*ps.distance) + ". Shortest paths: ";
  for (std::size_t p = 0; p < ps.paths.size(); ++p) {
    if (p) out += "; ";
    for (std::size_t i = 0; i < ps.paths[p].size(); ++i) {
      if (i) out += " -> ";
      out += order_key(g, ps.paths[p][i]);
    }
  }
  return out + ".";
}

/// "There is 1 common neighbor between two nodes, including [NODEID.G]."
inline std::string render_cn_answer(const TAG& g, const std::vector<int>& cn) {
  if (cn.empty()) return templates::kNoCommonNeighbors;
  std::string out = cn.size() == 1 ? "There is 1 common neighbor between two nodes, including "
                                   : "There are " + std::to_string(cn.size()) +
                                         " common neighbors between two nodes, including ";
  for (std::size_t i = 0; i < cn.size(); ++i) {
    if (i) out += "; ";
    out += order_key(g, cn[i]);
  }
  return out + ".";
}

// ---------------------------------------------------------------------------
// Sentence splitting

inline std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

/// Splits on whitespace tokens; the first part gets ceil(n·fraction) tokens,
/// clamped so both parts are non-empty. Returns nothing for fewer than 2 tokens.
inline std::optional<std::pair<std::string, std::string>> split_text(const std::string& text, double fraction = 0.5) {
  const auto words = whitespace_tokens(text);
  if (words.size() < 2) return std::nullopt;
  auto first = static_cast<std::size_t>(std::ceil(static_cast<double>(words.size()) * fraction - 1e-12));
  first = std::clamp<std::size_t>(first, 1, words.size() - 1);
  auto join = [&](std::size_t b, std::size_t e) {
    std::string s;
    for (std::size_t i = b; i < e; ++i) {
      if (i > b) s += ' ';
      s += words[i];
    }
    return s;
  };
  return std::make_pair(join(0, first), join(first, words.size()));
}

// ---------------------------------------------------------------------------
// Task builders

namespace detail {

inline TAG ensure_tagged(const TAG& g, std::uint64_t seed) {
  for (const auto& n : g.nodes()) {
    if (n.kind == NodeKind::content && !n.node_id_tag) return assign_node_id_tags(g, seed);
  }
  return g;
}

/// Non-root content nodes in seeded random order.
inline std::vector<int> shuffled_candidates(const TAG& g, std::mt19937_64& rng) {
  std::vector<int> cand;
  for (const auto& n : g.nodes()) {
    if (n.kind == NodeKind::content && n.id != 0) cand.push_back(n.id);
  }
  std::shuffle(cand.begin(), cand.end(), rng);
  return cand;
}

inline void require_rooted(const TAG& g, std::size_t min_content, const char* op) {
  if (g.size() == 0 || g.node(0).kind != NodeKind::content || g.content_count() < min_content) {
    throw GraphError(std::string(op) + ": graph needs a content root at index 0 and at least " +
                     std::to_string(min_content) + " content nodes");
  }
}

/// Truncates each chosen node to its first half and attaches one completion
/// prompt per node. `order` lists candidates; the root (if splittable) comes
/// first and then up to n_selected others, skipping unsplittable nodes.
inline void add_completion_targets(TaskSample& s, const std::vector<int>& order, const PretrainConfig& cfg) {
  auto& g = s.graph;
  int others = 0;
  for (int v : order) {
    if (v != 0 && others >= cfg.n_selected) break;
    const auto& node = g.node(v);
    const auto parts = split_text(strip_tag(node), cfg.split_fraction);
    if (!parts) continue;
    const std::string tag = node.node_id_tag.value_or("");
    g.node(v).text = tag.empty() ? parts->first : with_tag(parts->first, tag);
    const std::string q = v == 0 ? templates::completion_question_root() : templates::completion_question(tag);
    const int p = attach_prompt_node(g, {v}, q, EdgeMode::single);
    s.targets.push_back({p, q, parts->second, TaskKind::completion});
    if (v != 0) ++others;
  }
  if (s.targets.empty()) throw GraphError("make_completion_tasks: no node has text long enough to split");
}

inline void add_structural_targets(TaskSample& s, const std::vector<int>& selected, const TAG& content,
                                   const PretrainConfig& cfg) {
  const std::string root_tag = order_key(content, 0);
  for (int v : selected) {
    const std::string tag = order_key(content, v);
    const auto ps = all_shortest_paths(content, 0, v);
    const std::string q_spd = templates::spd_question(root_tag, tag);
    const int p_spd = attach_prompt_node(s.graph, {0, v}, q_spd, cfg.structural_edge_mode);
    s.targets.push_back({p_spd, q_spd, render_spd_answer(content, ps), TaskKind::spd});
    const auto cn = common_neighbors(content, 0, v);
    const std::string q_cn = templates::cn_question(root_tag, tag);
    const int p_cn = attach_prompt_node(s.graph, {0, v}, q_cn, cfg.structural_edge_mode);
    s.targets.push_back({p_cn, q_cn, render_cn_answer(content, cn), TaskKind::cn});
  }
}

}  // namespace detail

/// Completion targets on the root and n_selected random nodes.
inline TaskSample make_completion_tasks(const TAG& graph, const PretrainConfig& cfg) {
  cfg.validate();
  detail::require_rooted(graph, 1, "make_completion_tasks");
  TaskSample s{detail::ensure_tagged(graph, cfg.rng_seed), {}, TaskKind::completion};
  std::mt19937_64 rng(cfg.rng_seed);
  std::vector<int> order{0};
  for (int v : detail::shuffled_candidates(s.graph, rng)) order.push_back(v);
  detail::add_completion_targets(s, order, cfg);
  return s;
}

/// Shortest-path and common-neighbour questions between the root and each of
/// n_selected random nodes.
inline TaskSample make_structural_tasks(const TAG& graph, const PretrainConfig& cfg) {
  cfg.validate();
  detail::require_rooted(graph, 2, "make_structural_tasks");
  TaskSample s{detail::ensure_tagged(graph, cfg.rng_seed), {}, TaskKind::spd};
  std::mt19937_64 rng(cfg.rng_seed);
  auto cand = detail::shuffled_candidates(s.graph, rng);
  if (cand.size() > static_cast<std::size_t>(cfg.n_selected)) cand.resize(static_cast<std::size_t>(cfg.n_selected));
  const TAG content = s.graph;
  detail::add_structural_targets(s, cand, content, cfg);
  return s;
}

/// The full pre-training recipe for one sampled graph: root completion plus,
/// for each selected node, a completion, a shortest-path and a common-neighbour
/// task (1 + 3·n targets when every selected node can be split).
inline TaskSample make_pretrain_sample(const TAG& graph, const PretrainConfig& cfg) {
  cfg.validate();
  detail::require_rooted(graph, 2, "make_pretrain_sample");
  TaskSample s{detail::ensure_tagged(graph, cfg.rng_seed), {}, TaskKind::completion};
  std::mt19937_64 rng(cfg.rng_seed);
  const auto cand = detail::shuffled_candidates(s.graph, rng);
  std::vector<int> selected;
  for (int v : cand) {
    if (selected.size() == static_cast<std::size_t>(cfg.n_selected)) break;
    if (split_text(strip_tag(s.graph.node(v)), cfg.split_fraction)) selected.push_back(v);
  }
  const TAG content = s.graph;
  std::vector<int> order{0};
  order.insert(order.end(), selected.begin(), selected.end());
  detail::add_completion_targets(s, order, cfg);
  detail::add_structural_targets(s, selected, content, cfg);
  return s;
}

/// One graph per prefix of the conversation: rounds 1..i form a forward chain
/// Q1→A1→…→Qi→Ai, and a prompt node holding question i+1 reads every chain node.
inline std::vector<TaskSample> make_qa_chain_graphs(const Conversation& conv) {
  std::vector<TaskSample> out;
  for (const auto& [q, a] : conv.rounds) {
    if (q.empty() || a.empty()) throw std::invalid_argument("make_qa_chain_graphs: empty question or answer");
  }
  for (std::size_t i = 1; i < conv.rounds.size(); ++i) {
    TaskSample s;
    s.task_kind = TaskKind::qa;
    std::vector<int> chain;
    for (std::size_t r = 0; r < i; ++r) {
      chain.push_back(s.graph.add_node(conv.rounds[r].first));
      chain.push_back(s.graph.add_node(conv.rounds[r].second));
    }
    for (std::size_t c = 0; c + 1 < chain.size(); ++c) s.graph.add_arc(chain[c], chain[c + 1]);
    const auto& [next_q, next_a] = conv.rounds[i];
    const int p = attach_prompt_node(s.graph, chain, next_q, EdgeMode::single);
    s.targets.push_back({p, next_q, next_a, TaskKind::qa});
    out.push_back(std::move(s));
  }
  return out;
}

/// Downstream question: one prompt node wired to `targets`, answered by `answer`.
inline TaskSample make_downstream_task(const TAG& graph, const std::vector<int>& targets, const std::string& question,
                                       const std::string& answer, EdgeMode mode) {
  TaskSample s{graph, {}, TaskKind::downstream};
  const int p = attach_prompt_node(s.graph, targets, question, mode);
  s.targets.push_back({p, question, answer, TaskKind::downstream});
  return s;
}

}  // namespace gofa
