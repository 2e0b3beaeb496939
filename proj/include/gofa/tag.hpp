#pragma once

// Text-attributed graphs: directed arcs, text on every node and arc, optional
// node-ID tags, and virtual prompt nodes used as generation starting points.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace gofa {

struct GraphError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class NodeKind { content, prompt };
enum class EdgeMode { single, double_ };

inline const char* to_string(NodeKind k) { return k == NodeKind::prompt ? "prompt" : "content"; }
inline const char* to_string(EdgeMode m) { return m == EdgeMode::double_ ? "double" : "single"; }

inline EdgeMode parse_edge_mode(const std::string& s) {
  if (s == "single") return EdgeMode::single;
  if (s == "double") return EdgeMode::double_;
  throw std::invalid_argument("unknown edge mode '" + s + "' (expected single or double)");
}

struct NodeRecord {
  int id = 0;
  std::string text;
  std::optional<std::string> node_id_tag;
  NodeKind kind = NodeKind::content;

  friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

struct EdgeRecord {
  int src = 0;
  int dst = 0;
  std::string text;

  friend bool operator==(const EdgeRecord&, const EdgeRecord&) = default;
};

class TAG {
 public:
  int add_node(std::string text, NodeKind kind = NodeKind::content) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({id, std::move(text), std::nullopt, kind});
    return id;
  }

  /// Adds arc src→dst. A second arc with the same endpoints and text is rejected.
  void add_arc(int src, int dst, std::string text = {}) {
    check_index(src);
    check_index(dst);
    if (has_arc(src, dst, text)) {
      throw GraphError("duplicate arc " + std::to_string(src) + "->" + std::to_string(dst));
    }
    edges_.push_back({src, dst, std::move(text)});
  }

  /// Undirected source edges are stored as two arcs.
  void add_undirected(int a, int b, const std::string& text = {}) {
    add_arc(a, b, text);
    if (a != b) add_arc(b, a, text);
  }

  bool has_arc(int src, int dst, const std::string& text) const {
    return std::any_of(edges_.begin(), edges_.end(),
                       [&](const EdgeRecord& e) { return e.src == src && e.dst == dst && e.text == text; });
  }
  bool has_arc(int src, int dst) const {
    return std::any_of(edges_.begin(), edges_.end(), [&](const EdgeRecord& e) { return e.src == src && e.dst == dst; });
  }

  const std::vector<NodeRecord>& nodes() const { return nodes_; }
  const std::vector<EdgeRecord>& edges() const { return edges_; }
  std::vector<NodeRecord>& mutable_nodes() { return nodes_; }
  const NodeRecord& node(int i) const {
    check_index(i);
    return nodes_[static_cast<std::size_t>(i)];
  }
  NodeRecord& node(int i) {
    check_index(i);
    return nodes_[static_cast<std::size_t>(i)];
  }
  std::size_t size() const { return nodes_.size(); }
  bool directed() const { return true; }

  std::size_t content_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const NodeRecord& n) { return n.kind == NodeKind::content; }));
  }

  void check_index(int i) const {
    if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size()) {
      throw GraphError("node index " + std::to_string(i) + " out of range (graph has " +
                       std::to_string(nodes_.size()) + " nodes)");
    }
  }

  /// Throws GraphError when an invariant is broken.
  void validate() const {
    std::set<std::string> tags;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].id != static_cast<int>(i)) throw GraphError("node " + std::to_string(i) + " has id " + std::to_string(nodes_[i].id));
      if (nodes_[i].node_id_tag && !tags.insert(*nodes_[i].node_id_tag).second) {
        throw GraphError("duplicate node id tag " + *nodes_[i].node_id_tag);
      }
    }
    std::set<std::tuple<int, int, std::string>> seen;
    for (const auto& e : edges_) {
      check_index(e.src);
      check_index(e.dst);
      if (!seen.emplace(e.src, e.dst, e.text).second) {
        throw GraphError("duplicate arc " + std::to_string(e.src) + "->" + std::to_string(e.dst));
      }
      if (nodes_[static_cast<std::size_t>(e.src)].kind == NodeKind::prompt &&
          nodes_[static_cast<std::size_t>(e.dst)].kind == NodeKind::prompt) {
        throw GraphError("arc between prompt nodes " + std::to_string(e.src) + "->" + std::to_string(e.dst));
      }
    }
  }

  friend bool operator==(const TAG&, const TAG&) = default;

 private:
  std::vector<NodeRecord> nodes_;
  std::vector<EdgeRecord> edges_;
};

/// Appends a prompt node wired to `targets`: target→prompt arcs, plus
/// prompt→target arcs in double mode. Prompt arcs carry empty text.
inline int attach_prompt_node(TAG& graph, const std::vector<int>& targets, std::string prompt_text, EdgeMode mode) {
  if (targets.empty()) throw GraphError("attach_prompt_node: no target nodes");
  for (int t : targets) {
    graph.check_index(t);
    if (graph.node(t).kind == NodeKind::prompt) {
      throw GraphError("attach_prompt_node: target " + std::to_string(t) + " is itself a prompt node");
    }
  }
  const int p = graph.add_node(std::move(prompt_text), NodeKind::prompt);
  std::set<int> done;
  for (int t : targets) {
    if (!done.insert(t).second) continue;
    graph.add_arc(t, p);
  }
  if (mode == EdgeMode::double_) {
    for (int t : done) graph.add_arc(p, t);
  }
  return p;
}

/// Bijective base-26 label: 0→A, 25→Z, 26→AA, ...
inline std::string base26_label(std::size_t i) {
  std::string s;
  ++i;
  while (i > 0) {
    --i;
    s.insert(s.begin(), static_cast<char>('A' + (i % 26)));
    i /= 26;
  }
  return s;
}

inline std::string node_id_tag(const std::string& label) { return "[NODEID." + label + "]"; }

/// Text of a node with its ID tag suffix removed.
inline std::string strip_tag(const NodeRecord& n) {
  if (!n.node_id_tag) return n.text;
  const std::string& tag = *n.node_id_tag;
  if (n.text == tag) return {};
  const std::string suffix = " " + tag;
  if (n.text.size() >= suffix.size() && n.text.compare(n.text.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return n.text.substr(0, n.text.size() - suffix.size());
  }
  return n.text;
}

inline std::string with_tag(const std::string& text, const std::string& tag) {
  return text.empty() ? tag : text + " " + tag;
}

/// Suffixes every content node's text with a unique "[NODEID.X]" tag. Labels
/// are drawn without replacement from a seed-shuffled base-26 pool, so a tag
/// says nothing about node position.
inline TAG assign_node_id_tags(const TAG& graph, std::uint64_t seed) {
  const std::size_t n = graph.content_count();
  if (n == 0) throw GraphError("assign_node_id_tags: graph has no content nodes");
  std::size_t pool = 26, width = 26;
  while (pool < n) {
    width *= 26;
    pool += width;
  }
  std::vector<std::size_t> order(pool);
  for (std::size_t i = 0; i < pool; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  TAG out = graph;
  std::size_t next = 0;
  for (auto& node : out.mutable_nodes()) {
    if (node.kind != NodeKind::content) continue;
    const std::string base = strip_tag(node);
    const std::string tag = node_id_tag(base26_label(order[next++]));
    node.text = with_tag(base, tag);
    node.node_id_tag = tag;
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines serialization

inline nlohmann::json node_to_json(const NodeRecord& n) {
  nlohmann::json j{{"id", n.id}, {"text", n.text}, {"kind", to_string(n.kind)}};
  j["tag"] = n.node_id_tag ? nlohmann::json(*n.node_id_tag) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json edge_to_json(const EdgeRecord& e) { return {{"src", e.src}, {"dst", e.dst}, {"text", e.text}}; }

/// Structured form used when a graph is embedded in another record.
inline nlohmann::json tag_to_json(const TAG& g) {
  nlohmann::json nodes = nlohmann::json::array(), edges = nlohmann::json::array();
  for (const auto& n : g.nodes()) nodes.push_back(node_to_json(n));
  for (const auto& e : g.edges()) edges.push_back(edge_to_json(e));
  return {{"version", 1}, {"directed", true}, {"nodes", nodes}, {"edges", edges}};
}

namespace detail {
inline NodeRecord node_from_json(const nlohmann::json& j, std::size_t line) {
  NodeRecord n;
  try {
    n.id = j.at("id").get<int>();
    n.text = j.at("text").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "content") {
      n.kind = NodeKind::content;
    } else if (kind == "prompt") {
      n.kind = NodeKind::prompt;
    } else {
      throw ParseError(line, "unknown node kind '" + kind + "'");
    }
    if (j.contains("tag") && !j.at("tag").is_null()) n.node_id_tag = j.at("tag").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, std::string("bad node record: ") + e.what());
  }
  return n;
}

inline EdgeRecord edge_from_json(const nlohmann::json& j, std::size_t line) {
  try {
    return {j.at("src").get<int>(), j.at("dst").get<int>(), j.at("text").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line, std::string("bad edge record: ") + e.what());
  }
}

inline void append_node(TAG& g, NodeRecord n, std::size_t line) {
  if (n.id != static_cast<int>(g.size())) {
    throw ParseError(line, "node id " + std::to_string(n.id) + " out of order (expected " + std::to_string(g.size()) + ")");
  }
  const int id = g.add_node(n.text, n.kind);
  g.node(id).node_id_tag = n.node_id_tag;
}

inline void append_edge(TAG& g, EdgeRecord e, std::size_t line) {
  try {
    g.add_arc(e.src, e.dst, e.text);
  } catch (const GraphError& err) {
    throw ParseError(line, err.what());
  }
}
}  // namespace detail

inline TAG tag_from_json(const nlohmann::json& j) {
  TAG g;
  try {
    for (const auto& n : j.at("nodes")) detail::append_node(g, detail::node_from_json(n, 1), 1);
    for (const auto& e : j.at("edges")) detail::append_edge(g, detail::edge_from_json(e, 1), 1);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("bad graph object: ") + e.what());
  }
  return g;
}

/// Header line, then one {"n": ...} line per node and one {"e": ...} line per arc.
inline std::string serialize_tag(const TAG& g) {
  std::string out = nlohmann::json{{"version", 1}, {"directed", true}}.dump() + "\n";
  for (const auto& n : g.nodes()) out += nlohmann::json{{"n", node_to_json(n)}}.dump() + "\n";
  for (const auto& e : g.edges()) out += nlohmann::json{{"e", edge_to_json(e)}}.dump() + "\n";
  return out;
}

inline TAG parse_tag(const std::string& doc) {
  std::istringstream is(doc);
  std::string line;
  std::size_t lineno = 0;
  TAG g;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(lineno, "record is not an object");
    if (!header) {
      if (!j.contains("version") || !j.contains("directed")) throw ParseError(lineno, "missing header record");
      if (j.at("version") != 1) throw ParseError(lineno, "unsupported version");
      header = true;
      continue;
    }
    if (j.size() != 1) throw ParseError(lineno, "record must have exactly one key");
    if (j.contains("n")) {
      detail::append_node(g, detail::node_from_json(j.at("n"), lineno), lineno);
    } else if (j.contains("e")) {
      detail::append_edge(g, detail::edge_from_json(j.at("e"), lineno), lineno);
    } else {
      throw ParseError(lineno, "unknown record type");
    }
  }
  if (!header) throw ParseError(lineno == 0 ? 1 : lineno, "empty document (no header)");
  try {
    g.validate();
  } catch (const GraphError& e) {
    throw ParseError(lineno, e.what());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Task samples

enum class TaskKind { completion, spd, cn, qa, downstream };

inline const char* to_string(TaskKind k) {
  switch (k) {
    case TaskKind::completion:
      return "completion";
    case TaskKind::spd:
      return "spd";
    case TaskKind::cn:
      return "cn";
    case TaskKind::qa:
      return "qa";
    case TaskKind::downstream:
      return "downstream";
  }
  return "downstream";
}

inline TaskKind parse_task_kind(const std::string& s) {
  for (auto k : {TaskKind::completion, TaskKind::spd, TaskKind::cn, TaskKind::qa, TaskKind::downstream}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

struct GenerationTarget {
  int nog = 0;
  std::string prompt;  // text of the prompt node (empty when the NOG is a content node)
  std::string target_text;
  TaskKind kind = TaskKind::downstream;  // per-target kind; samples may mix kinds

  friend bool operator==(const GenerationTarget&, const GenerationTarget&) = default;
};

struct TaskSample {
  TAG graph;
  std::vector<GenerationTarget> targets;
  TaskKind task_kind = TaskKind::downstream;

  void validate(bool training = true) const {
    graph.validate();
    std::set<int> nogs;
    for (const auto& t : targets) {
      graph.check_index(t.nog);
      if (!nogs.insert(t.nog).second) throw GraphError("two targets share NOG " + std::to_string(t.nog));
      if (training && t.target_text.empty()) throw GraphError("empty target text for NOG " + std::to_string(t.nog));
    }
  }

  friend bool operator==(const TaskSample&, const TaskSample&) = default;
};

inline nlohmann::json sample_to_json(const TaskSample& s) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : s.targets) {
    targets.push_back({{"nog", t.nog}, {"prompt", t.prompt}, {"y", t.target_text}, {"kind", to_string(t.kind)}});
  }
  return {{"graph", tag_to_json(s.graph)}, {"targets", targets}, {"kind", to_string(s.task_kind)}};
}

inline TaskSample sample_from_json(const nlohmann::json& j) {
  TaskSample s;
  try {
    s.graph = tag_from_json(j.at("graph"));
    s.task_kind = parse_task_kind(j.at("kind").get<std::string>());
    for (const auto& t : j.at("targets")) {
      GenerationTarget g;
      g.nog = t.at("nog").get<int>();
      g.prompt = t.value("prompt", std::string{});
      g.target_text = t.at("y").get<std::string>();
      g.kind = t.contains("kind") ? parse_task_kind(t.at("kind").get<std::string>()) : s.task_kind;
      s.targets.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("bad task sample: ") + e.what());
  }
  return s;
}

}  // namespace gofa
