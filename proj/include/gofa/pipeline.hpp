#pragma once

// End-to-end plumbing: corpus generation from a CorpusSpec, JSONL corpora,
// and the metadata every command leaves in its output directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gofa/config.hpp"
#include "gofa/corpus.hpp"
#include "gofa/sampler.hpp"
#include "gofa/structure.hpp"
#include "gofa/taskgen.hpp"

#ifndef GOFA_VERSION
#define GOFA_VERSION "0.1.0"
#endif
#ifndef GOFA_BUILD_ID
#define GOFA_BUILD_ID "unknown"
#endif

namespace gofa {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void write_jsonl(const std::filesystem::path& path, const std::vector<TaskSample>& samples) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& s : samples) os << sample_to_json(s).dump() << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<TaskSample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<TaskSample> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

/// Content nodes of a task graph with the arcs among them; prompts are
/// appended after content, so indices are unchanged.
inline TAG content_part(const TAG& g) {
  TAG c;
  for (const auto& n : g.nodes()) {
    if (n.kind != NodeKind::content) continue;
    const int v = c.add_node(n.text);
    c.node(v).node_id_tag = n.node_id_tag;
  }
  for (const auto& e : g.edges()) {
    if (static_cast<std::size_t>(std::max(e.src, e.dst)) < c.size() && g.node(e.src).kind == NodeKind::content &&
        g.node(e.dst).kind == NodeKind::content) {
      c.add_arc(e.src, e.dst, e.text);
    }
  }
  return c;
}

/// Structural targets whose label differs from a fresh oracle computation.
/// The queried node is the prompt's non-root content in-neighbor.
inline std::size_t structural_label_mismatches(const TaskSample& s) {
  const TAG content = content_part(s.graph);
  std::size_t bad = 0;
  for (const auto& t : s.targets) {
    if (t.kind != TaskKind::spd && t.kind != TaskKind::cn) continue;
    int other = -1;
    for (const auto& e : s.graph.edges()) {
      if (e.dst == t.nog && e.src != 0 && static_cast<std::size_t>(e.src) < content.size()) other = e.src;
    }
    if (other < 0) {
      ++bad;
      continue;
    }
    const std::string want = t.kind == TaskKind::spd ? render_spd_answer(content, all_shortest_paths(content, 0, other))
                                                     : render_cn_answer(content, common_neighbors(content, 0, other));
    bad += want != t.target_text;
  }
  return bad;
}

struct GeneratedCorpus {
  std::vector<TaskSample> train, test, qa;
  nlohmann::json summary;
};

namespace detail {

inline std::vector<TaskSample> pretrain_samples(const CorpusSpec& spec) {
  const TAG g = make_citation_graph(spec.citation);
  std::mt19937_64 rng(spec.sampler.rng_seed);
  std::vector<int> roots(g.size());
  for (std::size_t i = 0; i < roots.size(); ++i) roots[i] = static_cast<int>(i);
  std::shuffle(roots.begin(), roots.end(), rng);
  std::vector<TaskSample> out;
  for (std::size_t i = 0; out.size() < static_cast<std::size_t>(spec.n_samples) && i < 4 * roots.size() + 4 * spec.n_samples; ++i) {
    SamplerConfig sc = spec.sampler;
    sc.rng_seed = spec.sampler.rng_seed + i;
    const auto sub = sample_node_subgraph(g, roots[i % roots.size()], sc);
    if (sub.graph.content_count() < 2) continue;
    PretrainConfig pc = spec.pretrain;
    pc.rng_seed = spec.pretrain.rng_seed + i;
    try {
      out.push_back(make_pretrain_sample(sub.graph, pc));
    } catch (const GraphError&) {
      continue;
    }
  }
  return out;
}

}  // namespace detail

/// Builds the corpus a spec describes, split by test_fraction (the test part
/// is the tail), and re-verifies every structural label against the oracle.
inline GeneratedCorpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  GeneratedCorpus c;
  std::vector<TaskSample> all;
  if (spec.kind == "pretrain") {
    all = detail::pretrain_samples(spec);
    std::mt19937_64 rng(spec.pretrain.rng_seed ^ 0x51ED270B1ULL);
    for (int i = 0; i < spec.qa_conversations; ++i) {
      for (auto& s : make_qa_chain_graphs(random_conversation(spec.qa_rounds, rng))) c.qa.push_back(std::move(s));
    }
  } else if (spec.kind == "neighbor") {
    auto cfg = spec.neighbor;
    cfg.n_samples = spec.n_samples;
    all = make_neighbor_corpus(cfg, spec.with_graph);
  } else if (spec.kind == "structural") {
    auto cfg = spec.structural;
    cfg.n_graphs = spec.n_samples;
    cfg.edge_mode = spec.edge_mode;
    all = make_structural_corpus(cfg);
  } else {
    auto cfg = spec.lookup;
    cfg.n_samples = spec.n_samples;
    all = make_lookup_corpus(cfg, spec.edge_mode);
  }
  std::size_t mismatches = 0;
  std::map<std::string, std::size_t> per_kind;
  std::map<std::size_t, std::size_t> targets_per_graph;
  for (const auto& s : all) {
    mismatches += structural_label_mismatches(s);
    ++targets_per_graph[s.targets.size()];
    for (const auto& t : s.targets) ++per_kind[to_string(t.kind)];
  }
  if (mismatches) throw std::logic_error("generated " + std::to_string(mismatches) + " structural labels that disagree with the oracle");
  const auto n_test = static_cast<std::size_t>(static_cast<double>(all.size()) * spec.test_fraction);
  c.test.assign(all.end() - static_cast<std::ptrdiff_t>(n_test), all.end());
  all.resize(all.size() - n_test);
  c.train = std::move(all);
  nlohmann::json tpg = nlohmann::json::object();
  for (const auto& [k, v] : targets_per_graph) tpg[std::to_string(k)] = v;
  c.summary = {{"kind", spec.kind},        {"train_samples", c.train.size()}, {"test_samples", c.test.size()},
               {"qa_samples", c.qa.size()}, {"targets_by_kind", per_kind},    {"targets_per_graph", tpg},
               {"oracle_mismatches", mismatches}};
  return c;
}

/// {command, config echo, seed, version, build id} as run.json in `dir`.
inline void write_run_metadata(const std::filesystem::path& dir, const std::string& command, const RunConfig& cfg,
                               const nlohmann::json& extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  nlohmann::json j{{"command", command},
                   {"config", cfg},
                   {"seed", cfg.seed},
                   {"version", GOFA_VERSION},
                   {"build_id", GOFA_BUILD_ID}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream os(dir / "run.json");
  if (!os) throw IoError("cannot write " + (dir / "run.json").string());
  os << j.dump(2) << '\n';
}

}  // namespace gofa
