#pragma once

// Run configuration: one JSON document with sections per pipeline stage,
// command-line "path=value" overrides, and strict key checking.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gofa/compressor.hpp"
#include "gofa/corpus.hpp"
#include "gofa/sampler.hpp"
#include "gofa/taskgen.hpp"
#include "gofa/trainer.hpp"

namespace gofa {

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Library config structs

inline void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = {{"hops", c.hops}, {"max_per_hop", c.max_per_hop}, {"seed", c.rng_seed}};
}
inline void from_json(const nlohmann::json& j, SamplerConfig& c) {
  detail::check_keys(j, "sampler", {"hops", "max_per_hop", "seed"});
  detail::read(j, "hops", c.hops);
  detail::read(j, "max_per_hop", c.max_per_hop);
  detail::read(j, "seed", c.rng_seed);
}

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"n_selected", c.n_selected},
       {"split_fraction", c.split_fraction},
       {"seed", c.rng_seed},
       {"structural_edge_mode", to_string(c.structural_edge_mode)}};
}
inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  detail::check_keys(j, "pretrain", {"n_selected", "split_fraction", "seed", "structural_edge_mode"});
  detail::read(j, "n_selected", c.n_selected);
  detail::read(j, "split_fraction", c.split_fraction);
  detail::read(j, "seed", c.rng_seed);
  if (j.contains("structural_edge_mode")) c.structural_edge_mode = parse_edge_mode(j.at("structural_edge_mode"));
}

inline void to_json(nlohmann::json& j, const CitationConfig& c) {
  j = {{"n_nodes", c.n_nodes}, {"n_topics", c.n_topics}, {"avg_degree", c.avg_degree},
       {"homophily", c.homophily}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, CitationConfig& c) {
  detail::check_keys(j, "citation", {"n_nodes", "n_topics", "avg_degree", "homophily", "seed"});
  detail::read(j, "n_nodes", c.n_nodes);
  detail::read(j, "n_topics", c.n_topics);
  detail::read(j, "avg_degree", c.avg_degree);
  detail::read(j, "homophily", c.homophily);
  detail::read(j, "seed", c.seed);
}

inline void to_json(nlohmann::json& j, const NeighborCorpusConfig& c) {
  j = {{"n_topics", c.n_topics}, {"min_neighbors", c.min_neighbors}, {"max_neighbors", c.max_neighbors}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, NeighborCorpusConfig& c) {
  detail::check_keys(j, "neighbor", {"n_topics", "min_neighbors", "max_neighbors", "seed"});
  detail::read(j, "seed", c.seed);
  detail::read(j, "n_topics", c.n_topics);
  detail::read(j, "min_neighbors", c.min_neighbors);
  detail::read(j, "max_neighbors", c.max_neighbors);
}

inline void to_json(nlohmann::json& j, const StructuralCorpusConfig& c) {
  j = {{"min_nodes", c.min_nodes}, {"max_nodes", c.max_nodes}, {"extra_edge_prob", c.extra_edge_prob},
       {"hops", c.hops}, {"max_per_hop", c.max_per_hop}, {"n_selected", c.n_selected}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, StructuralCorpusConfig& c) {
  detail::check_keys(j, "structural", {"min_nodes", "max_nodes", "extra_edge_prob", "hops", "max_per_hop", "n_selected", "seed"});
  detail::read(j, "seed", c.seed);
  detail::read(j, "min_nodes", c.min_nodes);
  detail::read(j, "max_nodes", c.max_nodes);
  detail::read(j, "extra_edge_prob", c.extra_edge_prob);
  detail::read(j, "hops", c.hops);
  detail::read(j, "max_per_hop", c.max_per_hop);
  detail::read(j, "n_selected", c.n_selected);
}

inline void to_json(nlohmann::json& j, const LookupCorpusConfig& c) {
  j = {{"n_labels", c.n_labels}, {"pool_size", c.pool_size}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, LookupCorpusConfig& c) {
  detail::check_keys(j, "lookup", {"n_labels", "pool_size", "seed"});
  detail::read(j, "seed", c.seed);
  detail::read(j, "n_labels", c.n_labels);
  detail::read(j, "pool_size", c.pool_size);
}

// ---------------------------------------------------------------------------
// Run config sections

/// What gen-corpus produces. `kind` selects the generator:
///   pretrain   – citation graph, sampled subgraphs, full task recipe, plus QA chains
///   neighbor   – neighbor-determined completion
///   structural – shortest-path and common-neighbor questions
///   lookup     – prompt-dependent labelling of a content node
struct CorpusSpec {
  std::string kind = "pretrain";
  int n_samples = 64;
  double test_fraction = 0.2;
  EdgeMode edge_mode = EdgeMode::double_;
  bool with_graph = true;
  int qa_conversations = 16;
  int qa_rounds = 4;
  CitationConfig citation;
  SamplerConfig sampler;
  PretrainConfig pretrain;
  NeighborCorpusConfig neighbor;
  StructuralCorpusConfig structural;
  LookupCorpusConfig lookup;

  void validate() const {
    static const std::set<std::string> kinds{"pretrain", "neighbor", "structural", "lookup"};
    if (!kinds.count(kind)) throw ConfigError("corpus: unknown kind '" + kind + "'");
    if (n_samples < 1) throw ConfigError("corpus: n_samples must be >= 1");
    if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("corpus: test_fraction must be in [0,1)");
    if (qa_conversations < 0 || qa_rounds < 2) throw ConfigError("corpus: qa_conversations >= 0 and qa_rounds >= 2");
    try {
      citation.validate();
      sampler.validate();
      pretrain.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (neighbor.min_neighbors < 1 || neighbor.max_neighbors < neighbor.min_neighbors) {
      throw ConfigError("corpus: neighbor counts must satisfy 1 <= min <= max");
    }
    if (structural.min_nodes < 2 || structural.max_nodes < structural.min_nodes) {
      throw ConfigError("corpus: structural node counts must satisfy 2 <= min <= max");
    }
    if (lookup.n_labels < 2 || lookup.n_labels > static_cast<int>(lookup_labels().size()) || lookup.pool_size < 1) {
      throw ConfigError("corpus: lookup needs n_labels in 2..8 and pool_size >= 1");
    }
  }
};

inline void to_json(nlohmann::json& j, const CorpusSpec& c) {
  j = {{"kind", c.kind},
       {"n_samples", c.n_samples},
       {"test_fraction", c.test_fraction},
       {"edge_mode", to_string(c.edge_mode)},
       {"with_graph", c.with_graph},
       {"qa_conversations", c.qa_conversations},
       {"qa_rounds", c.qa_rounds},
       {"citation", c.citation},
       {"sampler", c.sampler},
       {"pretrain", c.pretrain},
       {"neighbor", c.neighbor},
       {"structural", c.structural},
       {"lookup", c.lookup}};
}
inline void from_json(const nlohmann::json& j, CorpusSpec& c) {
  detail::check_keys(j, "corpus", {"kind", "n_samples", "test_fraction", "edge_mode", "with_graph", "qa_conversations",
                                   "qa_rounds", "citation", "sampler", "pretrain", "neighbor", "structural", "lookup"});
  detail::read(j, "kind", c.kind);
  detail::read(j, "n_samples", c.n_samples);
  detail::read(j, "test_fraction", c.test_fraction);
  if (j.contains("edge_mode")) c.edge_mode = parse_edge_mode(j.at("edge_mode"));
  detail::read(j, "with_graph", c.with_graph);
  detail::read(j, "qa_conversations", c.qa_conversations);
  detail::read(j, "qa_rounds", c.qa_rounds);
  detail::read(j, "citation", c.citation);
  detail::read(j, "sampler", c.sampler);
  detail::read(j, "pretrain", c.pretrain);
  detail::read(j, "neighbor", c.neighbor);
  detail::read(j, "structural", c.structural);
  detail::read(j, "lookup", c.lookup);
}

struct EvalSettings {
  std::string checkpoint;
  std::string data;
  bool use_gnn = true;
  int max_new_tokens = 96;
  std::vector<std::string> candidates;
  std::string candidates_file;
  std::optional<double> spd_miss_penalty;
  std::optional<double> cn_miss_penalty;
  int delta_samples = 100;
  int shards = 1;
  bool generate = true;

  void validate() const {
    if (max_new_tokens < 1) throw ConfigError("eval: max_new_tokens must be >= 1");
    if (delta_samples < 0) throw ConfigError("eval: delta_samples must be >= 0");
    if (shards < 1) throw ConfigError("eval: shards must be >= 1");
    if (spd_miss_penalty && !(*spd_miss_penalty >= 0)) throw ConfigError("eval: spd_miss_penalty must be >= 0");
    if (cn_miss_penalty && !(*cn_miss_penalty >= 0)) throw ConfigError("eval: cn_miss_penalty must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const EvalSettings& c) {
  j = {{"checkpoint", c.checkpoint},
       {"data", c.data},
       {"use_gnn", c.use_gnn},
       {"max_new_tokens", c.max_new_tokens},
       {"candidates", c.candidates},
       {"candidates_file", c.candidates_file},
       {"spd_miss_penalty", c.spd_miss_penalty ? nlohmann::json(*c.spd_miss_penalty) : nlohmann::json()},
       {"cn_miss_penalty", c.cn_miss_penalty ? nlohmann::json(*c.cn_miss_penalty) : nlohmann::json()},
       {"delta_samples", c.delta_samples},
       {"shards", c.shards},
       {"generate", c.generate}};
}
inline void from_json(const nlohmann::json& j, EvalSettings& c) {
  detail::check_keys(j, "eval", {"checkpoint", "data", "use_gnn", "max_new_tokens", "candidates", "candidates_file",
                                 "spd_miss_penalty", "cn_miss_penalty", "delta_samples", "shards", "generate"});
  detail::read(j, "checkpoint", c.checkpoint);
  detail::read(j, "data", c.data);
  detail::read(j, "use_gnn", c.use_gnn);
  detail::read(j, "max_new_tokens", c.max_new_tokens);
  detail::read(j, "candidates", c.candidates);
  detail::read(j, "candidates_file", c.candidates_file);
  if (j.contains("spd_miss_penalty") && !j.at("spd_miss_penalty").is_null()) c.spd_miss_penalty = j.at("spd_miss_penalty").get<double>();
  if (j.contains("cn_miss_penalty") && !j.at("cn_miss_penalty").is_null()) c.cn_miss_penalty = j.at("cn_miss_penalty").get<double>();
  detail::read(j, "delta_samples", c.delta_samples);
  detail::read(j, "shards", c.shards);
  detail::read(j, "generate", c.generate);
}

/// One arm of the edge ablation: a checkpoint and the test set wired its way.
struct AblationArm {
  std::string checkpoint;
  std::string data;
};

inline void to_json(nlohmann::json& j, const AblationArm& a) { j = {{"checkpoint", a.checkpoint}, {"data", a.data}}; }
inline void from_json(const nlohmann::json& j, AblationArm& a) {
  detail::check_keys(j, "ablate arm", {"checkpoint", "data"});
  detail::read(j, "checkpoint", a.checkpoint);
  detail::read(j, "data", a.data);
}

struct RunConfig {
  std::uint64_t seed = 0;
  CorpusSpec corpus;
  ModelConfig model;
  TrainConfig train;
  std::string train_data;       // JSONL of task samples
  std::string init_checkpoint;  // optional warm start (model parameters only)
  bool use_gnn = true;
  EvalSettings eval;
  AblationArm ablate_single, ablate_double;

  void validate() const {
    corpus.validate();
    model.validate();
    train.validate();
    eval.validate();
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed},
       {"corpus", c.corpus},
       {"model", c.model},
       {"train", c.train},
       {"train_data", c.train_data},
       {"init_checkpoint", c.init_checkpoint},
       {"use_gnn", c.use_gnn},
       {"eval", c.eval},
       {"ablate", {{"single", c.ablate_single}, {"double", c.ablate_double}}}};
}

/// Parses a run config. Sub-seeds that the document leaves unset are derived
/// from the global seed, so one number pins the whole run.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_keys(j, "config", {"seed", "corpus", "model", "train", "train_data", "init_checkpoint", "use_gnn",
                                   "eval", "ablate"});
  detail::read(j, "seed", c.seed);
  detail::read(j, "corpus", c.corpus);
  detail::read(j, "model", c.model);
  detail::read(j, "train", c.train);
  detail::read(j, "train_data", c.train_data);
  detail::read(j, "init_checkpoint", c.init_checkpoint);
  detail::read(j, "use_gnn", c.use_gnn);
  detail::read(j, "eval", c.eval);
  if (j.contains("ablate")) {
    const auto& a = j.at("ablate");
    detail::check_keys(a, "ablate", {"single", "double"});
    detail::read(a, "single", c.ablate_single);
    detail::read(a, "double", c.ablate_double);
  }
  auto has = [&](std::initializer_list<const char*> path) {
    const nlohmann::json* p = &j;
    for (const char* k : path) {
      if (!p->is_object() || !p->contains(k)) return false;
      p = &p->at(k);
    }
    return true;
  };
  const std::uint64_t s = c.seed;
  if (!has({"corpus", "citation", "seed"})) c.corpus.citation.seed = s;
  if (!has({"corpus", "sampler", "seed"})) c.corpus.sampler.rng_seed = s + 1;
  if (!has({"corpus", "pretrain", "seed"})) c.corpus.pretrain.rng_seed = s + 2;
  if (!has({"model", "init_seed"})) c.model.init_seed = s + 3;
  if (!has({"train", "seed"})) c.train.seed = s + 4;
  if (!has({"corpus", "neighbor", "seed"})) c.corpus.neighbor.seed = s + 5;
  if (!has({"corpus", "structural", "seed"})) c.corpus.structural.seed = s + 5;
  if (!has({"corpus", "lookup", "seed"})) c.corpus.lookup.seed = s + 5;
  return c;
}

/// Applies "a.b.c=value" to `j`. The value is read as JSON when it parses
/// and as a plain string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + assignment + "': '" + parts[i] + "' is not an object");
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw ConfigError("override '" + assignment + "': parent is not an object");
  (*node)[parts.back()] = value;
}

/// Reads the config file (empty path: all defaults), applies overrides, parses and validates.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  try {
    auto c = run_config_from_json(j);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace gofa
