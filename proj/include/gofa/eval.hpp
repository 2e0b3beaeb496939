#pragma once

// Metrics: perplexity, normalized exact-match accuracy, numeric extraction
// with RMSE, structural answer parsing, and per-layer representation change.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gofa/model.hpp"
#include "gofa/structure.hpp"
#include "gofa/taskgen.hpp"

namespace gofa {

// ---------------------------------------------------------------------------
// Answer matching

/// Lowercase, collapse whitespace runs to one space, strip punctuation and
/// whitespace at both ends.
inline std::string normalize_label(const std::string& s) {
  std::string out;
  bool space = false;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(c));
  }
  std::size_t b = 0, e = out.size();
  auto strip = [](unsigned char c) { return std::ispunct(c) || std::isspace(c); };
  while (b < e && strip(static_cast<unsigned char>(out[b]))) ++b;
  while (e > b && strip(static_cast<unsigned char>(out[e - 1]))) --e;
  return out.substr(b, e - b);
}

/// Normalized label contained in the normalized generation. With candidates,
/// any other candidate also contained makes the answer ambiguous, hence wrong.
inline bool match_answer(const std::string& generated, const std::string& label,
                         const std::optional<std::vector<std::string>>& candidates = std::nullopt) {
  const auto g = normalize_label(generated);
  const auto l = normalize_label(label);
  if (l.empty() || g.find(l) == std::string::npos) return false;
  if (candidates) {
    for (const auto& c : *candidates) {
      const auto n = normalize_label(c);
      if (n.empty() || n == l) continue;
      if (g.find(n) != std::string::npos) return false;
    }
  }
  return true;
}

/// First decimal numeral with optional sign and fractional part.
inline std::optional<double> extract_number(const std::string& generated) {
  static const std::regex re(R"([-+]?(?:\d+(?:\.\d+)?|\.\d+))");
  std::smatch m;
  if (!std::regex_search(generated, m, re)) return std::nullopt;
  return std::stod(m.str());
}

inline double rmse(const std::vector<double>& errors) {
  if (errors.empty()) return std::nan("");
  double s = 0;
  for (double e : errors) s += e * e;
  return std::sqrt(s / static_cast<double>(errors.size()));
}

/// Population standard deviation; 1 when fewer than two values or constant.
inline double label_std(const std::vector<double>& values) {
  if (values.size() < 2) return 1.0;
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double s = 0;
  for (double v : values) s += (v - mean) * (v - mean);
  const double sd = std::sqrt(s / static_cast<double>(values.size()));
  return sd > 0 ? sd : 1.0;
}

// ---------------------------------------------------------------------------
// Structural answers

struct SpdAnswer {
  std::optional<int> distance;  // empty: "not connected"
  std::vector<std::vector<std::string>> paths;
  friend bool operator==(const SpdAnswer&, const SpdAnswer&) = default;
};

struct CnAnswer {
  int count = 0;
  std::vector<std::string> nodes;
  friend bool operator==(const CnAnswer&, const CnAnswer&) = default;
};

inline SpdAnswer spd_oracle(const TAG& g, const PathSet& ps) {
  SpdAnswer a;
  a.distance = ps.distance;
  for (const auto& p : ps.paths) {
    std::vector<std::string> keys;
    for (int v : p) keys.push_back(order_key(g, v));
    a.paths.push_back(std::move(keys));
  }
  return a;
}

inline CnAnswer cn_oracle(const TAG& g, const std::vector<int>& cn) {
  CnAnswer a;
  a.count = static_cast<int>(cn.size());
  for (int v : cn) a.nodes.push_back(order_key(g, v));
  return a;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_on(const std::string& s, const std::string& sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find(sep, pos);
    out.push_back(trim(s.substr(pos, next == std::string::npos ? std::string::npos : next - pos)));
    if (next == std::string::npos) break;
    pos = next + sep.size();
  }
  return out;
}

/// Node keys in order of appearance: "[NODEID.X]" tags or "#0000000042" indices.
inline std::vector<std::string> node_keys(const std::string& s) {
  static const std::regex re(R"(\[NODEID\.[A-Z]+\]|#\d{10})");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back(it->str());
  }
  return out;
}

}  // namespace detail

/// Parses the shortest-path answer grammar; nothing when it does not fit.
inline std::optional<SpdAnswer> parse_spd_answer(const std::string& text) {
  const auto t = detail::trim(text);
  if (t == templates::kNotConnected) return SpdAnswer{};
  static const std::regex re(R"(^The shortest path distance is (\d+)\. Shortest paths: (.*)\.$)");
  std::smatch m;
  if (!std::regex_match(t, m, re)) return std::nullopt;
  SpdAnswer a;
  a.distance = std::stoi(m[1].str());
  for (const auto& path : detail::split_on(m[2].str(), ";")) {
    std::vector<std::string> keys;
    for (const auto& node : detail::split_on(path, "->")) {
      const auto k = detail::node_keys(node);
      if (k.size() != 1 || k[0] != node) return std::nullopt;
      keys.push_back(k[0]);
    }
    a.paths.push_back(std::move(keys));
  }
  return a;
}

inline std::optional<CnAnswer> parse_cn_answer(const std::string& text) {
  const auto t = detail::trim(text);
  if (t == templates::kNoCommonNeighbors) return CnAnswer{};
  static const std::regex one(R"(^There is 1 common neighbor between two nodes, including (.*)\.$)");
  static const std::regex many(R"(^There are (\d+) common neighbors between two nodes, including (.*)\.$)");
  std::smatch m;
  CnAnswer a;
  std::string list;
  if (std::regex_match(t, m, one)) {
    a.count = 1;
    list = m[1].str();
  } else if (std::regex_match(t, m, many)) {
    a.count = std::stoi(m[1].str());
    list = m[2].str();
  } else {
    return std::nullopt;
  }
  for (const auto& node : detail::split_on(list, ";")) {
    const auto k = detail::node_keys(node);
    if (k.size() != 1 || k[0] != node) return std::nullopt;
    a.nodes.push_back(k[0]);
  }
  return a;
}

struct StructuralScore {
  std::optional<double> distance_error;  // empty: miss
  bool path_set_exact = false;
  std::optional<double> cn_count_error;  // empty: miss
  bool cn_set_exact = false;
  bool parsed = false;  // the generation fits the answer grammar
};

/// Distance from the grammar when it parses, otherwise from the first number
/// in the text. Unreachable pairs only score when the generation says so.
inline StructuralScore score_structural(const std::string& generated, const SpdAnswer& oracle) {
  StructuralScore s;
  const auto parsed = parse_spd_answer(generated);
  s.parsed = parsed.has_value();
  if (parsed) {
    s.path_set_exact = *parsed == oracle;
    if (parsed->distance && oracle.distance) {
      s.distance_error = std::abs(*parsed->distance - *oracle.distance);
    } else if (!parsed->distance && !oracle.distance) {
      s.distance_error = 0.0;
    }
    return s;
  }
  if (const auto n = extract_number(generated); n && oracle.distance) {
    s.distance_error = std::abs(*n - *oracle.distance);
  }
  return s;
}

inline StructuralScore score_structural(const std::string& generated, const CnAnswer& oracle) {
  StructuralScore s;
  const auto parsed = parse_cn_answer(generated);
  s.parsed = parsed.has_value();
  if (parsed) {
    s.cn_set_exact = *parsed == oracle;
    s.cn_count_error = std::abs(parsed->count - oracle.count);
    return s;
  }
  if (const auto n = extract_number(generated)) s.cn_count_error = std::abs(*n - oracle.count);
  return s;
}

// ---------------------------------------------------------------------------
// Model-level metrics

/// Per-sample NLL sums, computed one sample at a time so that results do not
/// depend on how samples are grouped.
template <typename T>
TargetStats target_stats(const BasicGofaModel<T>& model, const std::vector<TaskSample>& samples,
                         const EncodeOptions& opt = {}) {
  BasicNoGradGuard<T> guard;
  TargetStats total;
  for (const auto& s : samples) {
    if (s.targets.empty()) continue;
    TargetStats st;
    model.forward_batch({&s}, opt, &st);
    total.nll_sum += st.nll_sum;
    total.tokens += st.tokens;
    total.targets += st.targets;
  }
  return total;
}

/// exp(mean per-token NLL over every target token); nothing for an empty set.
template <typename T>
std::optional<double> perplexity(const BasicGofaModel<T>& model, const std::vector<TaskSample>& samples,
                                 const EncodeOptions& opt = {}) {
  const auto st = target_stats(model, samples, opt);
  if (st.tokens == 0) return std::nullopt;
  return std::exp(st.nll_sum / static_cast<double>(st.tokens));
}

/// Mean representation change ratio of each GNN layer over the first n samples.
template <typename T>
std::vector<double> layer_delta_profile(const BasicGofaModel<T>& model, const std::vector<TaskSample>& samples,
                                        std::size_t n = 100) {
  if (model.gnn_layers().empty()) throw std::invalid_argument("layer_delta_profile: model has no GNN layers");
  BasicNoGradGuard<T> guard;
  std::vector<double> sum(model.gnn_layers().size(), 0.0);
  const std::size_t m = std::min(n, samples.size());
  for (std::size_t i = 0; i < m; ++i) {
    const auto enc = model.encode(samples[i].graph, {.use_gnn = true, .capture_ratios = true});
    for (std::size_t l = 0; l < sum.size(); ++l) sum[l] += static_cast<double>(enc.change_ratios[l].at(0));
  }
  for (auto& v : sum) v = m ? v / static_cast<double>(m) : 0.0;
  return sum;
}

// ---------------------------------------------------------------------------
// Reports

struct Metric {
  std::optional<double> value;
  std::string reason;  // why the value is undefined
};

struct Transcript {
  std::string prompt, generated, label;
  bool correct = false;
  std::string kind;
  std::string note;
};

struct EvalReport {
  std::map<std::string, Metric> metrics;
  std::vector<double> delta_profile;
  std::vector<Transcript> transcripts;

  void set(const std::string& name, std::optional<double> v, const std::string& reason = "") {
    if (v && !std::isfinite(*v)) {
      metrics[name] = {std::nullopt, "non-finite"};
    } else {
      metrics[name] = {v, v ? "" : reason};
    }
  }
  std::optional<double> get(const std::string& name) const {
    auto it = metrics.find(name);
    return it == metrics.end() ? std::nullopt : it->second.value;
  }
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [k, v] : r.metrics) {
    if (v.value) {
      m[k] = {{"value", *v.value}};
    } else {
      m[k] = {{"value", nullptr}, {"undefined", v.reason}};
    }
  }
  return {{"metrics", m}, {"delta_profile", r.delta_profile}, {"n_transcripts", r.transcripts.size()}};
}

inline std::string transcripts_jsonl(const EvalReport& r) {
  std::string out;
  for (const auto& t : r.transcripts) {
    nlohmann::json j{{"prompt", t.prompt}, {"generated", t.generated}, {"label", t.label}, {"correct", t.correct}};
    if (!t.kind.empty()) j["kind"] = t.kind;
    if (!t.note.empty()) j["note"] = t.note;
    out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
  }
  return out;
}

inline std::string report_table(const EvalReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "metric" << "value\n";
  for (const auto& [k, v] : r.metrics) {
    os << std::setw(24) << k;
    if (v.value) {
      os << std::setprecision(6) << *v.value << '\n';
    } else {
      os << "undefined (" << v.reason << ")\n";
    }
  }
  for (std::size_t l = 0; l < r.delta_profile.size(); ++l) {
    os << std::setw(24) << ("delta.gnn" + std::to_string(l)) << std::setprecision(6) << r.delta_profile[l] << '\n';
  }
  return os.str();
}

struct EvalOptions {
  EncodeOptions encode;
  GenerateOptions generate{.max_new_tokens = 96};
  std::optional<std::vector<std::string>> candidates;
  std::optional<double> spd_miss_penalty;  // default: std of the reference distances
  std::optional<double> cn_miss_penalty;   // default: std of the reference counts
  std::size_t delta_samples = 100;
  bool generate_answers = true;
  int shards = 1;
};

namespace detail {

struct TargetOutcome {
  Transcript transcript;
  TaskKind kind{};
  std::optional<double> spd_truth, cn_truth;
  std::optional<double> spd_error, cn_error;
  bool scored_accuracy = false;
};

template <typename T>
std::vector<TargetOutcome> run_sample(const BasicGofaModel<T>& model, const TaskSample& s, const EvalOptions& opt) {
  std::vector<TargetOutcome> out;
  const auto enc = model.encode(s.graph, opt.encode);
  for (const auto& t : s.targets) {
    TargetOutcome o;
    o.kind = t.kind;
    o.transcript.prompt = t.prompt.empty() ? s.graph.node(t.nog).text : t.prompt;
    o.transcript.label = t.target_text;
    o.transcript.kind = to_string(t.kind);
    o.transcript.generated = model.generate(enc.memory(0, t.nog), opt.generate);
    const auto& gen = o.transcript.generated;
    if (t.kind == TaskKind::spd) {
      const auto oracle = parse_spd_answer(t.target_text);
      if (!oracle) throw std::invalid_argument("reference answer does not fit the path grammar: " + t.target_text);
      if (oracle->distance) o.spd_truth = *oracle->distance;
      const auto sc = score_structural(gen, *oracle);
      o.spd_error = sc.distance_error;
      o.transcript.correct = sc.path_set_exact;
      if (!sc.parsed) o.transcript.note = "unparseable";
    } else if (t.kind == TaskKind::cn) {
      const auto oracle = parse_cn_answer(t.target_text);
      if (!oracle) throw std::invalid_argument("reference answer does not fit the neighbor grammar: " + t.target_text);
      o.cn_truth = oracle->count;
      const auto sc = score_structural(gen, *oracle);
      o.cn_error = sc.cn_count_error;
      o.transcript.correct = sc.cn_set_exact;
      if (!sc.parsed) o.transcript.note = "unparseable";
    } else {
      o.scored_accuracy = true;
      o.transcript.correct = match_answer(gen, t.target_text, opt.candidates);
      if (!o.transcript.correct && match_answer(gen, t.target_text)) o.transcript.note = "ambiguous";
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace detail

/// Full evaluation. Samples are split into `shards` contiguous ranges run on
/// separate threads; every metric is assembled in sample order, so the
/// report does not depend on the shard count.
template <typename T>
EvalReport evaluate(const BasicGofaModel<T>& model, const std::vector<TaskSample>& samples, const EvalOptions& opt = {}) {
  EvalReport rep;
  const std::size_t n = samples.size();
  const std::size_t shards = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(opt.shards, 1)), 1, std::max<std::size_t>(n, 1));
  std::vector<TargetStats> stats(n);
  std::vector<std::vector<detail::TargetOutcome>> outcomes(n);
  std::vector<std::exception_ptr> errors(shards);
  auto work = [&](std::size_t sh) {
    try {
      BasicNoGradGuard<T> guard;
      for (std::size_t i = sh * n / shards; i < (sh + 1) * n / shards; ++i) {
        if (samples[i].targets.empty()) continue;
        model.forward_batch({&samples[i]}, opt.encode, &stats[i]);
        if (opt.generate_answers) outcomes[i] = detail::run_sample(model, samples[i], opt);
      }
    } catch (...) {
      errors[sh] = std::current_exception();
    }
  };
  if (shards == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t sh = 0; sh < shards; ++sh) pool.emplace_back(work, sh);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  double nll = 0;
  std::size_t tokens = 0;
  for (const auto& st : stats) {
    nll += st.nll_sum;
    tokens += st.tokens;
  }
  if (tokens) {
    rep.set("perplexity", std::exp(nll / static_cast<double>(tokens)));
  } else {
    rep.set("perplexity", std::nullopt, "no target tokens");
  }

  if (opt.generate_answers) {
    std::size_t acc_n = 0, acc_ok = 0;
    std::vector<double> spd_truth, cn_truth;
    std::vector<std::optional<double>> spd_err, cn_err;
    for (auto& per : outcomes) {
      for (auto& o : per) {
        if (o.scored_accuracy) {
          ++acc_n;
          acc_ok += o.transcript.correct ? 1 : 0;
        }
        if (o.kind == TaskKind::spd) {
          if (o.spd_truth) spd_truth.push_back(*o.spd_truth);
          if (o.spd_truth || o.spd_error) spd_err.push_back(o.spd_error);
        }
        if (o.kind == TaskKind::cn) {
          cn_truth.push_back(*o.cn_truth);
          cn_err.push_back(o.cn_error);
        }
        rep.transcripts.push_back(std::move(o.transcript));
      }
    }
    if (acc_n) {
      rep.set("accuracy", static_cast<double>(acc_ok) / static_cast<double>(acc_n));
    } else {
      rep.set("accuracy", std::nullopt, "no accuracy targets");
    }
    auto finish = [&](const std::string& name, const std::vector<double>& truth,
                      const std::vector<std::optional<double>>& err, std::optional<double> penalty) {
      if (err.empty()) {
        rep.set(name + "_rmse", std::nullopt, "no " + name + " targets");
        return;
      }
      const double pen = penalty.value_or(label_std(truth));
      std::vector<double> e;
      std::size_t misses = 0;
      for (const auto& x : err) {
        e.push_back(x ? *x : pen);
        misses += x ? 0 : 1;
      }
      rep.set(name + "_rmse", rmse(e));
      rep.set(name + "_miss_penalty", pen);
      rep.set(name + "_miss_rate", static_cast<double>(misses) / static_cast<double>(err.size()));
    };
    finish("spd", spd_truth, spd_err, opt.spd_miss_penalty);
    finish("cn", cn_truth, cn_err, opt.cn_miss_penalty);
  }

  if (!model.gnn_layers().empty() && opt.encode.use_gnn && opt.delta_samples > 0 && n > 0) {
    rep.delta_profile = layer_delta_profile(model, samples, opt.delta_samples);
    for (std::size_t l = 0; l < rep.delta_profile.size(); ++l) {
      rep.set("delta." + std::to_string(l), rep.delta_profile[l]);
    }
  }
  return rep;
}

}  // namespace gofa
