#include <gtest/gtest.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <regex>

#include "gofa/eval.hpp"
#include "model_util.hpp"

using namespace gofa;
using gofa::testing::set_gates;

namespace {

std::string reference_normalize(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  s = std::regex_replace(s, std::regex("\\s+"), " ");
  s = std::regex_replace(s, std::regex("^[[:punct:][:space:]]+"), "");
  s = std::regex_replace(s, std::regex("[[:punct:][:space:]]+$"), "");
  return s;
}

bool reference_match(const std::string& gen, const std::string& label, const std::vector<std::string>* cands) {
  const auto g = reference_normalize(gen), l = reference_normalize(label);
  if (l.empty() || g.find(l) == std::string::npos) return false;
  if (!cands) return true;
  return std::none_of(cands->begin(), cands->end(), [&](const std::string& c) {
    const auto n = reference_normalize(c);
    return !n.empty() && n != l && g.find(n) != std::string::npos;
  });
}

std::string jitter(const std::string& s, std::mt19937_64& rng) {
  std::string out;
  for (char c : s) {
    if (c == ' ') {
      out += std::string(1 + rng() % 3, rng() % 4 ? ' ' : '\t');
    } else {
      out += rng() % 2 ? static_cast<char>(std::toupper(static_cast<unsigned char>(c))) : c;
    }
  }
  return out;
}

ModelConfig small() {
  auto c = gofa::testing::tiny_config(41);
  c.d_model = 16;
  c.n_heads = 2;
  return c;
}

}  // namespace

TEST(Match, Examples) {
  EXPECT_TRUE(match_answer("the category is Neural Networks", "neural networks"));
  const std::vector<std::string> cands{"neural networks", "theory", "genetic algorithms"};
  EXPECT_TRUE(match_answer("the category is Neural Networks", "neural networks", cands));
  EXPECT_FALSE(match_answer("neural networks or theory", "neural networks", cands));
  EXPECT_FALSE(match_answer("theory", "neural networks", cands));
  EXPECT_FALSE(match_answer("anything", "  ...  "));
  EXPECT_TRUE(match_answer("It is: Theory.", "theory!"));
}

TEST(Match, NormalizeRules) {
  EXPECT_EQ(normalize_label("  Neural\t\tNETWORKS.  "), "neural networks");
  EXPECT_EQ(normalize_label("\"quoted\""), "quoted");
  EXPECT_EQ(normalize_label("a.b"), "a.b");
  EXPECT_EQ(normalize_label(""), "");
}

TEST(Match, FuzzAgainstReferenceMatcher) {
  std::mt19937_64 rng(1);
  const std::vector<std::string> labels{"neural networks", "theory", "case based", "rule learning",
                                        "probabilistic methods", "reinforcement learning", "genetic algorithms"};
  const std::vector<std::string> filler{"the answer is", "i think", "category:", "maybe", "it belongs to", "so", "."};
  int agree = 0, positives = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string gen;
    const int parts = 1 + static_cast<int>(rng() % 4);
    for (int p = 0; p < parts; ++p) {
      gen += (p ? " " : "") + (rng() % 2 ? labels[rng() % labels.size()] : filler[rng() % filler.size()]);
    }
    gen = jitter(gen, rng);
    if (rng() % 3 == 0) gen = "  " + gen + "!!";
    const auto& label = labels[rng() % labels.size()];
    const bool with = rng() % 2;
    const bool got = match_answer(gen, jitter(label, rng), with ? std::optional(labels) : std::nullopt);
    const bool want = reference_match(gen, label, with ? &labels : nullptr);
    agree += got == want;
    positives += want;
  }
  EXPECT_EQ(agree, 1000);
  EXPECT_GT(positives, 50);
}

TEST(Match, SymmetricUnderCaseAndOuterWhitespace) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const std::string gen = "answer: " + pseudo_word(rng) + " " + pseudo_word(rng);
    const std::string label = gen.substr(8);
    std::string upper = gen;
    for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    EXPECT_EQ(match_answer(gen, label), match_answer("  " + upper + "\n", " " + label + "  "));
    EXPECT_TRUE(match_answer(upper, label));
  }
}

TEST(Numbers, Extract) {
  EXPECT_EQ(extract_number("The shortest path distance is 2."), 2.0);
  EXPECT_FALSE(extract_number("no number here"));
  EXPECT_EQ(extract_number("rating 3.5 out of 5"), 3.5);
  EXPECT_EQ(extract_number("delta -0.25 units"), -0.25);
  EXPECT_EQ(extract_number("There are 12 common neighbors"), 12.0);
}

TEST(Numbers, RmseMatchesIndependentComputation) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3, 3);
  std::vector<double> pred, truth, err;
  for (int i = 0; i < 257; ++i) {
    pred.push_back(u(rng));
    truth.push_back(std::round(u(rng)));
    err.push_back(std::abs(pred.back() - truth.back()));
  }
  long double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  EXPECT_NEAR(rmse(err), static_cast<double>(std::sqrt(acc / pred.size())), 1e-12);
  EXPECT_TRUE(std::isnan(rmse({})));
  EXPECT_EQ(label_std({2.0}), 1.0);
  EXPECT_EQ(label_std({3.0, 3.0}), 1.0);
  EXPECT_NEAR(label_std({1.0, 3.0}), 1.0, 1e-15);
  EXPECT_NEAR(label_std({1.0, 2.0, 3.0, 4.0}), std::sqrt(1.25), 1e-15);
}

TEST(Structural, TemplateEchoScoresExact) {
  const std::string spd = "The shortest path distance is 2. Shortest paths: [NODEID.L] -> [NODEID.G] -> [NODEID.B].";
  const auto o = parse_spd_answer(spd);
  ASSERT_TRUE(o);
  EXPECT_EQ(o->distance, 2);
  ASSERT_EQ(o->paths.size(), 1u);
  EXPECT_EQ(o->paths[0], (std::vector<std::string>{"[NODEID.L]", "[NODEID.G]", "[NODEID.B]"}));
  auto s = score_structural(spd, *o);
  EXPECT_EQ(s.distance_error, 0.0);
  EXPECT_TRUE(s.path_set_exact);
  s = score_structural("The shortest path distance is 3. Shortest paths: [NODEID.L] -> [NODEID.B].", *o);
  EXPECT_EQ(s.distance_error, 1.0);
  EXPECT_FALSE(s.path_set_exact);
  s = score_structural("garbage 4 text", *o);
  EXPECT_FALSE(s.parsed);
  EXPECT_EQ(s.distance_error, 2.0);
  s = score_structural("garbage", *o);
  EXPECT_FALSE(s.distance_error);

  const std::string cn = "There are 2 common neighbors between two nodes, including [NODEID.C]; [NODEID.D].";
  const auto c = parse_cn_answer(cn);
  ASSERT_TRUE(c);
  EXPECT_EQ(c->count, 2);
  const auto sc = score_structural(cn, *c);
  EXPECT_EQ(sc.cn_count_error, 0.0);
  EXPECT_TRUE(sc.cn_set_exact);
  EXPECT_EQ(score_structural(templates::kNoCommonNeighbors, *c).cn_count_error, 2.0);
  EXPECT_EQ(parse_spd_answer(templates::kNotConnected)->distance, std::nullopt);
}

TEST(Structural, RenderParseRoundTripOnRandomGraphs) {
  std::mt19937_64 rng(4);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 12);
    TAG g;
    for (int i = 0; i < n; ++i) g.add_node(pseudo_word(rng));
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng() % 4 == 0) g.add_undirected(i, j);
      }
    }
    g = assign_node_id_tags(g, rng());
    for (int v = 1; v < n; ++v) {
      const auto ps = all_shortest_paths(g, 0, v);
      const auto spd_text = render_spd_answer(g, ps);
      const auto spd = spd_oracle(g, ps);
      ASSERT_EQ(parse_spd_answer(spd_text), spd) << spd_text;
      const auto s = score_structural(spd_text, spd);
      EXPECT_TRUE(s.path_set_exact);
      EXPECT_EQ(s.distance_error, 0.0);
      const auto cn = common_neighbors(g, 0, v);
      const auto cn_text = render_cn_answer(g, cn);
      ASSERT_EQ(parse_cn_answer(cn_text), cn_oracle(g, cn)) << cn_text;
      EXPECT_TRUE(score_structural(cn_text, cn_oracle(g, cn)).cn_set_exact);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Perplexity, UniformPredictorGivesVocabSize) {
  GofaModel m(small());
  for (auto& v : m.params().find("decoder.lm_head")->tensor.data()) v = 0;
  TAG g;
  g.add_node("abc");
  const std::vector<TaskSample> data{{g, {{0, "", "hello", TaskKind::completion}}, TaskKind::completion}};
  EXPECT_NEAR(*perplexity(m, data), 260.0, 1e-9);
  EXPECT_FALSE(perplexity(m, {}));
}

TEST(Perplexity, SingletonMatchesDecodeLoss) {
  GofaModel m(small());
  TAG g;
  g.add_node("some node");
  const std::vector<TaskSample> data{{g, {{0, "", "continuation", TaskKind::completion}}, TaskKind::completion}};
  NoGradGuard ng;
  const double l = m.decode_loss(m.encode(g).memory(0, 0), "continuation").item();
  EXPECT_NEAR(*perplexity(m, data), std::exp(l), 1e-9);
}

TEST(Delta, GateZeroProfileIsZeroAndDeterministic) {
  GofaModel m(small());
  NeighborCorpusConfig cc;
  cc.n_samples = 20;
  const auto data = make_neighbor_corpus(cc, true);
  const auto p = layer_delta_profile(m, data);
  ASSERT_EQ(p.size(), 2u);
  for (double v : p) EXPECT_EQ(v, 0.0);
  set_gates(m, 0.5);
  const auto a = layer_delta_profile(m, data), b = layer_delta_profile(m, data);
  for (std::size_t l = 0; l < a.size(); ++l) {
    EXPECT_GT(a[l], 0.0);
    EXPECT_NEAR(a[l], b[l], 1e-12);
  }
}

TEST(Evaluate, ShardInvariantReport) {
  GofaModel m(small());
  set_gates(m, 0.3);
  StructuralCorpusConfig sc;
  sc.n_graphs = 6;
  sc.max_nodes = 7;
  auto data = make_structural_corpus(sc);
  NeighborCorpusConfig nc;
  nc.n_samples = 5;
  for (auto& s : make_neighbor_corpus(nc, true)) data.push_back(s);
  EvalOptions opt;
  opt.generate.max_new_tokens = 12;
  const auto a = evaluate(m, data, opt);
  opt.shards = 4;
  const auto b = evaluate(m, data, opt);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(transcripts_jsonl(a), transcripts_jsonl(b));
  for (const char* k : {"perplexity", "accuracy", "spd_rmse", "cn_rmse", "delta.0", "delta.1"}) {
    EXPECT_TRUE(a.get(k)) << k;
  }
  // untrained output never parses, so every structural target falls back or misses
  EXPECT_EQ(a.transcripts.size(), 6u * 6u + 5u);
  const auto j = to_json(a);
  EXPECT_TRUE(j["metrics"]["spd_rmse"]["value"].is_number());
  EXPECT_FALSE(report_table(a).empty());
}

TEST(Evaluate, UndefinedMetricsCarryReasons) {
  GofaModel m(small());
  const auto rep = evaluate(m, {});
  EXPECT_FALSE(rep.get("perplexity"));
  EXPECT_EQ(rep.metrics.at("perplexity").reason, "no target tokens");
  EXPECT_TRUE(to_json(rep)["metrics"]["perplexity"]["value"].is_null());
}

TEST(Evaluate, MissPenaltyUsesLabelStd) {
  GofaModel m(small());
  StructuralCorpusConfig sc;
  sc.n_graphs = 4;
  sc.max_nodes = 7;
  const auto data = make_structural_corpus(sc);
  EvalOptions opt;
  opt.generate.max_new_tokens = 4;
  opt.delta_samples = 0;
  const auto rep = evaluate(m, data, opt);
  std::vector<double> truth;
  for (const auto& s : data) {
    for (const auto& t : s.targets) {
      if (t.kind == TaskKind::cn) truth.push_back(parse_cn_answer(t.target_text)->count);
    }
  }
  EXPECT_NEAR(*rep.get("cn_miss_penalty"), label_std(truth), 1e-15);
  opt.cn_miss_penalty = 7.0;
  EXPECT_EQ(*evaluate(m, data, opt).get("cn_miss_penalty"), 7.0);
}
