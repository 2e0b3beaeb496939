#include <gtest/gtest.h>

#include <set>

#include "gofa/corpus.hpp"
#include "gofa/eval.hpp"

using namespace gofa;

TEST(Corpus, WordPoolDistinct) {
  std::mt19937_64 rng(1);
  const auto pool = word_pool(200, rng);
  EXPECT_EQ(std::set<std::string>(pool.begin(), pool.end()).size(), 200u);
}

TEST(Corpus, CitationGraphIsHomophilousAndDeterministic) {
  CitationConfig cfg;
  cfg.seed = 3;
  const auto g = make_citation_graph(cfg);
  EXPECT_EQ(g.size(), 200u);
  EXPECT_NO_THROW(g.validate());
  auto topic = [&](int v) { return whitespace_tokens(g.node(v).text).back(); };
  std::size_t same = 0;
  for (const auto& e : g.edges()) {
    EXPECT_EQ(e.text, "cites");
    EXPECT_TRUE(g.has_arc(e.dst, e.src));
    same += topic(e.src) == topic(e.dst);
  }
  EXPECT_GT(static_cast<double>(same) / static_cast<double>(g.edges().size()), 0.8);
  EXPECT_EQ(serialize_tag(g), serialize_tag(make_citation_graph(cfg)));
  cfg.n_nodes = 1;
  EXPECT_THROW(make_citation_graph(cfg), std::invalid_argument);
}

TEST(Corpus, CitationSubgraphsGiveTenTargets) {
  CitationConfig cfg;
  cfg.seed = 4;
  const auto g = make_citation_graph(cfg);
  PretrainConfig pc;
  for (int root = 0; root < 20; ++root) {
    const auto sub = sample_node_subgraph(g, root, {2, 5, static_cast<std::uint64_t>(root)});
    if (sub.graph.content_count() < 4) continue;
    pc.rng_seed = static_cast<std::uint64_t>(root);
    EXPECT_EQ(make_pretrain_sample(sub.graph, pc).targets.size(), 10u);
  }
}

TEST(Corpus, NeighborCorpusTopicOnlyInNeighbors) {
  NeighborCorpusConfig cfg;
  cfg.n_samples = 100;
  const auto with = make_neighbor_corpus(cfg, true);
  const auto without = make_neighbor_corpus(cfg, false);
  ASSERT_EQ(with.size(), 100u);
  for (std::size_t i = 0; i < with.size(); ++i) {
    const auto& s = with[i];
    const auto& topic = s.targets.at(0).target_text;
    EXPECT_EQ(s.targets[0].nog, 0);
    EXPECT_EQ(s.graph.node(0).text.find(topic), std::string::npos);
    const auto n = s.graph.size() - 1;
    EXPECT_GE(n, static_cast<std::size_t>(cfg.min_neighbors));
    EXPECT_LE(n, static_cast<std::size_t>(cfg.max_neighbors));
    for (std::size_t v = 1; v <= n; ++v) {
      EXPECT_EQ(whitespace_tokens(s.graph.node(static_cast<int>(v)).text).back(), topic);
      EXPECT_TRUE(s.graph.has_arc(static_cast<int>(v), 0));
    }
    EXPECT_EQ(without[i].graph.size(), 1u);
    EXPECT_EQ(without[i].graph.node(0).text, s.graph.node(0).text);
    EXPECT_EQ(without[i].targets[0].target_text, topic);
  }
}

TEST(Corpus, StructuralCorpusLabelsVerifyAgainstOracle) {
  StructuralCorpusConfig cfg;
  cfg.n_graphs = 60;
  const auto data = make_structural_corpus(cfg);
  ASSERT_EQ(data.size(), 60u);
  for (const auto& s : data) {
    TAG content;
    for (const auto& n : s.graph.nodes()) {
      if (n.kind == NodeKind::content) content.add_node(n.text);
    }
    EXPECT_LE(content.size(), static_cast<std::size_t>(cfg.max_nodes));
    for (const auto& e : s.graph.edges()) {
      if (s.graph.node(e.src).kind == NodeKind::content && s.graph.node(e.dst).kind == NodeKind::content) {
        content.add_arc(e.src, e.dst, e.text);
      }
    }
    for (std::size_t v = 0; v < content.size(); ++v) {
      content.node(static_cast<int>(v)).node_id_tag = s.graph.node(static_cast<int>(v)).node_id_tag;
    }
    for (const auto& t : s.targets) {
      const auto& prompt = s.graph.node(t.nog);
      EXPECT_EQ(prompt.kind, NodeKind::prompt);
      const auto keys = detail::node_keys(t.prompt);
      ASSERT_GE(keys.size(), 2u);
      int other = -1;
      for (std::size_t v = 0; v < content.size(); ++v) {
        if (order_key(content, static_cast<int>(v)) == keys[1]) other = static_cast<int>(v);
      }
      ASSERT_GE(other, 1);
      EXPECT_TRUE(s.graph.has_arc(t.nog, other));
      EXPECT_TRUE(s.graph.has_arc(other, t.nog));
      if (t.kind == TaskKind::spd) {
        const auto ps = all_shortest_paths(content, 0, other);
        EXPECT_EQ(parse_spd_answer(t.target_text), spd_oracle(content, ps));
        EXPECT_LE(*ps.distance, cfg.hops);
      } else {
        EXPECT_EQ(parse_cn_answer(t.target_text), cn_oracle(content, common_neighbors(content, 0, other)));
      }
    }
  }
}

TEST(Corpus, LookupCorpusWiring) {
  LookupCorpusConfig cfg;
  cfg.n_samples = 200;
  cfg.n_labels = 4;
  const auto single = make_lookup_corpus(cfg, EdgeMode::single);
  const auto dbl = make_lookup_corpus(cfg, EdgeMode::double_);
  std::set<std::string> labels, words;
  for (std::size_t i = 0; i < single.size(); ++i) {
    const auto& s = single[i];
    const auto& t = s.targets.at(0);
    ASSERT_EQ(s.graph.size(), 2u);
    EXPECT_EQ(t.nog, 0);
    EXPECT_EQ(s.graph.node(1).kind, NodeKind::prompt);
    EXPECT_EQ(s.graph.node(1).text, t.prompt);
    EXPECT_TRUE(s.graph.has_arc(0, 1));
    EXPECT_FALSE(s.graph.has_arc(1, 0));
    EXPECT_TRUE(dbl[i].graph.has_arc(1, 0));
    EXPECT_EQ(dbl[i].targets[0].target_text, t.target_text);
    const auto sp = t.target_text.find(' ');
    ASSERT_NE(sp, std::string::npos);
    const auto label = t.target_text.substr(0, sp);
    EXPECT_EQ(t.target_text.substr(sp + 1), s.graph.node(0).text);
    EXPECT_NE(t.prompt.find(label), std::string::npos);
    labels.insert(label);
    words.insert(s.graph.node(0).text);
  }
  EXPECT_EQ(labels.size(), 4u);
  EXPECT_GT(words.size(), 30u);
  cfg.n_labels = 9;
  EXPECT_THROW(make_lookup_corpus(cfg, EdgeMode::single), std::invalid_argument);
}

TEST(Corpus, ConversationsFeedQaChains) {
  std::mt19937_64 rng(5);
  const auto c = random_conversation(4, rng);
  ASSERT_EQ(c.rounds.size(), 4u);
  EXPECT_EQ(make_qa_chain_graphs(c).size(), 3u);
}
