#include <gtest/gtest.h>

#include <random>
#include <set>

#include "gofa/tag.hpp"

using namespace gofa;

TEST(Tag, AttachSingle) {
  TAG g;
  g.add_node("a");
  g.add_node("b");
  g.add_undirected(0, 1);
  const int p = attach_prompt_node(g, {0}, "q", EdgeMode::single);
  EXPECT_EQ(p, 2);
  EXPECT_EQ(g.node(p).kind, NodeKind::prompt);
  EXPECT_TRUE(g.has_arc(0, 2));
  EXPECT_FALSE(g.has_arc(2, 0));
  EXPECT_EQ(g.edges().size(), 3u);
}

TEST(Tag, AttachDouble) {
  TAG g;
  for (int i = 0; i < 3; ++i) g.add_node("n");
  const int p = attach_prompt_node(g, {0, 1}, "q", EdgeMode::double_);
  EXPECT_EQ(p, 3);
  std::set<std::pair<int, int>> arcs;
  for (const auto& e : g.edges()) arcs.insert({e.src, e.dst});
  EXPECT_EQ(arcs, (std::set<std::pair<int, int>>{{0, 3}, {1, 3}, {3, 0}, {3, 1}}));
}

TEST(Tag, AttachGraphLevelConnectsAll) {
  TAG g;
  for (int i = 0; i < 4; ++i) g.add_node("n");
  const int p = attach_prompt_node(g, {0, 1, 2, 3}, "q", EdgeMode::single);
  for (int i = 0; i < 4; ++i) EXPECT_TRUE(g.has_arc(i, p));
}

TEST(Tag, AttachErrors) {
  TAG g;
  g.add_node("a");
  EXPECT_THROW(attach_prompt_node(g, {}, "q", EdgeMode::single), GraphError);
  try {
    attach_prompt_node(g, {5}, "q", EdgeMode::single);
    FAIL();
  } catch (const GraphError& e) {
    EXPECT_NE(std::string(e.what()).find('5'), std::string::npos);
  }
  const int p = attach_prompt_node(g, {0}, "q", EdgeMode::single);
  EXPECT_THROW(attach_prompt_node(g, {p}, "q2", EdgeMode::single), GraphError);
}

TEST(Tag, PromptNodesNeverAdjacent) {
  TAG g;
  for (int i = 0; i < 3; ++i) g.add_node("n");
  attach_prompt_node(g, {0, 1}, "a", EdgeMode::double_);
  attach_prompt_node(g, {1, 2}, "b", EdgeMode::double_);
  for (const auto& e : g.edges()) {
    EXPECT_FALSE(g.node(e.src).kind == NodeKind::prompt && g.node(e.dst).kind == NodeKind::prompt);
  }
  EXPECT_NO_THROW(g.validate());
}

TEST(Tag, DuplicateArcRejectedButTextDistinguishes) {
  TAG g;
  g.add_node("a");
  g.add_node("b");
  g.add_arc(0, 1, "x");
  EXPECT_THROW(g.add_arc(0, 1, "x"), GraphError);
  EXPECT_NO_THROW(g.add_arc(0, 1, "y"));
  EXPECT_NO_THROW(g.add_arc(0, 0, "self"));
}

TEST(Tag, NodeIdTags) {
  TAG g;
  for (int i = 0; i < 3; ++i) g.add_node("n" + std::to_string(i));
  const auto a = assign_node_id_tags(g, 7), b = assign_node_id_tags(g, 7);
  EXPECT_EQ(a, b);
  std::set<std::string> tags;
  for (const auto& n : a.nodes()) {
    ASSERT_TRUE(n.node_id_tag);
    EXPECT_TRUE(n.node_id_tag->starts_with("[NODEID."));
    EXPECT_TRUE(n.text.ends_with(" " + *n.node_id_tag));
    EXPECT_EQ(strip_tag(n), "n" + std::to_string(n.id));
    tags.insert(*n.node_id_tag);
  }
  EXPECT_EQ(tags.size(), 3u);
  TAG empty;
  EXPECT_THROW(assign_node_id_tags(empty, 1), GraphError);
}

TEST(Tag, NodeIdTagsInjectiveBeyondOneLetter) {
  TAG g;
  for (int i = 0; i < 100; ++i) g.add_node("");
  const auto a = assign_node_id_tags(g, 3);
  std::set<std::string> tags;
  for (const auto& n : a.nodes()) {
    tags.insert(*n.node_id_tag);
    EXPECT_EQ(n.text, *n.node_id_tag);
  }
  EXPECT_EQ(tags.size(), 100u);
  EXPECT_NO_THROW(a.validate());
}

TEST(Tag, Base26Labels) {
  EXPECT_EQ(base26_label(0), "A");
  EXPECT_EQ(base26_label(25), "Z");
  EXPECT_EQ(base26_label(26), "AA");
  EXPECT_EQ(base26_label(27), "AB");
  EXPECT_EQ(base26_label(26 + 26 * 26), "AAA");
}

TEST(Tag, SerializeEmptyGraph) {
  TAG g;
  const auto doc = serialize_tag(g);
  EXPECT_EQ(std::count(doc.begin(), doc.end(), '\n'), 1);
  EXPECT_EQ(parse_tag(doc), g);
}

TEST(Tag, SerializeSmallGraphBitExact) {
  TAG g;
  g.add_node("alpha");
  g.add_node("");
  g.add_arc(0, 1, "cites");
  const auto doc = serialize_tag(g);
  const auto back = parse_tag(doc);
  EXPECT_EQ(back, g);
  EXPECT_EQ(serialize_tag(back), doc);
  EXPECT_NE(doc.find("\"text\":\"\""), std::string::npos);
}

TEST(Tag, SerializeLargeRandomGraph) {
  std::mt19937_64 rng(5);
  TAG g;
  for (int i = 0; i < 1000; ++i) g.add_node("node " + std::to_string(rng() % 100000) + " \"q\" \xC3\xA9");
  for (int i = 0; i < 3000; ++i) {
    const int a = static_cast<int>(rng() % 1000), b = static_cast<int>(rng() % 1000);
    if (!g.has_arc(a, b, "e")) g.add_arc(a, b, "e");
  }
  g = assign_node_id_tags(g, 9);
  attach_prompt_node(g, {1, 2, 3}, "question?", EdgeMode::double_);
  const auto back = parse_tag(serialize_tag(g));
  EXPECT_EQ(back, g);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(back.node(static_cast<int>(i)).text, g.node(static_cast<int>(i)).text);
}

TEST(Tag, ParseErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& doc) {
    try {
      parse_tag(doc);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  const std::string header = "{\"directed\":true,\"version\":1}\n";
  EXPECT_EQ(line_of(""), 1u);
  EXPECT_EQ(line_of(header + "{\"n\":{\"id\":0,\"text\":\"a\",\"kind\":\"content\"}}\nnot json\n"), 3u);
  EXPECT_EQ(line_of(header + "{\"n\":{\"id\":1,\"text\":\"a\",\"kind\":\"content\"}}\n"), 2u);
  EXPECT_EQ(line_of(header + "{\"n\":{\"id\":0,\"text\":\"a\",\"kind\":\"content\"}}\n{\"e\":{\"src\":0,\"dst\":4,\"text\":\"\"}}\n"),
            3u);
  EXPECT_EQ(line_of(header + "{\"n\":{\"id\":0,\"text\":\"a\",\"kind\":\"alien\"}}\n"), 2u);
  EXPECT_EQ(line_of(header + "{\"x\":1}\n"), 2u);
}

TEST(Tag, TaskSampleJsonRoundTrip) {
  TaskSample s;
  s.graph.add_node("a b");
  s.graph.add_node("c");
  s.graph.add_undirected(0, 1, "cites");
  const int p = attach_prompt_node(s.graph, {0}, "What?", EdgeMode::single);
  s.targets.push_back({p, "What?", "answer", TaskKind::downstream});
  s.task_kind = TaskKind::downstream;
  const auto j = sample_to_json(s);
  EXPECT_TRUE(j.contains("graph"));
  EXPECT_EQ(j["targets"][0]["y"], "answer");
  EXPECT_EQ(sample_from_json(nlohmann::json::parse(j.dump())), s);
  EXPECT_NO_THROW(s.validate());
  s.targets.push_back({p, "again", "x", TaskKind::downstream});
  EXPECT_THROW(s.validate(), GraphError);
}
