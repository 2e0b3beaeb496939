#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "gofa/pipeline.hpp"

using namespace gofa;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / ("gofa_cfg_" + std::to_string(::getpid()) + "_" + name);
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST(Config, DefaultsDeriveSubSeeds) {
  const auto c = run_config_from_json({{"seed", 10}});
  EXPECT_EQ(c.corpus.citation.seed, 10u);
  EXPECT_EQ(c.corpus.sampler.rng_seed, 11u);
  EXPECT_EQ(c.corpus.pretrain.rng_seed, 12u);
  EXPECT_EQ(c.model.init_seed, 13u);
  EXPECT_EQ(c.train.seed, 14u);
  EXPECT_EQ(c.corpus.neighbor.seed, 15u);
  EXPECT_EQ(c.corpus.lookup.seed, 15u);
}

TEST(Config, ExplicitSeedsWin) {
  const auto c = run_config_from_json(nlohmann::json::parse(
      R"({"seed": 10, "model": {"init_seed": 3}, "corpus": {"neighbor": {"seed": 77}}, "train": {"seed": 1}})"));
  EXPECT_EQ(c.model.init_seed, 3u);
  EXPECT_EQ(c.corpus.neighbor.seed, 77u);
  EXPECT_EQ(c.corpus.structural.seed, 15u);
  EXPECT_EQ(c.train.seed, 1u);
}

TEST(Config, UnknownKeysRejectedAtEveryLevel) {
  for (const char* doc : {R"({"sed": 1})", R"({"model": {"dmodel": 8}})", R"({"train": {"learning_rate": 1}})",
                          R"({"corpus": {"citation": {"nodes": 3}}})", R"({"eval": {"shard": 2}})",
                          R"({"ablate": {"triple": {}}})", R"({"ablate": {"single": {"ckpt": "x"}}})"}) {
    const auto p = temp_file("unknown.json", doc);
    EXPECT_THROW(load_run_config(p.string()), ConfigError) << doc;
    std::filesystem::remove(p);
  }
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_THROW(load_run_config("", {"train.lr=-1"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"corpus.kind=bogus"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"corpus.edge_mode=triple"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"model.d_model=\"wide\""}), ConfigError);
  EXPECT_THROW(load_run_config("", {"no_equals_sign"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"model..d_model=4"}), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), ConfigError);
  const auto p = temp_file("broken.json", "{ not json");
  EXPECT_THROW(load_run_config(p.string()), ConfigError);
  std::filesystem::remove(p);
}

TEST(Config, OverridesParseJsonOrFallBackToString) {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "train.lr=0.5");
  apply_override(j, "train.freeze=[\"compressor.\"]");
  apply_override(j, "train_data=some/path.jsonl");
  apply_override(j, "use_gnn=false");
  EXPECT_EQ(j["train"]["lr"], 0.5);
  EXPECT_EQ(j["train"]["freeze"][0], "compressor.");
  EXPECT_EQ(j["train_data"], "some/path.jsonl");
  EXPECT_EQ(j["use_gnn"], false);
  EXPECT_THROW(apply_override(j, "train.lr.x=1"), ConfigError);
}

TEST(Config, FileThenOverrides) {
  const auto p = temp_file("ok.json", R"({"seed": 4, "model": {"d_model": 32, "n_heads": 4}, "train": {"lr": 0.01}})");
  const auto c = load_run_config(p.string(), {"train.lr=0.02", "model.n_heads=2"});
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.model.d_model, 32);
  EXPECT_EQ(c.model.n_heads, 2);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.02);
  std::filesystem::remove(p);
}

TEST(Config, EchoRoundTrips) {
  const auto c = load_run_config("", {"seed=9", "corpus.kind=lookup", "eval.spd_miss_penalty=2.5", "eval.shards=3"});
  const nlohmann::json echo = c;
  const auto back = run_config_from_json(echo);
  EXPECT_EQ(nlohmann::json(back), echo);
  EXPECT_EQ(back.eval.spd_miss_penalty, 2.5);
  EXPECT_FALSE(back.eval.cn_miss_penalty);
}

TEST(Pipeline, JsonlRoundTrip) {
  CorpusSpec spec;
  spec.kind = "structural";
  spec.n_samples = 5;
  const auto c = generate_corpus(spec);
  std::vector<TaskSample> all = c.train;
  all.insert(all.end(), c.test.begin(), c.test.end());
  const auto p = temp_file("corpus.jsonl", "");
  write_jsonl(p, all);
  const auto back = read_jsonl(p);
  ASSERT_EQ(back.size(), all.size());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(sample_to_json(back[i]), sample_to_json(all[i]));
  std::ofstream(p, std::ios::app) << "{\"broken\": \n";
  EXPECT_THROW(read_jsonl(p), IoError);
  std::filesystem::remove(p);
  EXPECT_THROW(read_jsonl("/nonexistent/x.jsonl"), IoError);
}

TEST(Pipeline, CorpusSplitAndSummary) {
  CorpusSpec spec;
  spec.kind = "pretrain";
  spec.n_samples = 10;
  spec.test_fraction = 0.3;
  spec.qa_conversations = 2;
  spec.qa_rounds = 3;
  const auto c = generate_corpus(spec);
  EXPECT_EQ(c.train.size() + c.test.size(), 10u);
  EXPECT_EQ(c.test.size(), 3u);
  EXPECT_EQ(c.qa.size(), 4u);
  EXPECT_EQ(c.summary["oracle_mismatches"], 0);
  EXPECT_EQ(c.summary["targets_per_graph"]["10"], 10);
  const auto again = generate_corpus(spec);
  EXPECT_EQ(sample_to_json(again.train[0]), sample_to_json(c.train[0]));
}

TEST(Pipeline, TamperedStructuralLabelIsDetected) {
  CorpusSpec spec;
  spec.kind = "structural";
  spec.n_samples = 3;
  auto c = generate_corpus(spec);
  auto s = c.train.at(0);
  EXPECT_EQ(structural_label_mismatches(s), 0u);
  s.targets.at(0).target_text += " extra";
  EXPECT_EQ(structural_label_mismatches(s), 1u);
}

TEST(Pipeline, RunMetadata) {
  const auto dir = std::filesystem::temp_directory_path() / ("gofa_meta_" + std::to_string(::getpid()));
  const auto cfg = load_run_config("", {"seed=21"});
  write_run_metadata(dir, "train", cfg, {{"extra", 1}});
  std::ifstream is(dir / "run.json");
  const auto j = nlohmann::json::parse(is);
  EXPECT_EQ(j["command"], "train");
  EXPECT_EQ(j["seed"], 21);
  EXPECT_EQ(j["config"], nlohmann::json(cfg));
  EXPECT_TRUE(j.contains("version"));
  EXPECT_TRUE(j.contains("build_id"));
  EXPECT_EQ(j["extra"], 1);
  std::filesystem::remove_all(dir);
}
