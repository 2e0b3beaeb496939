#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <unistd.h>

#include "gofa/trainer.hpp"
#include "model_util.hpp"
#include "test_util.hpp"

using namespace gofa;
using gofa::testing::set_gates;

namespace {

ModelConfig small() {
  auto c = gofa::testing::tiny_config(31);
  c.d_model = 16;
  c.n_heads = 2;
  c.max_seq_len = 32;
  return c;
}

std::vector<TaskSample> toy_corpus(std::size_t n, std::uint64_t seed) {
  NeighborCorpusConfig cc;
  cc.n_samples = static_cast<int>(n);
  cc.n_topics = 4;
  cc.max_neighbors = 3;
  cc.seed = seed;
  return make_neighbor_corpus(cc, true);
}

TrainConfig quick(int steps) {
  TrainConfig tc;
  tc.lr = 2e-3;
  tc.batch_size = 4;
  tc.max_steps = steps;
  tc.seed = 5;
  tc.weight_decay = 0.01;
  return tc;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gofa_trainer_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

double max_param_diff(GofaModel& a, GofaModel& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.params().all().size(); ++i) {
    const auto& x = a.params().all()[i].tensor.data();
    const auto& y = b.params().all()[i].tensor.data();
    for (std::size_t k = 0; k < x.size(); ++k) m = std::max(m, std::abs(x[k] - y[k]));
  }
  return m;
}

}  // namespace

TEST(Schedule, StartsAtLrAndEndsCyclesAtMinimum) {
  const int N = 300;
  EXPECT_DOUBLE_EQ(cosine_restart_lr(0, N, 1e-4, 2, 0.1), 1e-4);
  EXPECT_NEAR(cosine_restart_lr(99, N, 1e-4, 2, 0.1), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_restart_lr(199, N, 1e-4, 2, 0.1), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_restart_lr(299, N, 1e-4, 2, 0.1), 1e-5, 1e-18);
  EXPECT_DOUBLE_EQ(cosine_restart_lr(100, N, 1e-4, 2, 0.1), 1e-4);
  EXPECT_DOUBLE_EQ(cosine_restart_lr(200, N, 1e-4, 2, 0.1), 1e-4);
  EXPECT_NEAR(cosine_restart_lr(0, 10, 1.0, 0, 0.1) - cosine_restart_lr(9, 10, 1.0, 0, 0.1), 0.9, 1e-15);
}

TEST(Schedule, RestartsAtThirdsForAnyLength) {
  for (int N : {7, 10, 100, 101, 1000, 1001}) {
    std::vector<int> rises;
    for (int s = 1; s < N; ++s) {
      if (cosine_restart_lr(s, N, 1.0, 2, 0.1) > cosine_restart_lr(s - 1, N, 1.0, 2, 0.1)) rises.push_back(s);
    }
    ASSERT_EQ(rises.size(), 2u) << N;
    EXPECT_EQ(rises[0], N / 3);
    EXPECT_EQ(rises[1], 2 * N / 3);
    for (int s = 0; s < N; ++s) {
      const double v = cosine_restart_lr(s, N, 1.0, 2, 0.1);
      EXPECT_GE(v, 0.1 - 1e-15);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Clip, Examples) {
  ParameterStore ps;
  auto a = ps.add("a", {2});
  a.grad_buffer() = {0.15, 0.2};
  EXPECT_NEAR(clip_gradients(ps, 0.5), 0.25, 1e-15);
  EXPECT_EQ(a.grad()[0], 0.15);
  a.grad_buffer() = {0.6, 0.8};
  EXPECT_NEAR(clip_gradients(ps, 0.5), 1.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.3, 1e-15);
  EXPECT_NEAR(grad_norm(ps), 0.5, 1e-15);
}

TEST(Clip, RandomNormMatchesIndependentSum) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  ParameterStore ps;
  long double sq = 0;
  for (int i = 0; i < 5; ++i) {
    auto t = ps.add("p" + std::to_string(i), {static_cast<std::size_t>(3 + i), 4});
    auto& g = t.grad_buffer();
    for (auto& v : g) {
      v = n(rng);
      sq += static_cast<long double>(v) * v;
    }
  }
  const double want = static_cast<double>(std::sqrt(sq));
  EXPECT_NEAR(clip_gradients(ps, 0.5), want, 1e-12 * want);
  EXPECT_LE(grad_norm(ps), 0.5 + 1e-12);
}

TEST(Config, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.min_lr_fraction = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.grad_clip = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(nlohmann::json::parse(R"({"lr":0.1,"momentum":0.9})").get<TrainConfig>(), ConfigError);
  c = {};
  c.freeze = {"compressor."};
  c.beta2 = 0.99;
  const nlohmann::json j = c;
  EXPECT_EQ(j["betas"][1], 0.99);
  const auto back = j.get<TrainConfig>();
  EXPECT_EQ(back.freeze, c.freeze);
  EXPECT_EQ(back.beta2, 0.99);
}

TEST(Batches, PureFunctionOfSeedAndStep) {
  EXPECT_EQ(batch_indices(10, 1, 7, 4), batch_indices(10, 1, 7, 4));
  EXPECT_NE(batch_indices(10, 1, 0, 10), batch_indices(10, 2, 0, 10));
  auto epoch = batch_indices(10, 1, 0, 10);
  std::sort(epoch.begin(), epoch.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(epoch[i], i);
  // consecutive steps tile the index stream
  const auto whole = batch_indices(7, 3, 0, 21);
  for (int s = 0; s < 7; ++s) {
    const auto part = batch_indices(7, 3, s, 3);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(part[k], whole[static_cast<std::size_t>(s) * 3 + k]);
  }
}

TEST(Trainer, GradAccumulationEqualsConcatenatedBatch) {
  const auto data = toy_corpus(16, 1);
  GofaModel a(small()), b(small());
  set_gates(a, 0.4);
  set_gates(b, 0.4);
  auto ca = quick(3), cb = quick(3);
  ca.batch_size = 8;
  cb.batch_size = 2;
  cb.grad_accum = 4;
  Trainer ta(a, ca), tb(b, cb);
  const auto oa = task_objective(a, data), ob = task_objective(b, data);
  for (int s = 0; s < 3; ++s) {
    const auto ra = ta.train_step(oa), rb = tb.train_step(ob);
    EXPECT_NEAR(ra.loss, rb.loss, 1e-12);
    EXPECT_NEAR(ra.grad_norm, rb.grad_norm, 1e-10);
    EXPECT_EQ(ra.tokens_seen, rb.tokens_seen);
  }
  EXPECT_LE(max_param_diff(a, b), 1e-10);
}

TEST(Trainer, GradAccumulationWeightsUnevenTargetCounts) {
  // two items with 1 and 3 targets; accumulation must weight by target share
  TAG g;
  g.add_node("a b");
  g.add_node("c d");
  g.add_undirected(0, 1, "");
  TaskSample one{g, {{0, "", "x", TaskKind::completion}}, TaskKind::completion};
  TaskSample three{g, {{0, "", "yy", TaskKind::completion}, {1, "", "z", TaskKind::completion},
                       {1, "", "www", TaskKind::completion}}, TaskKind::completion};
  const std::vector<TaskSample> data{one, three};
  GofaModel a(small()), b(small());
  auto ca = quick(1), cb = quick(1);
  ca.batch_size = 2;
  cb.batch_size = 1;
  cb.grad_accum = 2;
  ca.grad_clip = cb.grad_clip = 1e6;
  Trainer ta(a, ca), tb(b, cb);
  ta.train_step(task_objective(a, data));
  tb.train_step(task_objective(b, data));
  EXPECT_LE(max_param_diff(a, b), 1e-10);
}

TEST(Trainer, PostClipNormWithinCap) {
  const auto data = toy_corpus(8, 2);
  GofaModel m(small());
  auto tc = quick(1);
  tc.grad_clip = 1e-3;
  Trainer t(m, tc);
  const auto r = t.train_step(task_objective(m, data));
  EXPECT_GT(r.grad_norm, 1e-3);
  EXPECT_LE(grad_norm(m.params()), 1e-3 + 1e-12);
}

TEST(Trainer, FrozenPrefixNeverChanges) {
  const auto data = toy_corpus(8, 3);
  GofaModel m(small());
  set_gates(m, 0.3);
  std::vector<std::vector<double>> before;
  for (const auto& p : m.params().all()) before.push_back(p.tensor.data());
  auto tc = quick(10);
  tc.freeze = {"compressor."};
  Trainer t(m, tc);
  t.train(task_objective(m, data));
  bool others_moved = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& p = m.params().all()[i];
    if (p.name.starts_with("compressor.")) {
      EXPECT_EQ(p.tensor.data(), before[i]) << p.name;
    } else if (p.tensor.data() != before[i]) {
      others_moved = true;
    }
  }
  EXPECT_TRUE(others_moved);
}

TEST(Trainer, WeightDecaySkipsVectorsAndScalars) {
  TAG g;
  g.add_node("q");
  const std::vector<TaskSample> data{{g, {{0, "", "r", TaskKind::completion}}, TaskKind::completion}};
  GofaModel m(small());
  const auto gate0 = m.params().find("gnn.0.gate_gnn")->tensor[0];
  const auto gain0 = m.params().find("gnn.0.attn_norm")->tensor[0];
  // 'Z' never occurs in the data, so its embedding row gets zero gradient
  const std::size_t row = 'Z', d = 16;
  const auto emb0 = m.params().find("decoder.embed")->tensor[row * d];
  auto tc = quick(1);
  tc.weight_decay = 0.5;
  tc.lr = 0.1;
  Trainer t(m, tc);
  t.train_step(task_objective(m, data));
  EXPECT_EQ(m.params().find("gnn.0.gate_gnn")->tensor[0], gate0);
  EXPECT_EQ(m.params().find("gnn.0.attn_norm")->tensor[0], gain0);
  EXPECT_NEAR(m.params().find("decoder.embed")->tensor[row * d], emb0 * (1 - 0.1 * 0.5), 1e-15);
}

TEST(Trainer, ResumeIsBitExact) {
  const auto data = toy_corpus(12, 4);
  auto tc = quick(8);
  tc.restarts = 1;
  tc.checkpoint_every = 4;
  GofaModel full(small());
  Trainer tf(full, tc);
  const auto dir_full = temp_dir("full");
  const auto rep_full = tf.train(task_objective(full, data), {dir_full, std::nullopt});
  ASSERT_EQ(rep_full.checkpoints.size(), 2u);

  auto cfg = small();
  cfg.init_seed = 999;
  GofaModel resumed(cfg);
  Trainer tr(resumed, tc);
  const auto dir_res = temp_dir("res");
  tr.train(task_objective(resumed, data), {dir_res, rep_full.checkpoints[0]});
  EXPECT_EQ(max_param_diff(full, resumed), 0.0);
  const auto ca = Checkpoint::load(rep_full.checkpoints[1]);
  auto cb = Checkpoint::load((dir_res / "ckpt_8.gofa").string());
  // only the recorded init seed differs
  EXPECT_NE(ca.bytes("__config__"), cb.bytes("__config__"));
  cb.put_bytes("__config__", ca.bytes("__config__"));
  EXPECT_EQ(ca.serialize(), cb.serialize());

  std::ifstream csv(dir_full / "loss.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "step,lr,loss,grad_norm,tokens_seen");
  std::filesystem::remove_all(dir_full);
  std::filesystem::remove_all(dir_res);
}

TEST(Trainer, SameSeedSameCheckpoint) {
  const auto data = toy_corpus(12, 5);
  auto run = [&] {
    GofaModel m(small());
    Trainer t(m, quick(5));
    t.train(task_objective(m, data));
    return t.checkpoint().serialize();
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, NonFiniteLossAbortsWithDump) {
  GofaModel m(small());
  Objective o;
  o.size = 3;
  o.targets = [](std::size_t) { return std::size_t{1}; };
  o.loss = [&](const std::vector<std::size_t>&, TargetStats*) {
    auto p = m.params().find("decoder.final_norm")->tensor;
    return ops::scale(ops::sum(p), std::numeric_limits<double>::quiet_NaN());
  };
  o.describe = [](std::size_t i) { return nlohmann::json{{"i", i}}; };
  Trainer t(m, quick(3));
  const auto dir = temp_dir("nan");
  std::filesystem::create_directories(dir);
  EXPECT_THROW(t.train_step(o, {dir, std::nullopt}), TrainingError);
  std::ifstream is(dir / "nan_batch.json");
  ASSERT_TRUE(is.good());
  const auto j = nlohmann::json::parse(is);
  EXPECT_EQ(j.size(), 4u);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, EmptyCorpusRejected) {
  GofaModel m(small());
  const std::vector<TaskSample> none;
  Trainer t(m, quick(1));
  EXPECT_THROW(t.train(task_objective(m, none)), TrainingError);
}

TEST(Trainer, SmokeLossDecreases) {
  const auto data = toy_corpus(64, 6);
  GofaModel m(small());
  auto tc = quick(60);
  tc.lr = 3e-3;
  Trainer t(m, tc);
  const auto rep = t.train(task_objective(m, data));
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += rep.curve[static_cast<std::size_t>(i)].loss;
    tail += rep.curve[rep.curve.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  EXPECT_LT(tail, 0.8 * head);
}
