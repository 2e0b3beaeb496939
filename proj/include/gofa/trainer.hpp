#pragma once

// AdamW with decoupled weight decay, global-norm clipping, cosine schedule
// with warm restarts, gradient accumulation, CSV loss log, checkpoints and
// bit-exact resume.

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gofa/checkpoint.hpp"
#include "gofa/log.hpp"
#include "gofa/model.hpp"

namespace gofa {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double grad_clip = 0.5;
  int batch_size = 8;
  int grad_accum = 1;
  int restarts = 2;
  double min_lr_fraction = 0.1;
  std::vector<std::string> freeze;
  std::uint64_t seed = 0;
  int max_steps = 1000;
  int checkpoint_every = 500;
  int log_every = 10;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
    if (!(lr > 0)) fail("lr must be > 0");
    if (!(min_lr_fraction > 0 && min_lr_fraction <= 1)) fail("min_lr_fraction must be in (0,1]");
    if (!(grad_clip > 0)) fail("grad_clip must be > 0");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must be in [0,1)");
    if (!(eps > 0)) fail("eps must be > 0");
    if (batch_size < 1 || grad_accum < 1) fail("batch_size and grad_accum must be >= 1");
    if (restarts < 0) fail("restarts must be >= 0");
    if (max_steps < 1) fail("max_steps must be >= 1");
    if (checkpoint_every < 1 || log_every < 1) fail("checkpoint_every and log_every must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"betas", {c.beta1, c.beta2}},
                     {"eps", c.eps},
                     {"grad_clip", c.grad_clip},
                     {"batch_size", c.batch_size},
                     {"grad_accum", c.grad_accum},
                     {"restarts", c.restarts},
                     {"min_lr_fraction", c.min_lr_fraction},
                     {"freeze", c.freeze},
                     {"seed", c.seed},
                     {"max_steps", c.max_steps},
                     {"checkpoint_every", c.checkpoint_every},
                     {"log_every", c.log_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known{"lr",       "weight_decay", "betas",     "eps",
                                           "grad_clip", "batch_size",  "grad_accum", "restarts",
                                           "min_lr_fraction", "freeze", "seed",      "max_steps",
                                           "checkpoint_every", "log_every"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("train config: unknown key '" + k + "'");
  }
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("betas")) {
    const auto& b = j.at("betas");
    if (!b.is_array() || b.size() != 2) throw ConfigError("train config: betas must be a pair");
    c.beta1 = b[0].get<double>();
    c.beta2 = b[1].get<double>();
  }
  c.eps = j.value("eps", c.eps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.grad_accum = j.value("grad_accum", c.grad_accum);
  c.restarts = j.value("restarts", c.restarts);
  c.min_lr_fraction = j.value("min_lr_fraction", c.min_lr_fraction);
  c.freeze = j.value("freeze", c.freeze);
  c.seed = j.value("seed", c.seed);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
}

/// Cosine annealing from lr to min_fraction·lr, restarted `restarts` times.
/// Cycle c covers steps [⌊cN/(r+1)⌋, ⌊(c+1)N/(r+1)⌋); its last step sits at the minimum.
inline double cosine_restart_lr(int step, int total_steps, double lr, int restarts, double min_fraction) {
  const long cycles = restarts + 1;
  const long n = total_steps;
  long c = 0;
  while (c + 1 < cycles && step >= (c + 1) * n / cycles) ++c;
  const long b = c * n / cycles, e = (c + 1) * n / cycles;
  const double progress = e - b > 1 ? static_cast<double>(step - b) / static_cast<double>(e - b - 1) : 0.0;
  const double lo = min_fraction * lr;
  return lo + (lr - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

/// Global L2 norm over every parameter gradient; scales all of them down to
/// max_norm when it is exceeded. Returns the pre-clip norm.
template <typename T>
T clip_gradients(BasicParameterStore<T>& params, T max_norm) {
  T sq = 0;
  for (auto& p : params.all()) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += g * g;
  }
  const T norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = max_norm / norm;
    for (auto& p : params.all()) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.grad_buffer()) g *= s;
    }
  }
  return norm;
}

template <typename T>
T grad_norm(const BasicParameterStore<T>& params) {
  T sq = 0;
  for (const auto& p : params.all()) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

template <typename T>
class AdamW {
 public:
  AdamW(BasicParameterStore<T>& params, const TrainConfig& cfg) : params_(params), cfg_(cfg) {
    for (const auto& p : params_.all()) {
      m_.emplace_back(p.tensor.numel(), T(0));
      v_.emplace_back(p.tensor.numel(), T(0));
    }
  }

  /// One update at learning rate `lr`; frozen parameters are untouched.
  /// Rank-1 parameters (gains, gates) get no weight decay.
  void step(double lr) {
    ++t_;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = T(1) - std::pow(b1, static_cast<T>(t_));
    const T c2 = T(1) - std::pow(b2, static_cast<T>(t_));
    const T eps = static_cast<T>(cfg_.eps), a = static_cast<T>(lr);
    auto& all = params_.all();
    for (std::size_t i = 0; i < all.size(); ++i) {
      auto& p = all[i];
      if (!p.trainable || !p.tensor.has_grad()) continue;
      const T wd = p.tensor.rank() == 1 ? T(0) : static_cast<T>(cfg_.weight_decay);
      auto& w = p.tensor.data();
      const auto& g = p.tensor.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        const T mh = m[k] / c1, vh = v[k] / c2;
        w[k] -= a * (mh / (std::sqrt(vh) + eps) + wd * w[k]);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

  void save(Checkpoint& ck) const {
    const auto& all = params_.all();
    for (std::size_t i = 0; i < all.size(); ++i) {
      ck.put_values("__adam_m__." + all[i].name, all[i].tensor.shape(), m_[i]);
      ck.put_values("__adam_v__." + all[i].name, all[i].tensor.shape(), v_[i]);
    }
    ck.put_values<double>("__adam_t__", Shape{1}, {static_cast<double>(t_)});
  }

  void load(const Checkpoint& ck) {
    const auto& all = params_.all();
    for (std::size_t i = 0; i < all.size(); ++i) {
      m_[i] = ck.values<T>("__adam_m__." + all[i].name);
      v_[i] = ck.values<T>("__adam_v__." + all[i].name);
      if (m_[i].size() != all[i].tensor.numel() || v_[i].size() != all[i].tensor.numel()) {
        throw CheckpointError("optimizer state size mismatch for " + all[i].name);
      }
    }
    t_ = static_cast<std::int64_t>(ck.values<double>("__adam_t__").at(0));
  }

 private:
  BasicParameterStore<T>& params_;
  TrainConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::int64_t t_ = 0;
};

/// What the trainer optimizes: a dataset of `size` items, each contributing
/// `targets(i)` generation targets, and a loss that is the mean over the
/// targets of the given items.
template <typename T>
struct BasicObjective {
  std::size_t size = 0;
  std::function<std::size_t(std::size_t)> targets;
  std::function<BasicTensor<T>(const std::vector<std::size_t>&, TargetStats*)> loss;
  std::function<nlohmann::json(std::size_t)> describe;
};

template <typename T>
BasicObjective<T> task_objective(const BasicGofaModel<T>& model, const std::vector<TaskSample>& samples,
                                 EncodeOptions opt = {}) {
  BasicObjective<T> o;
  o.size = samples.size();
  o.targets = [&samples](std::size_t i) { return samples[i].targets.size(); };
  o.loss = [&model, &samples, opt](const std::vector<std::size_t>& idx, TargetStats* st) {
    std::vector<const TaskSample*> batch;
    for (auto i : idx) batch.push_back(&samples[i]);
    return model.forward_batch(batch, opt, st);
  };
  o.describe = [&samples](std::size_t i) { return sample_to_json(samples[i]); };
  return o;
}

template <typename T>
BasicObjective<T> autoencode_objective(const BasicGofaModel<T>& model, const std::vector<std::string>& texts) {
  BasicObjective<T> o;
  o.size = texts.size();
  o.targets = [](std::size_t) { return std::size_t{1}; };
  o.loss = [&model, &texts](const std::vector<std::size_t>& idx, TargetStats* st) {
    std::vector<std::string> batch;
    for (auto i : idx) batch.push_back(texts[i]);
    auto loss = model.autoencode_loss(batch);
    if (st) {
      st->targets += batch.size();
      for (const auto& t : batch) st->tokens += model.target_ids(t).size();
    }
    return loss;
  };
  o.describe = [&texts](std::size_t i) { return nlohmann::json{{"text", texts[i]}}; };
  return o;
}

struct StepRecord {
  int step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
  std::size_t tokens_seen = 0;
};

struct TrainReport {
  std::vector<StepRecord> curve;
  std::vector<std::string> checkpoints;
  int final_step = 0;
};

struct TrainOutput {
  std::optional<std::filesystem::path> dir;  // checkpoints, loss.csv, nan dump
  std::optional<std::filesystem::path> resume_from;
};

/// Items of step `step`: a pure function of (seed, step) so that resuming
/// replays the identical order. Each pass over the data is a fresh shuffle.
inline std::vector<std::size_t> batch_indices(std::size_t n, std::uint64_t seed, int step, std::size_t per_step) {
  std::vector<std::size_t> out;
  out.reserve(per_step);
  std::size_t pos = static_cast<std::size_t>(step) * per_step;
  std::size_t epoch = pos / n;
  std::vector<std::size_t> perm;
  auto make_perm = [&](std::size_t e) {
    perm.resize(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (e + 1)));
    std::shuffle(perm.begin(), perm.end(), rng);
  };
  make_perm(epoch);
  while (out.size() < per_step) {
    const std::size_t e = pos / n;
    if (e != epoch) make_perm(epoch = e);
    out.push_back(perm[pos % n]);
    ++pos;
  }
  return out;
}

template <typename T>
class BasicTrainer {
 public:
  BasicTrainer(BasicGofaModel<T>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)), opt_(model.params(), cfg_) {
    cfg_.validate();
    model_.params().freeze(cfg_.freeze);
  }

  AdamW<T>& optimizer() { return opt_; }
  int step() const { return step_; }
  std::size_t tokens_seen() const { return tokens_seen_; }

  /// One optimizer step over grad_accum micro-batches. Each micro-batch loss
  /// is the mean over its targets, so it is weighted by its share of the
  /// step's targets; the accumulated gradient is that of the concatenated batch.
  StepRecord train_step(const BasicObjective<T>& obj, const TrainOutput& out = {}) {
    const std::size_t per_micro = static_cast<std::size_t>(cfg_.batch_size);
    const auto idx = batch_indices(obj.size, cfg_.seed, step_, per_micro * static_cast<std::size_t>(cfg_.grad_accum));
    std::vector<std::vector<std::size_t>> micro(static_cast<std::size_t>(cfg_.grad_accum));
    std::size_t total = 0;
    std::vector<std::size_t> counts(micro.size(), 0);
    for (std::size_t m = 0; m < micro.size(); ++m) {
      micro[m].assign(idx.begin() + static_cast<std::ptrdiff_t>(m * per_micro),
                      idx.begin() + static_cast<std::ptrdiff_t>((m + 1) * per_micro));
      for (auto i : micro[m]) counts[m] += obj.targets(i);
      total += counts[m];
    }
    if (total == 0) throw TrainingError("step " + std::to_string(step_) + ": batch has no generation targets");
    model_.params().zero_grad();
    double loss_sum = 0;
    TargetStats stats;
    for (std::size_t m = 0; m < micro.size(); ++m) {
      if (counts[m] == 0) continue;
      auto loss = obj.loss(micro[m], &stats);
      const T w = static_cast<T>(counts[m]) / static_cast<T>(total);
      if (!std::isfinite(static_cast<double>(loss.item()))) {
        clear_tape<T>();
        dump_batch(obj, micro[m], out);
        throw TrainingError("non-finite loss at step " + std::to_string(step_) + ", micro-batch " + std::to_string(m));
      }
      loss_sum += static_cast<double>(w * loss.item());
      backward(loss, w);
    }
    const T norm = clip_gradients(model_.params(), static_cast<T>(cfg_.grad_clip));
    const double lr = cosine_restart_lr(step_, cfg_.max_steps, cfg_.lr, cfg_.restarts, cfg_.min_lr_fraction);
    opt_.step(lr);
    tokens_seen_ += stats.tokens;
    StepRecord rec{step_, lr, loss_sum, static_cast<double>(norm), tokens_seen_};
    ++step_;
    return rec;
  }

  TrainReport train(const BasicObjective<T>& obj, const TrainOutput& out = {}) {
    if (obj.size == 0) throw TrainingError("train: empty corpus");
    TrainReport rep;
    std::ofstream csv;
    if (out.dir) {
      std::filesystem::create_directories(*out.dir);
      const auto path = *out.dir / "loss.csv";
      const bool fresh = !out.resume_from || !std::filesystem::exists(path);
      csv.open(path, fresh ? std::ios::trunc : std::ios::app);
      if (!csv) throw TrainingError("cannot write " + path.string());
      if (fresh) csv << "step,lr,loss,grad_norm,tokens_seen\n";
    }
    if (out.resume_from) resume(Checkpoint::load(out.resume_from->string()));
    while (step_ < cfg_.max_steps) {
      const auto rec = train_step(obj, out);
      rep.curve.push_back(rec);
      if (csv.is_open() && (rec.step % cfg_.log_every == 0 || step_ == cfg_.max_steps)) {
        csv << rec.step << ',' << rec.lr << ',' << rec.loss << ',' << rec.grad_norm << ',' << rec.tokens_seen << '\n';
        csv.flush();
      }
      if (rec.step % cfg_.log_every == 0) {
        log::info("step " + std::to_string(rec.step) + " loss " + std::to_string(rec.loss) + " lr " +
                  std::to_string(rec.lr) + " |g| " + std::to_string(rec.grad_norm));
      }
      if (out.dir && (step_ % cfg_.checkpoint_every == 0 || step_ == cfg_.max_steps)) {
        const auto path = *out.dir / ("ckpt_" + std::to_string(step_) + ".gofa");
        checkpoint().save(path.string());
        rep.checkpoints.push_back(path.string());
      }
    }
    rep.final_step = step_;
    return rep;
  }

  /// Model parameters, config, optimizer state and trainer counters.
  Checkpoint checkpoint() const {
    Checkpoint ck;
    model_.save(ck);
    opt_.save(ck);
    ck.put_values<double>("__trainer_step__", Shape{1}, {static_cast<double>(step_)});
    ck.put_values<double>("__tokens_seen__", Shape{1}, {static_cast<double>(tokens_seen_)});
    ck.put_bytes("__train_config__", nlohmann::json(cfg_).dump());
    return ck;
  }

  void resume(const Checkpoint& ck) {
    model_.load(ck);
    opt_.load(ck);
    step_ = static_cast<int>(ck.values<double>("__trainer_step__").at(0));
    tokens_seen_ = static_cast<std::size_t>(ck.values<double>("__tokens_seen__").at(0));
  }

 private:
  void dump_batch(const BasicObjective<T>& obj, const std::vector<std::size_t>& idx, const TrainOutput& out) const {
    nlohmann::json dump = nlohmann::json::array();
    for (auto i : idx) dump.push_back({{"index", i}, {"item", obj.describe ? obj.describe(i) : nlohmann::json()}});
    log::error("non-finite loss; offending batch indices: " + [&] {
      std::string s;
      for (auto i : idx) s += std::to_string(i) + " ";
      return s;
    }());
    if (out.dir) {
      std::ofstream os(*out.dir / "nan_batch.json");
      os << dump.dump(2) << '\n';
    }
  }

  BasicGofaModel<T>& model_;
  TrainConfig cfg_;
  AdamW<T> opt_;
  int step_ = 0;
  std::size_t tokens_seen_ = 0;
};

using Trainer = BasicTrainer<double>;
using Objective = BasicObjective<double>;

}  // namespace gofa
