// gofa: corpus generation, training, evaluation and checkpoint inspection.
//
//   gofa <command> --out DIR [--config FILE] [--set key.path=value ...]
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gofa/config.hpp"
#include "gofa/eval.hpp"
#include "gofa/model.hpp"
#include "gofa/pipeline.hpp"
#include "gofa/trainer.hpp"

namespace fs = std::filesystem;
using namespace gofa;

namespace {

struct Args {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::string resume;
  std::string checkpoint;
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write " + p.string());
  os << s;
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

std::vector<TaskSample> load_data(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " is not set");
  return read_jsonl(path);
}

std::vector<std::string> load_candidates(const EvalSettings& e) {
  auto c = e.candidates;
  if (!e.candidates_file.empty()) {
    std::ifstream is(e.candidates_file);
    if (!is) throw IoError("cannot read " + e.candidates_file);
    for (const auto& v : nlohmann::json::parse(is)) c.push_back(v.get<std::string>());
  }
  return c;
}

/// Model for training: fresh from the config, or warm-started from a checkpoint
/// whose architecture then wins.
std::unique_ptr<GofaModel> training_model(const RunConfig& cfg) {
  if (cfg.init_checkpoint.empty()) return std::make_unique<GofaModel>(cfg.model);
  const auto ck = Checkpoint::load(cfg.init_checkpoint);
  auto m = std::make_unique<GofaModel>(GofaModel::config_from(ck));
  m->load(ck);
  log::info("warm start from " + cfg.init_checkpoint);
  return m;
}

std::unique_ptr<GofaModel> load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("eval.checkpoint is not set");
  const auto ck = Checkpoint::load(path);
  auto m = std::make_unique<GofaModel>(GofaModel::config_from(ck));
  m->load(ck);
  return m;
}

void finish_training(GofaModel& model, Trainer& trainer, const TrainReport& rep, const fs::path& out) {
  trainer.checkpoint().save((out / "final.gofa").string());
  nlohmann::json j{{"final_step", rep.final_step}, {"checkpoints", rep.checkpoints}, {"tokens_seen", trainer.tokens_seen()}};
  if (!rep.curve.empty()) {
    j["first_loss"] = rep.curve.front().loss;
    j["last_loss"] = rep.curve.back().loss;
  }
  j["parameters"] = model.params().count();
  write_json(out / "train_summary.json", j);
  std::cout << "trained to step " << rep.final_step << "; final checkpoint " << (out / "final.gofa").string() << '\n';
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_corpus(const RunConfig& cfg, const fs::path& out) {
  write_run_metadata(out, "gen-corpus", cfg);
  const auto c = generate_corpus(cfg.corpus);
  write_jsonl(out / "train.jsonl", c.train);
  write_jsonl(out / "test.jsonl", c.test);
  if (!c.qa.empty()) write_jsonl(out / "qa.jsonl", c.qa);
  write_json(out / "summary.json", c.summary);
  std::cout << c.summary.dump(2) << '\n';
}

void cmd_autoencode(const RunConfig& cfg, const Args& a, const fs::path& out) {
  write_run_metadata(out, "autoencode-pretrain", cfg);
  const auto data = load_data(cfg.train_data, "train_data");
  std::vector<std::string> texts;
  for (const auto& s : data) {
    for (const auto& n : s.graph.nodes()) {
      if (n.kind == NodeKind::content && !n.text.empty()) texts.push_back(n.text);
    }
  }
  if (texts.empty()) throw TrainingError("autoencode-pretrain: corpus has no node text");
  auto model = training_model(cfg);
  Trainer trainer(*model, cfg.train);
  const TrainOutput to{out, a.resume.empty() ? std::nullopt : std::optional<fs::path>(a.resume)};
  const auto rep = trainer.train(autoencode_objective(*model, texts), to);
  finish_training(*model, trainer, rep, out);
}

void cmd_train(const RunConfig& cfg, const Args& a, const fs::path& out) {
  write_run_metadata(out, "train", cfg);
  const auto data = load_data(cfg.train_data, "train_data");
  auto model = training_model(cfg);
  Trainer trainer(*model, cfg.train);
  const TrainOutput to{out, a.resume.empty() ? std::nullopt : std::optional<fs::path>(a.resume)};
  const auto rep = trainer.train(task_objective(*model, data, {.use_gnn = cfg.use_gnn}), to);
  finish_training(*model, trainer, rep, out);
}

EvalOptions eval_options(const EvalSettings& e) {
  EvalOptions o;
  o.encode.use_gnn = e.use_gnn;
  o.generate.max_new_tokens = e.max_new_tokens;
  const auto cands = load_candidates(e);
  if (!cands.empty()) o.candidates = cands;
  o.spd_miss_penalty = e.spd_miss_penalty;
  o.cn_miss_penalty = e.cn_miss_penalty;
  o.delta_samples = static_cast<std::size_t>(e.delta_samples);
  o.generate_answers = e.generate;
  o.shards = e.shards;
  return o;
}

void write_report(const EvalReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "report.json", to_json(r));
  write_text(dir / "report.txt", report_table(r));
  write_text(dir / "transcripts.jsonl", transcripts_jsonl(r));
}

void cmd_eval(const RunConfig& cfg, const Args& a, const fs::path& out) {
  write_run_metadata(out, "eval", cfg);
  const auto model = load_model(a.checkpoint.empty() ? cfg.eval.checkpoint : a.checkpoint);
  const auto data = load_data(cfg.eval.data, "eval.data");
  const auto rep = evaluate(*model, data, eval_options(cfg.eval));
  write_report(rep, out);
  std::cout << report_table(rep);
}

void cmd_ablate_edges(const RunConfig& cfg, const fs::path& out) {
  write_run_metadata(out, "ablate-edges", cfg);
  const auto opt = eval_options(cfg.eval);
  nlohmann::json cmp = nlohmann::json::object();
  std::ostringstream table;
  table << std::left << std::setw(10) << "wiring" << std::setw(14) << "accuracy" << "perplexity\n";
  for (const auto& [name, arm] : {std::pair{"single", cfg.ablate_single}, std::pair{"double", cfg.ablate_double}}) {
    if (arm.checkpoint.empty() || arm.data.empty()) throw ConfigError(std::string("ablate.") + name + " needs checkpoint and data");
    const auto model = load_model(arm.checkpoint);
    const auto rep = evaluate(*model, read_jsonl(arm.data), opt);
    write_report(rep, out / name);
    auto val = [&](const char* k) { return rep.get(k) ? nlohmann::json(*rep.get(k)) : nlohmann::json(); };
    cmp[name] = {{"accuracy", val("accuracy")}, {"perplexity", val("perplexity")}};
    auto fmt = [](const nlohmann::json& v) { return v.is_null() ? std::string("undefined") : std::to_string(v.get<double>()); };
    table << std::setw(10) << name << std::setw(14) << fmt(cmp[name]["accuracy"]) << fmt(cmp[name]["perplexity"]) << '\n';
  }
  if (cmp["single"]["accuracy"].is_number() && cmp["double"]["accuracy"].is_number()) {
    cmp["accuracy_gap"] = cmp["double"]["accuracy"].get<double>() - cmp["single"]["accuracy"].get<double>();
    table << "double - single accuracy: " << cmp["accuracy_gap"].get<double>() << '\n';
  }
  write_json(out / "comparison.json", cmp);
  write_text(out / "comparison.txt", table.str());
  std::cout << table.str();
}

void cmd_inspect(const RunConfig& cfg, const Args& a, const fs::path& out) {
  write_run_metadata(out, "inspect-checkpoint", cfg);
  if (a.checkpoint.empty()) throw ConfigError("inspect-checkpoint needs --checkpoint");
  const auto ck = Checkpoint::load(a.checkpoint);
  nlohmann::json j{{"path", a.checkpoint}};
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t params = 0;
  for (const auto& name : ck.names()) {
    const auto& e = ck.entry(name);
    if (name.starts_with("__")) {
      if (e.dtype == DType::u8) {
        const auto text = ck.bytes(name);
        const auto parsed = nlohmann::json::parse(text, nullptr, false);
        j[name] = parsed.is_discarded() ? nlohmann::json(text) : parsed;
      } else if (e.dims.size() == 1 && e.dims[0] == 1) {
        j[name] = ck.values<double>(name)[0];
      }
      continue;
    }
    params += numel(e.dims);
    tensors.push_back({{"name", name}, {"shape", e.dims}});
  }
  j["tensors"] = tensors;
  j["parameter_count"] = params;
  if (ck.contains("__config__")) {
    const auto mc = GofaModel::config_from(ck);
    GofaModel probe(mc);
    probe.load(ck);
    nlohmann::json gates = nlohmann::json::array();
    for (const auto& l : probe.gnn_layers()) {
      gates.push_back({{"gate_gnn", std::tanh(l.gate_gnn[0])}, {"gate_ff", std::tanh(l.gate_ff[0])}});
    }
    j["gnn_gates_tanh"] = gates;
  }
  write_json(out / "inspect.json", j);
  std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gofa: generative graph language model toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(GOFA_VERSION) + " (" + GOFA_BUILD_ID + ")");
  Args a;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", a.config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", a.overrides, "override, e.g. train.lr=0.001 (repeatable)");
    sub->add_option("-o,--out", a.out, "output directory")->required();
  };
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic task corpus");
  auto* ae = app.add_subcommand("autoencode-pretrain", "train compressor and decoder to reconstruct node text");
  auto* train = app.add_subcommand("train", "train on a task corpus");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  auto* abl = app.add_subcommand("ablate-edges", "compare single and double prompt wiring");
  auto* insp = app.add_subcommand("inspect-checkpoint", "describe a checkpoint");
  for (auto* s : {gen, ae, train, ev, abl, insp}) add_common(s);
  ae->add_option("--resume", a.resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--resume", a.resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", a.checkpoint, "checkpoint (overrides eval.checkpoint)");
  insp->add_option("--checkpoint", a.checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  RunConfig cfg;
  try {
    cfg = load_run_config(a.config, a.overrides);
  } catch (const std::exception& e) {
    log::error(e.what());
    return 2;
  }
  const fs::path out(a.out);
  try {
    if (*gen) cmd_gen_corpus(cfg, out);
    if (*ae) cmd_autoencode(cfg, a, out);
    if (*train) cmd_train(cfg, a, out);
    if (*ev) cmd_eval(cfg, a, out);
    if (*abl) cmd_ablate_edges(cfg, out);
    if (*insp) cmd_inspect(cfg, a, out);
  } catch (const ConfigError& e) {
    log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 3;
  }
  return 0;
}
