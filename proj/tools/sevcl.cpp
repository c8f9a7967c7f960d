/**
 * Copyright 2026 The Sevcl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sevcl/arabic_text.hpp"
#include "sevcl/checkpoint.hpp"
#include "sevcl/dataset.hpp"
#include "sevcl/errors.hpp"
#include "sevcl/eval.hpp"
#include "sevcl/pipeline.hpp"
#include "sevcl/platform.hpp"
#include "sevcl/run_config.hpp"
#include "sevcl/severity.hpp"
#include "sevcl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

using namespace sevcl;

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write '" + path + "'");
  out << text;
  if (!out) fail(ErrorKind::kIo, "write failed for '" + path + "'");
}

std::vector<QaRecord> read_records(const std::string& path) {
  if (path == "-") return parse_jsonl(std::cin);
  return load_jsonl(path);
}

void write_records(const std::string& path, const std::vector<QaRecord>& records) {
  if (path == "-") {
    write_jsonl(std::cout, records);
  } else {
    write_jsonl(records, path);
  }
}

std::string stats_line(const SeverityStats& s) {
  std::ostringstream out;
  out << "mild=" << s.mild << " moderate=" << s.moderate << " critical=" << s.critical << " total=" << s.total;
  if (s.unlabeled) out << " unlabeled=" << s.unlabeled;
  return out.str();
}

std::string records_hash(const std::vector<QaRecord>& records) { return eval_set_hash(records); }

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

const Lexicon& lexicon_or_default(const std::string& path, std::optional<Lexicon>& storage) {
  if (path.empty()) return default_lexicon();
  storage = load_lexicon(path);
  return *storage;
}

// ---------------------------------------------------------------------------

// Checked after --print-config so that flag works without run inputs.
void require(const std::string& value, const char* flag) {
  if (value.empty()) fail(ErrorKind::kInvalidArgument, std::string(flag) + " is required");
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  bool print_config = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--set", overrides, "Override a config value, e.g. --set train.base_lr=1e-3");
    cmd->add_flag("--print-config", print_config, "Print the resolved config and exit");
  }

  RunConfig resolve(std::optional<std::uint64_t> seed) const {
    std::vector<std::string> all = overrides;
    if (seed) all.push_back("seed=" + std::to_string(*seed));
    return resolve_run_config(config_path, all);
  }
};

int cmd_normalize(const std::string& in_path, const std::string& out_path) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (in_path != "-") {
    file.open(in_path, std::ios::binary);
    if (!file) fail(ErrorKind::kIo, "cannot open '" + in_path + "'");
    in = &file;
  }
  std::ostringstream out;
  for (std::string line; std::getline(*in, line);) out << arabic::normalize(line) << "\n";
  write_text(out_path, out.str());
  return 0;
}

int cmd_annotate(const std::string& in_path, const std::string& out_path, const std::string& lexicon_path,
                 bool keep_existing) {
  std::optional<Lexicon> storage;
  const Lexicon& lexicon = lexicon_or_default(lexicon_path, storage);
  auto records = read_records(in_path);
  const SeverityStats s = annotate_dataset(records, lexicon, keep_existing);
  write_records(out_path, records);
  (out_path == "-" ? std::cerr : std::cout) << stats_line(s) << "\n";
  return 0;
}

int cmd_stage(const std::string& in_path, const std::string& out_dir) {
  const auto records = read_records(in_path);
  const StagePartition p = stage_split(records);
  fs::create_directories(out_dir);
  for (int k = 1; k <= 3; ++k) {
    const auto& ids = p.stage(k);
    std::ostringstream manifest;
    for (RecordId id : ids) manifest << id << "\n";
    write_text((fs::path(out_dir) / ("d" + std::to_string(k) + ".ids")).string(), manifest.str());
    write_jsonl(select(records, ids), (fs::path(out_dir) / ("d" + std::to_string(k) + ".jsonl")).string());
    std::cout << "d" << k << " " << ids.size() << "\n";
  }
  return 0;
}

int cmd_split(const std::string& in_path, const std::string& train_out, const std::string& eval_out,
              double fraction, std::uint64_t seed) {
  const auto records = read_records(in_path);
  const Split s = train_eval_split(records, fraction, derive_seed(seed, "train_eval_split"));
  write_jsonl(s.train, train_out);
  write_jsonl(s.eval, eval_out);
  std::cout << "train=" << s.train.size() << " eval=" << s.eval.size() << "\n";
  return 0;
}

struct TrainFlags {
  std::string mode = "curriculum";
  std::string data;
  std::string eval_data;
  std::string out_dir;
  std::string base;
  std::string lexicon;
  std::string run_label;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

ordered_json epochs_json(const std::vector<EpochLog>& epochs) {
  ordered_json arr = ordered_json::array();
  for (const auto& e : epochs) {
    arr.push_back({{"stage", e.stage}, {"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss},
                   {"presentations", e.presentations}});
  }
  return arr;
}

int cmd_train(const TrainFlags& f, const RunConfig& cfg) {
  const auto mode = parse_train_mode(f.mode);
  if (!mode) fail(ErrorKind::kInvalidArgument, "--mode must be baseline, standard or curriculum");
  std::optional<Lexicon> storage;
  const Lexicon& lexicon = lexicon_or_default(f.lexicon, storage);
  std::optional<std::vector<QaRecord>> eval_records;
  if (!f.eval_data.empty()) eval_records = load_jsonl(f.eval_data);
  PreparedData data = prepare_data(load_jsonl(f.data), cfg, lexicon, std::move(eval_records));
  if (data.annotation.unlabeled) {
    std::cerr << "note: labeled " << data.annotation.unlabeled << " unlabeled records with the lexicon\n";
  }
  const fs::path dir = fs::absolute(f.out_dir);
  fs::create_directories(dir);
  write_jsonl(data.train, (dir / "train.jsonl").string());
  write_jsonl(data.eval, (dir / "eval.jsonl").string());
  const std::string run_label = f.run_label.empty() ? "seed-" + std::to_string(cfg.seed) : f.run_label;

  ordered_json manifest;
  manifest["kind"] = "run_manifest";
  manifest["mode"] = f.mode;
  manifest["run"] = run_label;
  manifest["seed"] = cfg.seed;
  manifest["config"] = to_json(cfg);
  manifest["data"] = {{"path", f.data},
                      {"train_records", data.train.size()},
                      {"eval_records", data.eval.size()},
                      {"train_fnv1a64", records_hash(data.train)},
                      {"eval_fnv1a64", records_hash(data.eval)},
                      {"train_path", (dir / "train.jsonl").string()},
                      {"eval_path", (dir / "eval.jsonl").string()}};

  // Base model: loaded, or pretrained here.
  Model base;
  std::string base_path;
  if (!f.base.empty()) {
    ModelCheckpoint ck = load_model(f.base);
    base = std::move(ck.model);
    data.vocab = std::move(ck.vocab);
    base_path = fs::absolute(f.base).string();
    manifest["pretrain"] = {{"base_checkpoint", base_path}};
  } else {
    const PretrainResult pre = pretrain_base(cfg, data);
    base = pre.model;
    base_path = (dir / "base.ckpt").string();
    save_model(base_path, base, data.vocab, {{"mode", "pretrain"}, {"seed", cfg.seed}, {"run", run_label}});
    manifest["pretrain"] = {{"epochs", cfg.train.pretrain_epochs},
                            {"corpus", cfg.pretrain_corpus},
                            {"initial_loss", pre.initial_loss},
                            {"final_loss", pre.final_loss},
                            {"epoch_losses", pre.epoch_losses},
                            {"base_checkpoint", base_path}};
    std::cerr << "pretrained base: loss " << pre.initial_loss << " -> " << pre.final_loss << "\n";
  }

  const std::string model_path = (dir / "model.ckpt").string();
  if (*mode == TrainMode::kBaseline) {
    save_model(model_path, base, data.vocab,
               {{"mode", "baseline"}, {"seed", cfg.seed}, {"run", run_label}, {"train_presentations", 0}});
    manifest["train_presentations"] = 0;
    manifest["epochs"] = ordered_json::array();
    manifest["stage_lrs"] = ordered_json::array();
    manifest["checkpoints"] = {{"model", model_path}, {"base", base_path}};
  } else {
    const std::string state_path = (dir / "train_state.ckpt").string();
    const TrainConfig tc = train_config_for(cfg, *mode);
    const bool resuming = f.resume && fs::exists(state_path);
    FinetuneRun run = resuming ? FinetuneRun::resume(state_path, data.train, tc) : make_run(*mode, base, data, cfg);
    if (resuming) std::cerr << "resuming from " << state_path << "\n";
    run.on_stage_end = [&](const StagePlan& stage, const FinetuneRun&) {
      const std::string path = (dir / ("stage" + std::to_string(stage.stage) + ".adapter.ckpt")).string();
      save_adapter(path, run.model(), run.vocab(), base_path,
                   {{"mode", f.mode}, {"seed", cfg.seed}, {"run", run_label}, {"stage_reached", stage.stage}});
      run.add_stage_checkpoint(path);
    };
    while (!run.finished()) {
      run.run_epoch();
      const EpochLog& e = run.state().epochs.back();
      std::cerr << "stage " << e.stage << " epoch " << e.epoch << " lr " << e.lr << " loss " << e.mean_loss << "\n";
      run.save_state(state_path);
    }
    const int last_stage = run.plan().empty() ? 0 : run.plan().back().stage;
    save_adapter(model_path, run.model(), run.vocab(), base_path,
                 {{"mode", f.mode},
                  {"seed", cfg.seed},
                  {"run", run_label},
                  {"stage_reached", last_stage},
                  {"train_presentations", run.state().total_presentations}});
    ordered_json lrs = ordered_json::array();
    for (const auto& [stage, lr] : run.state().stage_lrs) lrs.push_back({{"stage", stage}, {"lr", lr}});
    manifest["train_presentations"] = run.state().total_presentations;
    manifest["epochs"] = epochs_json(run.state().epochs);
    manifest["stage_lrs"] = lrs;
    manifest["checkpoints"] = {{"model", model_path},
                               {"base", base_path},
                               {"train_state", state_path},
                               {"stages", run.state().stage_checkpoints}};
  }
  manifest["created_at"] = timestamp();
  write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  std::cout << "wrote " << model_path << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, const std::string& out_path,
             const std::string& mode_label, const std::string& run_label, const RunConfig& cfg) {
  const Container c = read_container(model_path);
  const std::string kind = c.header.value("kind", std::string());
  const auto records = load_jsonl(data_path);
  EvalReport rep;
  nlohmann::json provenance;
  if (kind == "model") {
    const ModelCheckpoint ck = model_from_container(c);
    rep = evaluate(ck.model, ck.vocab, records, cfg.decode);
    provenance = ck.provenance;
  } else if (kind == "adapter") {
    const AdapterCheckpoint ck = load_adapter(model_path);
    rep = evaluate(ck.model, ck.vocab, records, cfg.decode);
    provenance = ck.provenance;
  } else {
    fail(ErrorKind::kCorruptFile, model_path + ": not a model or adapter checkpoint");
  }
  rep.mode = !mode_label.empty() ? mode_label : provenance.value("mode", std::string("baseline"));
  rep.run = !run_label.empty() ? run_label : provenance.value("run", std::string("run"));
  rep.train_presentations = provenance.value("train_presentations", std::size_t{0});
  rep.provenance = {{"checkpoint", model_path}, {"data", data_path}, {"checkpoint_provenance", provenance},
                    {"decode", {{"mode", "greedy"}, {"max_new_tokens", cfg.decode.max_new_tokens}}}};
  write_text(out_path, to_json(rep).dump(2) + "\n");
  std::cerr << rep.mode << " token_f1=" << rep.token_f1 << " lcs_f1=" << rep.lcs_f1
            << " perplexity=" << rep.perplexity << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& runs, const std::string& out_prefix) {
  std::vector<EvalReport> reports;
  for (const auto& r : runs) {
    fs::path p = r;
    if (fs::is_directory(p)) p /= "report.json";
    std::ifstream in(p);
    if (!in) fail(ErrorKind::kIo, "cannot open report '" + p.string() + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kParse, p.string() + ": " + e.what());
    }
    reports.push_back(eval_report_from_json(j));
  }
  const Comparison cmp = compare_report(reports);
  std::cout << cmp.table;
  if (!out_prefix.empty()) {
    write_text(out_prefix + ".txt", cmp.table);
    write_text(out_prefix + ".json", cmp.summary.dump(2) + "\n");
    write_text(out_prefix + ".csv", cmp.csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  sevcl::tune_allocator();
  CLI::App app{"Severity-staged curriculum fine-tuning toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string in_path = "-";
  std::string out_path = "-";

  auto* normalize = app.add_subcommand("normalize", "Normalize Arabic text, one line at a time");
  normalize->add_option("--in", in_path, "Input text file (- for stdin)");
  normalize->add_option("--out", out_path, "Output file (- for stdout)");

  std::string lexicon_path;
  bool keep_existing = false;
  auto* annotate = app.add_subcommand("annotate", "Attach severity labels to a JSONL dataset");
  annotate->add_option("--in", in_path, "Input JSONL (- for stdin)");
  annotate->add_option("--out", out_path, "Output JSONL (- for stdout)");
  annotate->add_option("--lexicon", lexicon_path, "Lexicon JSON (default: built-in)");
  annotate->add_flag("--keep-existing", keep_existing, "Keep labels already present");

  std::string out_dir;
  auto* stage = app.add_subcommand("stage", "Write the nested stage subsets d1/d2/d3");
  stage->add_option("--in", in_path, "Annotated JSONL")->required();
  stage->add_option("--out-dir", out_dir, "Output directory")->required();

  std::size_t n_per_tier = 600;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
  synth->add_option("--n-per-tier", n_per_tier, "Records per severity tier");
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--out", out_path, "Output JSONL (- for stdout)");

  std::string train_out;
  std::string eval_out;
  double fraction = 0.9;
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "Stratified train/eval split");
  split->add_option("--in", in_path, "Input JSONL")->required();
  split->add_option("--train-out", train_out, "Training JSONL")->required();
  split->add_option("--eval-out", eval_out, "Evaluation JSONL")->required();
  split->add_option("--fraction", fraction, "Training fraction");
  split->add_option("--seed", split_seed, "Seed");

  TrainFlags tf;
  ConfigFlags train_cfg;
  auto* train = app.add_subcommand("train", "Pretrain (unless --base) and run one training regime");
  train->add_option("--mode", tf.mode, "baseline | standard | curriculum");
  train->add_option("--data", tf.data, "Training JSONL (split internally unless --eval-data)");
  train->add_option("--eval-data", tf.eval_data, "Held-out JSONL");
  train->add_option("--out-dir", tf.out_dir, "Run directory");
  train->add_option("--base", tf.base, "Base model checkpoint to fine-tune");
  train->add_option("--lexicon", tf.lexicon, "Lexicon for unlabeled records");
  train->add_option("--run", tf.run_label, "Run label used in reports");
  train->add_option("--seed", tf.seed, "Run seed (overrides the config)");
  train->add_flag("--resume", tf.resume, "Continue from the run directory's saved state");
  train_cfg.attach(train);

  std::string model_path;
  std::string mode_label;
  std::string run_label;
  ConfigFlags eval_cfg;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a JSONL evaluation set");
  eval->add_option("--model", model_path, "Model or adapter checkpoint");
  eval->add_option("--data", in_path, "Evaluation JSONL");
  eval->add_option("--out", out_path, "Report JSON (- for stdout)");
  eval->add_option("--mode", mode_label, "Mode label (default: from the checkpoint)");
  eval->add_option("--run", run_label, "Run label (default: from the checkpoint)");
  eval_cfg.attach(eval);

  std::vector<std::string> runs;
  std::string out_prefix;
  auto* report = app.add_subcommand("report", "Render the baseline/standard/curriculum comparison");
  report->add_option("--runs", runs, "Report files or run directories")->required();
  report->add_option("--out", out_prefix, "Output prefix for .txt, .json and .csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*normalize) return cmd_normalize(in_path, out_path);
    if (*annotate) return cmd_annotate(in_path, out_path, lexicon_path, keep_existing);
    if (*stage) return cmd_stage(in_path, out_dir);
    if (*synth) {
      write_records(out_path, synth_generate(n_per_tier, synth_seed));
      return 0;
    }
    if (*split) return cmd_split(in_path, train_out, eval_out, fraction, split_seed);
    if (*train) {
      const RunConfig cfg = train_cfg.resolve(tf.seed);
      if (train_cfg.print_config) {
        std::cout << to_json(cfg).dump(2) << "\n";
        return 0;
      }
      require(tf.data, "--data");
      require(tf.out_dir, "--out-dir");
      return cmd_train(tf, cfg);
    }
    if (*eval) {
      const RunConfig cfg = eval_cfg.resolve(std::nullopt);
      if (eval_cfg.print_config) {
        std::cout << to_json(cfg).dump(2) << "\n";
        return 0;
      }
      require(model_path, "--model");
      require(in_path, "--data");
      return cmd_eval(model_path, in_path, out_path, mode_label, run_label, cfg);
    }
    if (*report) return cmd_report(runs, out_prefix);
  } catch (const sevcl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
