// Copyright 2026 The cleanerbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cleaner/ablation.hpp"
#include "cleaner/attacks.hpp"
#include "cleaner/corpus.hpp"
#include "cleaner/error.hpp"
#include "cleaner/evaluation.hpp"
#include "cleaner/experiment.hpp"
#include "cleaner/io.hpp"
#include "cleaner/model.hpp"
#include "cleaner/training.hpp"

// Pipeline commands behind the cleanerbench executable. Each writes into a
// fresh subdirectory of `out` and never touches its inputs.
namespace cleaner::cmd {

namespace fs = std::filesystem;

// Records the hash of every input file so a run can be traced back to the
// exact bytes it consumed.
class Manifest {
 public:
  explicit Manifest(std::string command) { j_["command"] = std::move(command); }

  void input(const std::string& role, const fs::path& file) {
    j_["inputs"].push_back(
        {{"role", role}, {"file", file.filename().string()}, {"sha256", io::sha256_file(file)}});
  }
  void input_dir(const std::string& role, const fs::path& dir,
                 std::initializer_list<const char*> files) {
    for (const char* f : files) input(role, dir / f);
  }
  void output(const std::string& rel) { j_["outputs"].push_back(rel); }
  void set(const std::string& key, ojson v) { j_[key] = std::move(v); }

  void write(const fs::path& dir) const { io::write_file(dir / "manifest.json", j_.dump(2) + "\n"); }

 private:
  ojson j_;
};

inline void write_json(const fs::path& path, const ojson& j) {
  io::write_file(path, j.dump(2) + "\n");
}

inline void record_config(Manifest& m, const fs::path& config_path, const ExperimentConfig& c,
                          const fs::path& dir) {
  m.input("config", config_path);
  m.input("lexicon", c.resolve(c.lexicon));
  m.set("config_hash", config_hash(c));
  write_json(dir / "config.json", to_json(c));
  m.output("config.json");
}

inline void check_compatible(const Checkpoint& ck, const Corpus& corpus, const fs::path& where) {
  if (ck.vocab.tokens() != corpus.vocab.tokens()) {
    throw ConfigError(where.string() + ": checkpoint vocabulary differs from the config lexicon");
  }
  if (ck.params.pixel_count() != corpus.train.shape.pixel_count()) {
    throw ConfigError(where.string() + ": checkpoint image size differs from the config corpus");
  }
}

// out/data/{train,eval}
inline fs::path gen_data(const fs::path& config_path, const fs::path& out) {
  auto c = load_experiment(config_path);
  auto corpus = prepare_corpus(c);
  const auto dir = out / "data";
  io::ensure_dir(dir);
  Manifest m("gen-data");
  record_config(m, config_path, c, dir);
  save_dataset(corpus.train, dir / "train");
  save_dataset(corpus.eval, dir / "eval");
  for (const char* split : {"train", "eval"})
    for (const char* f : {"meta.json", "images.bin", "captions.txt"})
      m.output(std::string(split) + "/" + f);
  m.write(dir);
  return dir;
}

// out/victim: the poisoned fine-tune of a clean pre-trained model.
inline fs::path attack(const fs::path& config_path, const fs::path& out) {
  auto c = load_experiment(config_path);
  auto corpus = prepare_corpus(c);
  auto clean = pretrain_clean(c, corpus);
  auto outcome = run_attack(c, corpus, clean);
  const auto dir = out / "victim";
  io::ensure_dir(dir);
  Manifest m("attack");
  record_config(m, config_path, c, dir);
  save_checkpoint(clean, corpus.vocab, dir / "clean");
  save_checkpoint(outcome.victim, corpus.vocab, dir / "checkpoint");
  save_trigger(outcome.report.trigger, dir / "trigger");
  write_json(dir / "poison_report.json", to_json(outcome.report));
  write_json(dir / "report.json", report_json(c, outcome.baseline, "victim"));
  for (const char* f : {"clean/model.json", "clean/weights.bin", "checkpoint/model.json",
                        "checkpoint/weights.bin", "trigger/trigger.json", "trigger/trigger.bin",
                        "poison_report.json", "report.json"})
    m.output(f);
  m.write(dir);
  return dir;
}

// out/defense-<mode>: defended checkpoint, per-epoch history, final report.
inline fs::path defend(const fs::path& config_path, const fs::path& victim_dir,
                       const fs::path& out) {
  auto c = load_experiment(config_path);
  auto ck = load_checkpoint(victim_dir / "checkpoint");
  auto trigger = load_trigger(victim_dir / "trigger");
  auto corpus = prepare_corpus(c);
  check_compatible(ck, corpus, victim_dir / "checkpoint");
  auto result = run_defense(c, corpus, ck.params, trigger);
  auto final_report = evaluate(c, corpus, result.params, trigger);

  const auto dir = out / ("defense-" + to_string(c.defense.mode));
  io::ensure_dir(dir);
  Manifest m("defend");
  record_config(m, config_path, c, dir);
  m.input_dir("victim_checkpoint", victim_dir / "checkpoint", {"model.json", "weights.bin"});
  m.input_dir("trigger", victim_dir / "trigger", {"trigger.json", "trigger.bin"});
  save_checkpoint(result.params, corpus.vocab, dir / "checkpoint");
  io::write_file(dir / "history.csv", history_csv(result.history, resolve_ks(c.ks, corpus.eval.class_count)));
  write_json(dir / "report.json", report_json(c, final_report, "defense"));
  for (const char* f : {"checkpoint/model.json", "checkpoint/weights.bin", "history.csv",
                        "report.json"})
    m.output(f);
  m.write(dir);
  return dir;
}

// Zero-shot metrics for any checkpoint on a saved dataset; writes
// out/report.json.
inline fs::path eval(const fs::path& checkpoint_dir, const fs::path& data_dir,
                     const fs::path& trigger_dir, const fs::path& lexicon_path,
                     const std::vector<std::size_t>& ks, const fs::path& out) {
  auto ck = load_checkpoint(checkpoint_dir);
  auto lexicon = std::make_shared<const Lexicon>(Lexicon::load(lexicon_path.string()));
  auto ds = load_dataset(data_dir, lexicon);
  auto trigger = load_trigger(trigger_dir);
  if (ck.params.pixel_count() != ds.shape.pixel_count()) {
    throw ConfigError(checkpoint_dir.string() + ": checkpoint image size differs from the dataset");
  }
  for (const auto& name : ds.class_names) ck.vocab.id(name);

  auto triggered = make_triggered_set(ds, trigger);
  auto report = topk_metrics(ck.params, ck.vocab, ds, triggered, trigger.target_class,
                             resolve_ks(ks, ds.class_count));
  io::ensure_dir(out);
  Manifest m("eval");
  m.input_dir("checkpoint", checkpoint_dir, {"model.json", "weights.bin"});
  m.input_dir("dataset", data_dir, {"meta.json", "images.bin", "captions.txt"});
  m.input_dir("trigger", trigger_dir, {"trigger.json", "trigger.bin"});
  m.input("lexicon", lexicon_path);
  // No experiment config here: the hash covers every input plus the ks.
  ojson args;
  args["ks"] = ks;
  args["inputs"] = ojson::array();
  for (const fs::path& f : {checkpoint_dir / "model.json", checkpoint_dir / "weights.bin",
                            data_dir / "meta.json", data_dir / "images.bin",
                            data_dir / "captions.txt", trigger_dir / "trigger.json",
                            trigger_dir / "trigger.bin"})
    args["inputs"].push_back(io::sha256_file(f));
  args["inputs"].push_back(io::sha256_file(lexicon_path));
  const auto hash = io::sha256_hex(args.dump());
  m.set("config_hash", hash);
  ojson j = to_json(report);
  j["phase"] = "eval";
  j["target_class"] = trigger.target_class;
  j["config_hash"] = hash;
  write_json(out / "report.json", j);
  m.output("report.json");
  m.write(out);
  return out;
}

// out/sweep: one row per swept value, all against the same victim.
inline fs::path ablate(const fs::path& sweep_path, const fs::path& out) {
  auto spec = load_sweep(sweep_path);
  auto table = run_sweep(spec);
  const auto dir = out / "sweep";
  io::ensure_dir(dir);
  Manifest m("ablate");
  record_config(m, sweep_path, spec.base, dir);
  if (spec.base_file) m.input("base_config", *spec.base_file);
  m.set("axis", to_string(spec.axis));
  io::write_file(dir / "sweep.csv", sweep_csv(table));
  write_json(dir / "victim_report.json", report_json(spec.base, table.victim_report, "victim"));
  m.output("sweep.csv");
  m.output("victim_report.json");
  m.write(dir);
  return dir;
}

}  // namespace cleaner::cmd
