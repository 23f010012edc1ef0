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

// cleanerbench: generate toy corpora, plant backdoors, run defenses and
// sweeps from a JSON config.
//
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numeric failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cleaner/cleaner.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

fs::path out_dir(const std::string& flag, const fs::path& config) {
  if (!flag.empty()) return flag;
  return cleaner::load_experiment(config).output_path();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoor attack and counterfactual fine-tuning defense workbench"};
  app.require_subcommand(1);

  std::string config, out, victim, checkpoint, data, trigger;
  std::string lexicon = CLEANER_DATA_DIR "/lexicon.txt";
  std::vector<std::size_t> ks = cleaner::kDefaultKs;

  auto* gen = app.add_subcommand("gen-data", "Write the train/eval corpus to <out>/data");
  gen->add_option("-c,--config", config, "Experiment config (JSON, comments allowed)")
      ->required()->check(CLI::ExistingFile);
  gen->add_option("-o,--out", out, "Output root (default: output_dir from the config)");

  auto* atk = app.add_subcommand("attack", "Pre-train, poison and fine-tune a victim into <out>/victim");
  atk->add_option("-c,--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  atk->add_option("-o,--out", out, "Output root (default: output_dir from the config)");

  auto* def = app.add_subcommand("defend", "Fine-tune a victim with FT, CleanCLIP or CleanerCLIP");
  def->add_option("-c,--config", config, "Experiment config")->required()->check(CLI::ExistingFile);
  def->add_option("-v,--victim", victim, "Victim directory written by `attack`")
      ->required()->check(CLI::ExistingDirectory);
  def->add_option("-o,--out", out, "Output root (default: output_dir from the config)");

  auto* ev = app.add_subcommand("eval", "Top-k BA/ASR of a checkpoint on a saved dataset");
  ev->add_option("-m,--checkpoint", checkpoint, "Checkpoint directory")
      ->required()->check(CLI::ExistingDirectory);
  ev->add_option("-d,--data", data, "Dataset directory (e.g. <out>/data/eval)")
      ->required()->check(CLI::ExistingDirectory);
  ev->add_option("-t,--trigger", trigger, "Trigger directory (e.g. <out>/victim/trigger)")
      ->required()->check(CLI::ExistingDirectory);
  ev->add_option("-l,--lexicon", lexicon, "Lexicon file")->check(CLI::ExistingFile)
      ->capture_default_str();
  ev->add_option("-k,--ks", ks, "Top-k cutoffs")->delimiter(',')->capture_default_str();
  ev->add_option("-o,--out", out, "Output directory")->required();

  auto* abl = app.add_subcommand("ablate", "Run a one-axis sweep against a single victim");
  abl->add_option("-c,--config", config, "Sweep config: experiment config plus a \"sweep\" section")
      ->required()->check(CLI::ExistingFile);
  abl->add_option("-o,--out", out, "Output root (default: output_dir from the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    fs::path written;
    if (*gen) written = cleaner::cmd::gen_data(config, out_dir(out, config));
    if (*atk) written = cleaner::cmd::attack(config, out_dir(out, config));
    if (*def) written = cleaner::cmd::defend(config, victim, out_dir(out, config));
    if (*ev) written = cleaner::cmd::eval(checkpoint, data, trigger, lexicon, ks, out);
    if (*abl) {
      fs::path root = out.empty() ? cleaner::load_sweep(config).base.output_path() : fs::path(out);
      written = cleaner::cmd::ablate(config, root);
    }
    std::printf("%s\n", written.string().c_str());
    return 0;
  } catch (const cleaner::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const cleaner::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const cleaner::NormError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const cleaner::Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
}
