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

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cleaner/attacks.hpp"
#include "cleaner/corpus.hpp"
#include "cleaner/error.hpp"
#include "cleaner/evaluation.hpp"
#include "cleaner/io.hpp"
#include "cleaner/lexicon.hpp"
#include "cleaner/model.hpp"
#include "cleaner/optim.hpp"
#include "cleaner/random.hpp"
#include "cleaner/training.hpp"

namespace cleaner {

using ojson = nlohmann::ordered_json;

// One attack -> defense -> evaluation run, fully specified.
struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "runs/default";
  std::string lexicon = "data/lexicon.txt";
  // Directory relative paths are resolved against; not serialized.
  std::filesystem::path base_dir = ".";

  CorpusConfig corpus;
  double train_fraction = 0.8;
  std::size_t embed_dim = 32;

  OptimConfig pretrain{.learning_rate = 1e-3, .warmup_steps = 100, .batch_size = 64, .epochs = 10};
  OptimConfig attack_optim{.learning_rate = 1e-3, .warmup_steps = 100, .batch_size = 128, .epochs = 5};
  OptimConfig defense_optim{.learning_rate = 3e-4, .warmup_steps = 100, .batch_size = 64, .epochs = 10};

  AttackSpec attack;
  DefenseSpec defense;
  std::vector<std::size_t> ks = kDefaultKs;

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
  std::filesystem::path output_path() const { return resolve(output_dir); }

  void validate() const {
    if (corpus.class_count < 2) throw ConfigError("corpus.class_count: must be >= 2");
    if (corpus.samples_per_class < 1) throw ConfigError("corpus.samples_per_class: must be >= 1");
    if (!(corpus.noise_std >= 0.0)) throw ConfigError("corpus.noise_std: must be >= 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
      throw ConfigError("corpus.train_fraction: must lie in (0, 1)");
    }
    if (embed_dim < 2) throw ConfigError("model.embed_dim: must be >= 2");
    pretrain.validate("pretrain");
    attack_optim.validate("attack");
    defense_optim.validate("defense");
    defense.validate();
    if (attack.target_class >= corpus.class_count) {
      throw ConfigError("attack.target_class: must be < corpus.class_count");
    }
    if (ks.empty()) throw ConfigError("eval.ks: must not be empty");
    for (auto k : ks)
      if (k == 0) throw ConfigError("eval.ks: every k must be >= 1");
  }
};

namespace detail {

// Reads known fields, remembers which keys were consumed, and rejects the
// rest so typos surface as field-level errors.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key) + ": has the wrong type (" + j_.at(key).dump() + ")");
    }
  }

  // Absent or null leaves the value unset.
  template <typename T>
  void get_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  template <typename Fn>
  void section(const char* key, Fn&& fn) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    FieldReader child(j_.at(key), field(key));
    fn(child);
    child.finish();
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key().c_str()) + ": unknown field");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "<root>" : path_; }
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_optim(FieldReader& r, OptimConfig& o) {
  r.get("learning_rate", o.learning_rate);
  r.get("warmup_steps", o.warmup_steps);
  r.get("weight_decay", o.weight_decay);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("epsilon", o.epsilon);
  r.get("batch_size", o.batch_size);
  r.get("epochs", o.epochs);
}

inline ojson optim_json(const OptimConfig& o) {
  return {{"learning_rate", o.learning_rate}, {"warmup_steps", o.warmup_steps},
          {"weight_decay", o.weight_decay},   {"beta1", o.beta1},
          {"beta2", o.beta2},                 {"epsilon", o.epsilon},
          {"batch_size", o.batch_size},       {"epochs", o.epochs}};
}

inline std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') ++line, col = 1;
    else ++col;
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline void apply_json(ExperimentConfig& c, const nlohmann::json& j) {
  detail::FieldReader r(j, "");
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("lexicon", c.lexicon);
  r.section("corpus", [&](detail::FieldReader& s) {
    s.get("class_count", c.corpus.class_count);
    s.get("samples_per_class", c.corpus.samples_per_class);
    s.get("noise_std", c.corpus.noise_std);
    s.get("prototype_contrast", c.corpus.prototype_contrast);
    s.get("height", c.corpus.shape.height);
    s.get("width", c.corpus.shape.width);
    s.get("channels", c.corpus.shape.channels);
    s.get("train_fraction", c.train_fraction);
    s.get("filler_prob", c.corpus.filler_prob);
    s.get("relation_prob", c.corpus.relation_prob);
    s.get("max_adjectives", c.corpus.max_adjectives);
  });
  r.section("model", [&](detail::FieldReader& s) { s.get("embed_dim", c.embed_dim); });
  r.section("pretrain", [&](detail::FieldReader& s) { detail::read_optim(s, c.pretrain); });
  r.section("attack", [&](detail::FieldReader& s) {
    std::string kind = to_string(c.attack.kind);
    s.get("kind", kind);
    c.attack.kind = attack_kind_from_string(kind);
    s.get("poison_count", c.attack.poison_count);
    s.get("target_class", c.attack.target_class);
    s.get("patch_size", c.attack.patch_size);
    s.get("blend_ratio", c.attack.blend_ratio);
    s.section("feature", [&](detail::FieldReader& f) {
      f.get("steps", c.attack.feature.steps);
      f.get("step_size", c.attack.feature.step_size);
      f.get("epsilon", c.attack.feature.epsilon);
      f.get("sample_count", c.attack.feature.sample_count);
    });
    s.section("optim", [&](detail::FieldReader& o) { detail::read_optim(o, c.attack_optim); });
  });
  r.section("defense", [&](detail::FieldReader& s) {
    std::string mode = to_string(c.defense.mode);
    s.get("mode", mode);
    c.defense.mode = defense_mode_from_string(mode);
    s.get("K", c.defense.K);
    s.get("spread_quadruples", c.defense.spread_quadruples);
    s.section("augment", [&](detail::FieldReader& a) {
      a.get("image_noise_std", c.defense.augment.image_noise_std);
      a.get("token_dropout", c.defense.augment.token_dropout);
    });
    s.section("optim", [&](detail::FieldReader& o) { detail::read_optim(o, c.defense_optim); });
  });
  r.section("loss", [&](detail::FieldReader& s) {
    auto& l = c.defense.loss;
    s.get("t_p", l.t_p);
    s.get("t_n", l.t_n);
    s.get("alpha", l.alpha);
    s.get("beta", l.beta);
    s.get("lambda_ss", l.lambda_ss);
    s.get("own_negative_only", l.own_negative_only);
    s.get_optional("clip_temperature", l.clip_temperature);
  });
  r.section("eval", [&](detail::FieldReader& s) { s.get("ks", c.ks); });
  r.finish();
}

// Accepts // and /* */ comments.
inline nlohmann::json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": " + detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0) +
                      ": malformed JSON");
  }
}

inline ExperimentConfig parse_experiment(const nlohmann::json& j,
                                         const std::filesystem::path& base_dir = ".") {
  ExperimentConfig c;
  c.base_dir = base_dir;
  apply_json(c, j);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  auto text = io::read_file(path);
  auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  return parse_experiment(parse_config_text(text, path.string()), base);
}

// Fully resolved config, defaults included.
inline ojson to_json(const ExperimentConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["lexicon"] = c.lexicon;
  j["corpus"] = {{"class_count", c.corpus.class_count},
                 {"samples_per_class", c.corpus.samples_per_class},
                 {"noise_std", c.corpus.noise_std},
                 {"prototype_contrast", c.corpus.prototype_contrast},
                 {"height", c.corpus.shape.height},
                 {"width", c.corpus.shape.width},
                 {"channels", c.corpus.shape.channels},
                 {"train_fraction", c.train_fraction},
                 {"filler_prob", c.corpus.filler_prob},
                 {"relation_prob", c.corpus.relation_prob},
                 {"max_adjectives", c.corpus.max_adjectives}};
  j["model"] = {{"embed_dim", c.embed_dim}};
  j["pretrain"] = detail::optim_json(c.pretrain);
  j["attack"] = {{"kind", to_string(c.attack.kind)},
                 {"poison_count", c.attack.poison_count},
                 {"target_class", c.attack.target_class},
                 {"patch_size", c.attack.patch_size},
                 {"blend_ratio", c.attack.blend_ratio},
                 {"feature",
                  {{"steps", c.attack.feature.steps},
                   {"step_size", c.attack.feature.step_size},
                   {"epsilon", c.attack.feature.epsilon},
                   {"sample_count", c.attack.feature.sample_count}}},
                 {"optim", detail::optim_json(c.attack_optim)}};
  j["defense"] = {{"mode", to_string(c.defense.mode)},
                  {"K", c.defense.K},
                  {"spread_quadruples", c.defense.spread_quadruples},
                  {"augment",
                   {{"image_noise_std", c.defense.augment.image_noise_std},
                    {"token_dropout", c.defense.augment.token_dropout}}},
                  {"optim", detail::optim_json(c.defense_optim)}};
  const auto& l = c.defense.loss;
  j["loss"] = {{"t_p", l.t_p},
               {"t_n", l.t_n},
               {"alpha", l.alpha},
               {"beta", l.beta},
               {"lambda_ss", l.lambda_ss},
               {"own_negative_only", l.own_negative_only},
               {"clip_temperature", l.clip_temperature ? ojson(*l.clip_temperature) : ojson(nullptr)}};
  j["eval"] = {{"ks", c.ks}};
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) {
  return io::sha256_hex(to_json(c).dump());
}

// --- Pipeline stages ------------------------------------------------------

struct Corpus {
  std::shared_ptr<const Lexicon> lexicon;
  Vocabulary vocab;
  PairDataset train;
  PairDataset eval;
};

inline Corpus prepare_corpus(const ExperimentConfig& c) {
  Corpus out;
  out.lexicon = std::make_shared<const Lexicon>(Lexicon::load(c.resolve(c.lexicon).string()));
  out.vocab = Vocabulary(*out.lexicon);
  auto full = generate_corpus(c.corpus, out.lexicon, c.seed);
  Rng rng = make_rng(c.seed, "split");
  auto parts = split(full, {c.train_fraction, 1.0 - c.train_fraction}, rng);
  out.train = std::move(parts.train);
  out.eval = std::move(parts.eval);
  return out;
}

// Clean contrastive pre-training from random init; stands in for the
// publicly released clean model.
inline ModelParams pretrain_clean(const ExperimentConfig& c, const Corpus& corpus) {
  Rng init_rng = make_rng(c.seed, "init");
  auto params = init_params(c.embed_dim, corpus.train.shape.pixel_count(), corpus.vocab.size(),
                            init_rng);
  LossConfig loss = c.defense.loss;
  return finetune(std::move(params), corpus.train, corpus.vocab, LossSelector::Clip, c.pretrain,
                  loss, c.defense.augment, derive_seed(c.seed, "pretrain"))
      .params;
}

inline Trigger build_trigger(const ExperimentConfig& c, const Corpus& corpus,
                             const ModelParams& clean) {
  c.attack.validate(corpus.train);
  if (c.attack.kind != AttackKind::FeatureOpt) {
    return make_trigger(c.attack, corpus.train.shape, c.seed);
  }
  Rng rng = make_rng(c.seed, "feature-trigger");
  return optimize_feature_trigger(clean, corpus.vocab, corpus.train, c.attack, rng);
}

inline TopKReport evaluate(const ExperimentConfig& c, const Corpus& corpus,
                           const ModelParams& params, const Trigger& trigger) {
  auto ks = resolve_ks(c.ks, corpus.eval.class_count);
  auto triggered = make_triggered_set(corpus.eval, trigger);
  return topk_metrics(params, corpus.vocab, corpus.eval, triggered, trigger.target_class, ks);
}

struct AttackOutcome {
  ModelParams victim;
  PoisonReport report;
  TopKReport baseline;
};

inline AttackOutcome run_attack(const ExperimentConfig& c, const Corpus& corpus,
                                const ModelParams& clean) {
  auto trigger = build_trigger(c, corpus, clean);
  Rng rng = make_rng(c.seed, "poison");
  auto [poisoned, report] = poison_dataset(corpus.train, trigger, c.attack.poison_count, rng);
  LossConfig loss = c.defense.loss;
  auto victim = finetune(clean, poisoned, corpus.vocab, LossSelector::Clip, c.attack_optim, loss,
                         c.defense.augment, derive_seed(c.seed, "attack"))
                    .params;
  auto baseline = evaluate(c, corpus, victim, trigger);
  return {std::move(victim), std::move(report), std::move(baseline)};
}

inline TrainResult run_defense(const ExperimentConfig& c, const Corpus& corpus,
                               const ModelParams& victim, const Trigger& trigger,
                               bool eval_each_epoch = true) {
  EvalHook hook;
  if (eval_each_epoch) {
    hook = [&](const ModelParams& p, std::size_t) -> std::optional<TopKReport> {
      return evaluate(c, corpus, p, trigger);
    };
  }
  return defend(victim, corpus.train, corpus.vocab, c.defense, c.defense_optim, *corpus.lexicon,
                derive_seed(c.seed, "defense"), hook);
}

// Report JSON: metrics plus the run metadata that produced them.
inline ojson report_json(const ExperimentConfig& c, const TopKReport& r, const std::string& phase) {
  ojson j = to_json(r);
  j["phase"] = phase;
  j["seed"] = c.seed;
  j["attack"] = to_string(c.attack.kind);
  j["defense"] = to_string(c.defense.mode);
  j["K"] = c.defense.K;
  j["alpha"] = c.defense.loss.alpha;
  j["beta"] = c.defense.loss.beta;
  j["t_p"] = c.defense.loss.t_p;
  j["t_n"] = c.defense.loss.t_n;
  j["config_hash"] = config_hash(c);
  return j;
}

}  // namespace cleaner
