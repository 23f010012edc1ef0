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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cleaner/captions.hpp"
#include "cleaner/corpus.hpp"
#include "cleaner/error.hpp"
#include "cleaner/evaluation.hpp"
#include "cleaner/losses.hpp"
#include "cleaner/model.hpp"
#include "cleaner/optim.hpp"
#include "cleaner/random.hpp"

namespace cleaner {

// Views for the unimodal term: additive pixel noise and token dropout.
struct AugmentConfig {
  double image_noise_std = 0.3;
  double token_dropout = 0.2;

  void validate() const {
    if (!(image_noise_std >= 0.0)) throw ConfigError("augment.image_noise_std: must be >= 0");
    if (!(token_dropout >= 0.0 && token_dropout < 1.0)) {
      throw ConfigError("augment.token_dropout: must lie in [0, 1)");
    }
  }
};

inline Image augment_image(const Image& img, double noise_std, Rng& rng) {
  Image out = img;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto& v : out) v = static_cast<float>(v + noise_std * noise(rng));
  clamp_unit(out);
  return out;
}

// Never returns an empty list.
inline TokenIds augment_caption(const TokenIds& ids, double dropout, Rng& rng) {
  TokenIds out;
  std::bernoulli_distribution keep(1.0 - dropout);
  for (auto id : ids)
    if (keep(rng)) out.push_back(id);
  if (out.empty() && !ids.empty()) out.push_back(ids[uniform_index(rng, ids.size())]);
  return out;
}

enum class DefenseMode { FT, CleanCLIP, CleanerCLIP };

inline std::string to_string(DefenseMode m) {
  switch (m) {
    case DefenseMode::FT: return "ft";
    case DefenseMode::CleanCLIP: return "cleanclip";
    case DefenseMode::CleanerCLIP: break;
  }
  return "cleanerclip";
}

inline DefenseMode defense_mode_from_string(const std::string& s) {
  if (s == "ft") return DefenseMode::FT;
  if (s == "cleanclip") return DefenseMode::CleanCLIP;
  if (s == "cleanerclip") return DefenseMode::CleanerCLIP;
  throw ConfigError("defense.mode: expected ft, cleanclip or cleanerclip, got '" + s + "'");
}

struct DefenseSpec {
  DefenseMode mode = DefenseMode::CleanerCLIP;
  std::size_t K = 1000;  // augmented quadruples per epoch
  LossConfig loss;
  AugmentConfig augment;
  // Spread the K quadruples over the epoch's clean mini-batches; otherwise
  // they form their own batches after the clean ones.
  bool spread_quadruples = false;

  void validate() const {
    loss.validate();
    augment.validate();
  }
};

enum class LossSelector { Clip, CClip };

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  std::optional<TopKReport> report;
  std::vector<std::size_t> augmented;  // dataset positions sampled for sub-captions
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

using EvalHook = std::function<std::optional<TopKReport>(const ModelParams&, std::size_t epoch)>;

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

namespace detail {

enum class Objective { Clip, CClip, Cleaner };

struct QuadSource {
  const Lexicon* lexicon = nullptr;
  std::size_t K = 0;
  bool spread = true;
};

inline std::vector<SubCaptionPair> sample_quadruples(const PairDataset& ds, const Lexicon& lex,
                                                     std::size_t K, Rng& rng) {
  if (K > ds.size()) throw ConfigError("defense.K: exceeds the fine-tuning set size");
  std::vector<std::size_t> pool(ds.size());
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates; unparseable picks are replaced by further draws.
  std::vector<SubCaptionPair> out;
  out.reserve(K);
  std::size_t next = 0;
  while (out.size() < K && next < pool.size()) {
    std::swap(pool[next], pool[next + uniform_index(rng, pool.size() - next)]);
    const auto idx = pool[next++];
    try {
      out.push_back(make_sub_captions(ds.samples[idx].caption, lex, rng, idx));
    } catch (const GrammarError&) {
    }
  }
  if (out.size() < K) throw GrammarError("defense: fewer than K parseable captions");
  return out;
}

inline void check_finite(const LossValue& lv, const char* where) {
  if (!std::isfinite(lv.value) || !lv.gradients.all_finite()) {
    throw NumericError(std::string(where) + ": non-finite loss or gradient");
  }
}

inline TrainResult train(ModelParams params, const PairDataset& ds, const Vocabulary& vocab,
                         const OptimConfig& optim, const LossConfig& loss, Objective objective,
                         const AugmentConfig& aug, const QuadSource& quads, std::uint64_t seed,
                         const EvalHook& hook) {
  optim.validate();
  loss.validate();
  aug.validate();
  TrainResult out{std::move(params), {}};
  if (optim.epochs == 0) return out;
  if (ds.empty()) throw ConfigError("train: dataset is empty");

  std::vector<TokenIds> captions;
  captions.reserve(ds.size());
  for (const auto& s : ds.samples) captions.push_back(token_ids(vocab, s.caption));

  Rng shuffle_rng = make_rng(seed, "shuffle");
  Rng aug_rng = make_rng(seed, "augment");
  Rng quad_rng = make_rng(seed, "subcaptions");
  AdamState state = AdamState::for_params(out.params);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = optim.batch_size;
  const std::size_t n_batches = (ds.size() + bs - 1) / bs;
  std::size_t step = 0;
  const bool with_quads = objective == Objective::Cleaner && quads.K > 0;

  auto apply = [&](const LossValue& lv) {
    check_finite(lv, "train");
    adamw_step(out.params, lv.gradients, state, optim, ++step);
    out.params.logit_scale = std::clamp(out.params.logit_scale, 0.0, kMaxLogitScale);
  };

  auto quad_batch = [&](const std::vector<SubCaptionPair>& pairs, std::size_t lo,
                        std::size_t hi) {
    QuadBatch q;
    std::vector<const Image*> imgs;
    for (std::size_t i = lo; i < hi; ++i) {
      imgs.push_back(&ds.samples[pairs[i].source_index].image);
      q.positives.push_back(token_ids(vocab, pairs[i].positive));
      q.negatives.push_back(token_ids(vocab, pairs[i].negative));
    }
    q.images = stack_images(imgs, ds.shape.pixel_count());
    return q;
  };

  for (std::size_t epoch = 1; epoch <= optim.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<SubCaptionPair> pairs;
    if (with_quads) {
      pairs = sample_quadruples(ds, *quads.lexicon, quads.K, quad_rng);
      for (const auto& pr : pairs) rec.augmented.push_back(pr.source_index);
    }

    double loss_sum = 0.0;
    std::size_t loss_terms = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const auto lo = b * bs, hi = std::min(ds.size(), lo + bs);
      PairBatch batch;
      std::vector<const Image*> imgs;
      for (auto i = lo; i < hi; ++i) {
        imgs.push_back(&ds.samples[order[i]].image);
        batch.captions.push_back(captions[order[i]]);
      }
      batch.images = stack_images(imgs, ds.shape.pixel_count());
      if (objective != Objective::Clip && loss.lambda_ss != 0.0) {
        std::vector<Image> aug_imgs;
        aug_imgs.reserve(imgs.size());
        std::vector<const Image*> aug_ptrs;
        for (auto i = lo; i < hi; ++i) {
          aug_imgs.push_back(augment_image(ds.samples[order[i]].image, aug.image_noise_std, aug_rng));
          batch.aug_captions.push_back(augment_caption(captions[order[i]], aug.token_dropout, aug_rng));
        }
        for (const auto& im : aug_imgs) aug_ptrs.push_back(&im);
        batch.aug_images = stack_images(aug_ptrs, ds.shape.pixel_count());
      }

      LossValue lv;
      switch (objective) {
        case Objective::Clip: lv = clip_objective(out.params, batch, loss); break;
        case Objective::CClip: lv = cclip_objective(out.params, batch, loss); break;
        case Objective::Cleaner: {
          QuadBatch q;
          if (with_quads && quads.spread) {
            q = quad_batch(pairs, b * pairs.size() / n_batches, (b + 1) * pairs.size() / n_batches);
          }
          lv = cleaner_objective(out.params, batch, q, loss);
          break;
        }
      }
      loss_sum += lv.value;
      ++loss_terms;
      apply(lv);
    }

    if (with_quads && !quads.spread && loss.beta != 0.0) {
      for (std::size_t lo = 0; lo < pairs.size(); lo += bs) {
        auto lv = pn_objective(out.params, quad_batch(pairs, lo, std::min(pairs.size(), lo + bs)), loss);
        lv.value *= loss.beta;
        lv.gradients.scale(loss.beta);
        loss_sum += lv.value;
        ++loss_terms;
        apply(lv);
      }
    }

    rec.loss = loss_sum / static_cast<double>(loss_terms);
    if (hook) rec.report = hook(out.params, epoch);
    out.history.epochs.push_back(std::move(rec));
  }
  return out;
}

}  // namespace detail

// Plain fine-tuning with the contrastive objective (attack fine-tune and the
// FT defense) or with the CleanCLIP objective.
inline TrainResult finetune(ModelParams params, const PairDataset& ds, const Vocabulary& vocab,
                            LossSelector selector, const OptimConfig& optim,
                            const LossConfig& loss, const AugmentConfig& aug, std::uint64_t seed,
                            const EvalHook& hook = {}) {
  auto objective =
      selector == LossSelector::Clip ? detail::Objective::Clip : detail::Objective::CClip;
  return detail::train(std::move(params), ds, vocab, optim, loss, objective, aug, {}, seed, hook);
}

// Each epoch samples K captions, builds factual/counterfactual
// sub-captions, and optimizes alpha * cclip + beta * pn.
inline TrainResult cleaner_finetune(ModelParams params, const PairDataset& ds,
                                    const Vocabulary& vocab, const DefenseSpec& spec,
                                    const OptimConfig& optim, const Lexicon& lexicon,
                                    std::uint64_t seed, const EvalHook& hook = {}) {
  if (spec.mode != DefenseMode::CleanerCLIP) throw ConfigError("defense.mode: expected cleanerclip");
  spec.validate();
  if (spec.K > ds.size()) throw ConfigError("defense.K: exceeds the fine-tuning set size");
  detail::QuadSource quads{&lexicon, spec.K, spec.spread_quadruples};
  return detail::train(std::move(params), ds, vocab, optim, spec.loss, detail::Objective::Cleaner,
                       spec.augment, quads, seed, hook);
}

inline TrainResult defend(ModelParams params, const PairDataset& ds, const Vocabulary& vocab,
                          const DefenseSpec& spec, const OptimConfig& optim,
                          const Lexicon& lexicon, std::uint64_t seed, const EvalHook& hook = {}) {
  spec.validate();
  switch (spec.mode) {
    case DefenseMode::FT:
      return finetune(std::move(params), ds, vocab, LossSelector::Clip, optim, spec.loss,
                      spec.augment, seed, hook);
    case DefenseMode::CleanCLIP:
      return finetune(std::move(params), ds, vocab, LossSelector::CClip, optim, spec.loss,
                      spec.augment, seed, hook);
    case DefenseMode::CleanerCLIP: break;
  }
  return cleaner_finetune(std::move(params), ds, vocab, spec, optim, lexicon, seed, hook);
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// epoch,loss,ba_top{k},asr_top{k},...
inline std::string history_csv(const TrainHistory& h, const std::vector<std::size_t>& ks) {
  std::string out = "epoch,loss";
  for (auto k : ks) out += ",ba_top" + std::to_string(k) + ",asr_top" + std::to_string(k);
  out += '\n';
  for (const auto& e : h.epochs) {
    out += std::to_string(e.epoch) + "," + format_number(e.loss);
    for (auto k : ks) {
      if (e.report) {
        out += "," + format_number(e.report->ba_at(k)) + "," + format_number(e.report->asr_at(k));
      } else {
        out += ",,";
      }
    }
    out += '\n';
  }
  return out;
}

}  // namespace cleaner
