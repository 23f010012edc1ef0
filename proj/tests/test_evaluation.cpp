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

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "cleaner/evaluation.hpp"
#include "oracles.hpp"

using namespace cleaner;

namespace {

std::shared_ptr<const Lexicon> lexicon() {
  static auto lex = std::make_shared<const Lexicon>(Lexicon::load(CLEANER_DATA_DIR "/lexicon.txt"));
  return lex;
}

PairDataset corpus(std::size_t classes, std::size_t per_class, std::uint64_t seed = 7,
                   double noise = 0.05) {
  CorpusConfig cfg;
  cfg.class_count = classes;
  cfg.samples_per_class = per_class;
  cfg.noise_std = noise;
  return generate_corpus(cfg, lexicon(), seed);
}

// Independent ranking: sort (score, id) pairs, scores from single-sample encoders.
std::vector<std::size_t> sorted_ranking(const ModelParams& p, const Vocabulary& vocab,
                                        const PairDataset& ds, const Image& img) {
  const Vector z = encode_image(p, img).vector();
  std::vector<std::pair<double, std::size_t>> rows;
  for (std::size_t c = 0; c < ds.class_count; ++c) {
    rows.emplace_back(z.dot(encode_text(p, vocab, class_prompt(ds.class_names[c])).vector()), c);
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::size_t> out;
  for (const auto& r : rows) out.push_back(r.second);
  return out;
}

std::size_t oracle_hits(const ModelParams& p, const Vocabulary& vocab, const PairDataset& ds,
                        const PairDataset& set, std::size_t k, std::optional<std::size_t> target) {
  std::size_t hits = 0;
  for (const auto& s : set.samples) {
    auto r = sorted_ranking(p, vocab, ds, s.image);
    auto want = target ? *target : s.latent_class;
    hits += std::find(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(k), want) !=
            r.begin() + static_cast<std::ptrdiff_t>(k);
  }
  return hits;
}

// Prompt of class c embeds to e_c; images project onto centred prototypes.
ModelParams prototype_model(const PairDataset& ds, const Vocabulary& vocab) {
  const auto classes = static_cast<Eigen::Index>(ds.class_count);
  const auto pc = static_cast<Eigen::Index>(ds.shape.pixel_count());
  ModelParams p;
  p.image_weights = Matrix::Zero(classes, pc);
  for (Eigen::Index c = 0; c < classes; ++c) {
    auto proto = class_prototype(ds.seed, static_cast<std::size_t>(c), ds.shape);
    for (Eigen::Index j = 0; j < pc; ++j) p.image_weights(c, j) = proto[j] - 0.5;
  }
  p.image_bias = -0.5 * p.image_weights.rowwise().sum();
  p.text_weights = Matrix::Zero(classes, static_cast<Eigen::Index>(vocab.size()));
  for (Eigen::Index c = 0; c < classes; ++c) {
    p.text_weights(c, static_cast<Eigen::Index>(vocab.id(ds.class_names[c]))) = 1.0;
  }
  p.text_bias = Vector::Zero(classes);
  p.logit_scale = kInitLogitScale;
  return p;
}

AttackSpec patch_spec(std::size_t target) {
  AttackSpec s;
  s.target_class = target;
  return s;
}

}  // namespace

TEST(RankClasses, TiesGoToLowerId) {
  Vector s(5);
  s << 0.2, 0.9, 0.2, 0.9, -1.0;
  EXPECT_EQ(rank_classes(s), (std::vector<std::size_t>{1, 3, 0, 2, 4}));
  for (std::size_t c = 0; c < 5; ++c) {
    auto r = rank_classes(s);
    EXPECT_EQ(rank_position(s, c), static_cast<std::size_t>(std::find(r.begin(), r.end(), c) - r.begin()));
  }
  EXPECT_EQ(rank_classes(Vector::Zero(4)), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(ZeroShot, MatchingPromptRanksFirst) {
  auto ds = corpus(6, 2, 7, 0.0);
  Vocabulary vocab(*lexicon());
  auto p = prototype_model(ds, vocab);
  const Matrix prompts = prompt_embeddings(p, vocab, ds.class_names);
  for (const auto& s : ds.samples) EXPECT_EQ(zero_shot_classify(p, s.image, prompts).front(), s.latent_class);
}

TEST(ZeroShot, IdenticalPromptsRankById) {
  auto ds = corpus(5, 1);
  Vocabulary vocab(*lexicon());
  Rng rng(1);
  auto p = init_params(4, ds.shape.pixel_count(), vocab.size(), rng);
  for (const auto& name : ds.class_names) p.text_weights.col(vocab.id(name)).setZero();
  const Matrix prompts = prompt_embeddings(p, vocab, ds.class_names);
  EXPECT_EQ(zero_shot_classify(p, ds.samples[3].image, prompts),
            (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(ZeroShot, RandomInstancesMatchSortOracle) {
  Vocabulary vocab(*lexicon());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ds = corpus(8, 3, seed);
    Rng rng(seed);
    auto p = init_params(5, ds.shape.pixel_count(), vocab.size(), rng);
    const Matrix prompts = prompt_embeddings(p, vocab, ds.class_names);
    for (const auto& s : ds.samples) {
      EXPECT_EQ(zero_shot_classify(p, s.image, prompts), sorted_ranking(p, vocab, ds, s.image));
    }
  }
}

TEST(TopK, PerfectModelAndConstantModel) {
  auto ds = corpus(10, 20);
  Vocabulary vocab(*lexicon());
  auto p = prototype_model(ds, vocab);
  auto trig = make_triggered_set(ds, make_trigger(patch_spec(1), ds.shape, 3));
  auto r = topk_metrics(p, vocab, ds, trig, 1, {1, 3, 5, 10});
  EXPECT_EQ(r.ba_at(1), 100.0);

  // Every image maps to the target direction.
  auto q = p;
  q.image_weights.setZero();
  q.image_bias = Vector::Unit(10, 1);
  auto rq = topk_metrics(q, vocab, ds, trig, 1, {1, 3, 5, 10});
  for (double a : rq.asr) EXPECT_EQ(a, 100.0);
  EXPECT_EQ(rq.ba_at(1), 10.0);
  EXPECT_EQ(rq.triggered_count, 180u);
}

TEST(TopK, MatchesExhaustiveCountingOracle) {
  Vocabulary vocab(*lexicon());
  Rng meta(2024);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t classes = 2 + meta() % 11;       // 2..12
    const std::size_t per = 1 + meta() % (200 / classes);  // <= 200 samples
    auto ds = corpus(classes, per, meta(), 0.1);
    Rng rng(meta());
    auto p = init_params(2 + trial % 6, ds.shape.pixel_count(), vocab.size(), rng);
    if (trial % 5 == 0) {
      // Force ties between prompts.
      for (std::size_t c = 1; c < classes; c += 2) {
        p.text_weights.col(vocab.id(ds.class_names[c])) = p.text_weights.col(vocab.id(ds.class_names[c - 1]));
      }
    }
    const std::size_t target = meta() % classes;
    AttackSpec spec = patch_spec(target);
    spec.kind = trial % 2 ? AttackKind::Patch : AttackKind::Blend;
    auto trig = make_triggered_set(ds, make_trigger(spec, ds.shape, meta()));
    std::vector<std::size_t> ks;
    for (std::size_t k = 1; k <= classes; ++k) ks.push_back(k);
    auto r = topk_metrics(p, vocab, ds, trig, target, ks);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      const auto ba = oracle_hits(p, vocab, ds, ds, ks[j], std::nullopt);
      const auto asr = oracle_hits(p, vocab, ds, trig, ks[j], target);
      EXPECT_EQ(r.ba_hits[j], ba);
      EXPECT_EQ(r.asr_hits[j], asr);
      EXPECT_DOUBLE_EQ(r.ba[j], 100.0 * ba / ds.size());
      EXPECT_DOUBLE_EQ(r.asr[j], trig.empty() ? 0.0 : 100.0 * asr / trig.size());
      if (j > 0) {
        EXPECT_LE(r.ba[j - 1], r.ba[j]);
        EXPECT_LE(r.asr[j - 1], r.asr[j]);
      }
      EXPECT_GE(r.ba[j], 0.0);
      EXPECT_LE(r.ba[j], 100.0);
    }
    EXPECT_EQ(r.ba.back(), 100.0);
    for (const auto& s : trig.samples) EXPECT_NE(s.latent_class, target);
  }
}

TEST(TopK, Errors) {
  auto ds = corpus(3, 2);
  Vocabulary vocab(*lexicon());
  Rng rng(1);
  auto p = init_params(3, ds.shape.pixel_count(), vocab.size(), rng);
  auto trig = make_triggered_set(ds, make_trigger(patch_spec(0), ds.shape, 1));
  EXPECT_THROW(topk_metrics(p, vocab, ds, trig, 0, {1, 5}), ConfigError);
  EXPECT_THROW(topk_metrics(p, vocab, ds, trig, 0, {}), ConfigError);
  EXPECT_THROW(topk_metrics(p, vocab, ds, trig, 3, {1}), ConfigError);
  EXPECT_THROW(topk_metrics(p, vocab, ds, ds, 0, {1}), ConfigError);
}

TEST(ResolveKs, DropsOversizedWithWarning) {
  std::ostringstream warn;
  EXPECT_EQ(resolve_ks({1, 3, 5, 10}, 5, &warn), (std::vector<std::size_t>{1, 3, 5}));
  EXPECT_NE(warn.str().find("top-10"), std::string::npos);
  EXPECT_EQ(resolve_ks({5, 1, 5}, 10, nullptr), (std::vector<std::size_t>{1, 5}));
  EXPECT_THROW(resolve_ks({0}, 5, nullptr), ConfigError);
  EXPECT_THROW(resolve_ks({20}, 5, nullptr), ConfigError);
  EXPECT_EQ(kDefaultKs, (std::vector<std::size_t>{1, 3, 5, 10}));
}

TEST(LinearProbe, SeparableReachesFullAccuracy) {
  auto ds = corpus(5, 40);
  Vocabulary vocab(*lexicon());
  auto p = prototype_model(ds, vocab);
  Rng rng(3);
  auto parts = split(ds, {0.5, 0.5}, rng);
  ProbeConfig cfg;
  cfg.epochs = 100;
  cfg.learning_rate = 0.05;
  EXPECT_EQ(linear_probe(p, parts.train, parts.eval, cfg), 100.0);
}

TEST(LinearProbe, RandomEncoderBeatsChanceAndIsDeterministic) {
  auto ds = corpus(5, 40);
  Vocabulary vocab(*lexicon());
  Rng rng(4);
  auto p = init_params(16, ds.shape.pixel_count(), vocab.size(), rng);
  Rng srng(5);
  auto parts = split(ds, {0.5, 0.5}, srng);
  ProbeConfig cfg;
  cfg.epochs = 60;
  cfg.learning_rate = 0.05;
  cfg.seed = 9;
  const double a = linear_probe(p, parts.train, parts.eval, cfg);
  EXPECT_GE(a, 100.0 / 5);
  EXPECT_EQ(a, linear_probe(p, parts.train, parts.eval, cfg));
  EXPECT_THROW(linear_probe(p, parts.train.empty_like(), parts.eval, cfg), ConfigError);
}

TEST(ReportJson, CarriesCountsAndHits) {
  TopKReport r;
  r.ks = {1, 3};
  r.ba = {50, 75};
  r.asr = {10, 20};
  r.ba_hits = {2, 3};
  r.asr_hits = {1, 2};
  r.clean_count = 4;
  r.triggered_count = 10;
  auto j = to_json(r);
  EXPECT_EQ(j["counts"]["clean"], 4);
  EXPECT_EQ(j["hits"]["asr"][1], 2);
  EXPECT_EQ(r.asr_at(3), 20.0);
  EXPECT_THROW(r.asr_at(5), ConfigError);
}
