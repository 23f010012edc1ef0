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

#include <set>

#include "cleaner/training.hpp"

using namespace cleaner;

namespace {

struct Fixture {
  std::shared_ptr<const Lexicon> lex;
  Vocabulary vocab;
  PairDataset ds;
  ModelParams init;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    f.lex = std::make_shared<const Lexicon>(Lexicon::load(CLEANER_DATA_DIR "/lexicon.txt"));
    f.vocab = Vocabulary(*f.lex);
    CorpusConfig cfg;
    cfg.class_count = 5;
    cfg.samples_per_class = 40;
    f.ds = generate_corpus(cfg, f.lex, 7);
    Rng rng(1);
    f.init = init_params(16, f.ds.shape.pixel_count(), f.vocab.size(), rng);
    return f;
  }();
  return f;
}

OptimConfig small_optim(std::size_t epochs = 3) {
  OptimConfig o;
  o.epochs = epochs;
  o.batch_size = 32;
  o.warmup_steps = 5;
  o.learning_rate = 1e-3;
  return o;
}

DefenseSpec cleaner_spec(std::size_t K, bool spread) {
  DefenseSpec s;
  s.mode = DefenseMode::CleanerCLIP;
  s.K = K;
  s.spread_quadruples = spread;
  return s;
}

TrainResult run_cleanclip(const OptimConfig& o, const DefenseSpec& spec, std::uint64_t seed) {
  const auto& f = fixture();
  return finetune(f.init, f.ds, f.vocab, LossSelector::CClip, o, spec.loss, spec.augment, seed);
}

}  // namespace

TEST(Finetune, ZeroEpochsLeavesParamsUnchanged) {
  const auto& f = fixture();
  auto r = finetune(f.init, f.ds, f.vocab, LossSelector::Clip, small_optim(0), {}, {}, 1);
  EXPECT_EQ(r.params, f.init);
  EXPECT_TRUE(r.history.epochs.empty());
  auto c = cleaner_finetune(f.init, f.ds, f.vocab, cleaner_spec(50, true), small_optim(0), *f.lex, 1);
  EXPECT_EQ(c.params, f.init);
}

TEST(Finetune, LossDecreasesOnCleanData) {
  const auto& f = fixture();
  auto o = small_optim(5);
  o.learning_rate = 3e-3;
  auto r = finetune(f.init, f.ds, f.vocab, LossSelector::Clip, o, {}, {}, 3);
  ASSERT_EQ(r.history.epochs.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) {
    EXPECT_LE(r.history.epochs[e].loss, 1.05 * r.history.epochs[e - 1].loss) << e;
  }
  EXPECT_LT(r.history.epochs.back().loss, r.history.epochs.front().loss);
}

TEST(Finetune, SameSeedIsBitIdentical) {
  const auto& f = fixture();
  for (auto sel : {LossSelector::Clip, LossSelector::CClip}) {
    auto a = finetune(f.init, f.ds, f.vocab, sel, small_optim(), {}, {}, 5);
    auto b = finetune(f.init, f.ds, f.vocab, sel, small_optim(), {}, {}, 5);
    EXPECT_EQ(a.params, b.params);
    auto c = finetune(f.init, f.ds, f.vocab, sel, small_optim(), {}, {}, 6);
    EXPECT_FALSE(a.params == c.params);
  }
  auto x = cleaner_finetune(f.init, f.ds, f.vocab, cleaner_spec(60, false), small_optim(), *f.lex, 5);
  auto y = cleaner_finetune(f.init, f.ds, f.vocab, cleaner_spec(60, false), small_optim(), *f.lex, 5);
  EXPECT_EQ(x.params, y.params);
}

TEST(CleanerFinetune, ZeroKMatchesCleanClip) {
  const auto& f = fixture();
  for (bool spread : {true, false}) {
    auto spec = cleaner_spec(0, spread);
    auto a = cleaner_finetune(f.init, f.ds, f.vocab, spec, small_optim(), *f.lex, 9);
    auto b = run_cleanclip(small_optim(), spec, 9);
    EXPECT_EQ(a.params, b.params) << "spread=" << spread;
  }
}

TEST(CleanerFinetune, ZeroBetaMatchesCleanClip) {
  const auto& f = fixture();
  for (bool spread : {true, false}) {
    auto spec = cleaner_spec(80, spread);
    spec.loss.beta = 0.0;
    auto a = cleaner_finetune(f.init, f.ds, f.vocab, spec, small_optim(), *f.lex, 9);
    auto b = run_cleanclip(small_optim(), spec, 9);
    EXPECT_EQ(a.params, b.params) << "spread=" << spread;
  }
}

TEST(CleanerFinetune, PositiveBetaChangesTrajectory) {
  const auto& f = fixture();
  for (bool spread : {true, false}) {
    auto spec = cleaner_spec(80, spread);
    auto a = cleaner_finetune(f.init, f.ds, f.vocab, spec, small_optim(), *f.lex, 9);
    auto b = run_cleanclip(small_optim(), spec, 9);
    EXPECT_FALSE(a.params == b.params);
    EXPECT_TRUE(a.params.all_finite());
  }
}

TEST(CleanerFinetune, AugmentedIndicesResampledEachEpoch) {
  const auto& f = fixture();
  auto r = cleaner_finetune(f.init, f.ds, f.vocab, cleaner_spec(20, true), small_optim(4), *f.lex, 2);
  ASSERT_EQ(r.history.epochs.size(), 4u);
  for (const auto& e : r.history.epochs) {
    EXPECT_EQ(e.augmented.size(), 20u);
    std::set<std::size_t> uniq(e.augmented.begin(), e.augmented.end());
    EXPECT_EQ(uniq.size(), 20u);
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j)
      EXPECT_NE(r.history.epochs[i].augmented, r.history.epochs[j].augmented);
}

TEST(CleanerFinetune, Errors) {
  const auto& f = fixture();
  EXPECT_THROW(cleaner_finetune(f.init, f.ds, f.vocab, cleaner_spec(10000, true), small_optim(),
                                *f.lex, 1),
               ConfigError);
  auto spec = cleaner_spec(10, true);
  spec.mode = DefenseMode::FT;
  EXPECT_THROW(cleaner_finetune(f.init, f.ds, f.vocab, spec, small_optim(), *f.lex, 1), ConfigError);
  EXPECT_THROW(defense_mode_from_string("badnet"), ConfigError);
}

TEST(SampleQuadruples, RedrawsUnparseableCaptions) {
  const auto& f = fixture();
  auto ds = f.ds;
  for (std::size_t i = 0; i < ds.size(); i += 2) ds.samples[i].caption = {"apple", "apple"};
  Rng rng(4);
  auto pairs = detail::sample_quadruples(ds, *f.lex, 90, rng);
  ASSERT_EQ(pairs.size(), 90u);
  for (const auto& p : pairs) EXPECT_EQ(p.source_index % 2, 1u);
  Rng again(4);
  EXPECT_THROW(detail::sample_quadruples(ds, *f.lex, 101, again), GrammarError);
}

TEST(EvalHook, RunsAfterEveryEpoch) {
  const auto& f = fixture();
  std::vector<std::size_t> seen;
  auto hook = [&](const ModelParams&, std::size_t epoch) -> std::optional<TopKReport> {
    seen.push_back(epoch);
    TopKReport r;
    r.ks = {1};
    r.ba = {50.0};
    r.asr = {double(epoch)};
    return r;
  };
  auto r = finetune(f.init, f.ds, f.vocab, LossSelector::Clip, small_optim(3), {}, {}, 1, hook);
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
  auto csv = history_csv(r.history, {1});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,loss,ba_top1,asr_top1");
  EXPECT_NE(csv.find("\n3,"), std::string::npos);
  EXPECT_NE(csv.find(",50,3\n"), std::string::npos);
}

TEST(Augment, CaptionNeverEmptyAndImageClamped) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) EXPECT_FALSE(augment_caption({3, 4}, 0.99, rng).empty());
  Image img(10, 0.5f);
  for (float v : augment_image(img, 5.0, rng)) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}
