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
#include <cmath>
#include <numeric>

#include "cleaner/losses.hpp"
#include "oracles.hpp"

using namespace cleaner;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> data) {
  Matrix m(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(data.begin()->size()));
  Eigen::Index r = 0;
  for (auto row : data) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Matrix permute_rows(const Matrix& m, const std::vector<int>& perm) {
  Matrix out(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i) out.row(i) = m.row(perm[i]);
  return out;
}

}  // namespace

TEST(ClipLoss, SingletonBatchIsZero) {
  Matrix a = rows({{0.6, 0.8}});
  EXPECT_NEAR(clip_loss(a, a, 0.07).value, 0.0, 1e-15);
}

TEST(ClipLoss, TwoOpposedPairs) {
  Matrix img = rows({{1, 0}, {-1, 0}});
  EXPECT_NEAR(clip_loss(img, img, 1.0).value, std::log1p(std::exp(-2.0)), 1e-14);
}

TEST(ClipLoss, RejectsMismatchedBatches) {
  EXPECT_THROW(clip_loss(Matrix::Zero(2, 3), Matrix::Zero(3, 3), 1.0), ShapeError);
  EXPECT_THROW(clip_loss(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 0.0), ConfigError);
}

TEST(SsLoss, IdenticalSingletonIsZero) {
  Matrix a = rows({{0.0, 1.0}});
  EXPECT_NEAR(ss_loss(a, a, a, a, 0.5).value, 0.0, 1e-15);
}

TEST(PnLoss, EqualSimilaritiesGiveLn2) {
  Matrix img = rows({{1, 0}});
  Matrix pos = rows({{0.6, 0.8}});
  Matrix neg = rows({{0.6, -0.8}});
  EXPECT_NEAR(pn_loss(img, pos, neg, 0.3, 0.3).value, std::log(2.0), 1e-14);
}

TEST(PnLoss, AlignedPositiveOpposedNegative) {
  Matrix img = rows({{0, 1, 0}});
  Matrix neg = -img;
  const double t = 0.3;
  const double expected = -std::log(std::exp(1 / t) / (std::exp(1 / t) + std::exp(-1 / t)));
  EXPECT_NEAR(pn_loss(img, img, neg, t, t).value, expected, 1e-13);
  EXPECT_NEAR(expected, std::log1p(std::exp(-2 / t)), 1e-15);
}

TEST(PnLoss, EmptyBatchIsZeroAndTemperaturesChecked) {
  Matrix e(0, 4);
  EXPECT_EQ(pn_loss(e, e, e, 0.3, 0.3).value, 0.0);
  Matrix a = Matrix::Identity(2, 2);
  EXPECT_THROW(pn_loss(a, a, a, 0.0, 0.3), ConfigError);
  EXPECT_THROW(pn_loss(a, a, a, 0.3, -1.0), ConfigError);
  EXPECT_THROW(pn_loss(a, a, Matrix::Identity(3, 2), 0.3, 0.3), ShapeError);
}

TEST(PnLoss, OwnNegativeReadingDiffersOnlyWhenNegativesDiffer) {
  Rng rng(3);
  Matrix img = oracle::random_matrix(1, 4, rng);
  Matrix pos = oracle::random_matrix(1, 4, rng);
  Matrix neg = oracle::random_matrix(1, 4, rng);
  // With K = 1 both readings coincide.
  EXPECT_NEAR(pn_loss(img, pos, neg, 0.3, 0.2, false).value,
              pn_loss(img, pos, neg, 0.3, 0.2, true).value, 1e-14);
  Matrix img3 = oracle::random_matrix(3, 4, rng);
  Matrix pos3 = oracle::random_matrix(3, 4, rng);
  Matrix neg3 = oracle::random_matrix(3, 4, rng);
  EXPECT_GT(std::abs(pn_loss(img3, pos3, neg3, 0.3, 0.2, false).value -
                     pn_loss(img3, pos3, neg3, 0.3, 0.2, true).value),
            1e-6);
}

// Brute-force oracle agreement on small batches, random unit embeddings.
TEST(LossOracle, AllLossesMatchBruteForce) {
  Rng rng(11);
  std::uniform_real_distribution<double> temp(0.05, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 4;
    const int d = 2 + trial % 5;
    Matrix a = oracle::random_matrix(n, d, rng), b = oracle::random_matrix(n, d, rng);
    Matrix c = oracle::random_matrix(n, d, rng), e = oracle::random_matrix(n, d, rng);
    const double t = temp(rng), tp = temp(rng), tn = temp(rng);
    EXPECT_NEAR(clip_loss(a, b, t).value, oracle::clip(a, b, t), 1e-10);
    EXPECT_NEAR(ss_loss(a, b, c, e, t).value, oracle::ss(a, b, c, e, t), 1e-10);
    for (bool own : {false, true}) {
      EXPECT_NEAR(pn_loss(a, b, c, tp, tn, own).value, oracle::pn(a, b, c, tp, tn, own), 1e-10);
    }
  }
}

TEST(LossProperties, NonNegativeFiniteAndPermutationInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 5;
    Matrix a = oracle::random_matrix(n, 6, rng), b = oracle::random_matrix(n, 6, rng);
    Matrix c = oracle::random_matrix(n, 6, rng), e = oracle::random_matrix(n, 6, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto P = [&](const Matrix& m) { return permute_rows(m, perm); };

    const double clip = clip_loss(a, b, 0.1).value;
    const double ss = ss_loss(a, b, c, e, 0.1).value;
    const double pn = pn_loss(a, b, c, 0.3, 0.2).value;
    for (double v : {clip, ss, pn}) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
    }
    EXPECT_NEAR(clip_loss(P(a), P(b), 0.1).value, clip, 1e-12);
    EXPECT_NEAR(ss_loss(P(a), P(b), P(c), P(e), 0.1).value, ss, 1e-12);
    EXPECT_NEAR(pn_loss(P(a), P(b), P(c), 0.3, 0.2).value, pn, 1e-12);
  }
}

// Lowering t_n raises the share of the negative terms in the i2t softmax
// when the positive is more similar than the negative.
TEST(LossProperties, NegativeShareGrowsAsTnShrinks) {
  const double sp = 0.8, sn = 0.2, tp = 0.3;
  auto share = [&](double tn) {
    double p = std::exp(sp / tp), q = std::exp(sn / tn);
    return q / (p + q);
  };
  // K = 1: the loss is -log(1 - share).
  Matrix img = rows({{1, 0}});
  Matrix pos = rows({{sp, std::sqrt(1 - sp * sp)}});
  Matrix neg = rows({{sn, std::sqrt(1 - sn * sn)}});
  double prev_share = 0.0, prev_loss = 0.0;
  for (double tn : {1.0, 0.5, 0.3, 0.2, 0.1}) {
    const double s = share(tn);
    const double loss = pn_loss(img, pos, neg, tp, tn).value;
    EXPECT_NEAR(loss, -std::log(1 - s), 1e-12);
    EXPECT_GT(s, prev_share);
    EXPECT_GT(loss, prev_loss);
    prev_share = s;
    prev_loss = loss;
  }
}

// --- Finite differences at the embedding level ----------------------------

TEST(LossGradients, EmbeddingLevelMatchesFiniteDifferences) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 5;
    const int d = 3;
    Matrix a = oracle::random_matrix(n, d, rng), b = oracle::random_matrix(n, d, rng);
    Matrix c = oracle::random_matrix(n, d, rng), e = oracle::random_matrix(n, d, rng);
    const double t = 0.1 + 0.1 * (trial % 5);

    auto cl = clip_loss(a, b, t);
    auto ga = oracle::numeric_gradient(a, [&](const Matrix& x) { return clip_loss(x, b, t).value; });
    auto gb = oracle::numeric_gradient(b, [&](const Matrix& x) { return clip_loss(a, x, t).value; });
    EXPECT_LT(oracle::rel_error(oracle::flatten(cl.d_image), oracle::flatten(ga)), 1e-6);
    EXPECT_LT(oracle::rel_error(oracle::flatten(cl.d_text), oracle::flatten(gb)), 1e-6);
    const double h = 1e-6;
    const double dt = (clip_loss(a, b, t + h).value - clip_loss(a, b, t - h).value) / (2 * h);
    EXPECT_NEAR(cl.d_temperature, dt, 1e-5 * std::max(1.0, std::abs(dt)));

    auto sl = ss_loss(a, b, c, e, t);
    std::array<Matrix*, 4> ins = {&a, &b, &c, &e};
    std::array<const Matrix*, 4> outs = {&sl.d_image, &sl.d_aug_image, &sl.d_text, &sl.d_aug_text};
    for (int w = 0; w < 4; ++w) {
      auto g = oracle::numeric_gradient(*ins[w], [&](const Matrix& x) {
        Matrix keep = *ins[w];
        *ins[w] = x;
        double v = ss_loss(a, b, c, e, t).value;
        *ins[w] = keep;
        return v;
      });
      EXPECT_LT(oracle::rel_error(oracle::flatten(*outs[w]), oracle::flatten(g)), 1e-6) << w;
    }

    for (bool own : {false, true}) {
      auto pl = pn_loss(a, b, c, 0.3, 0.2, own);
      std::array<const Matrix*, 3> pouts = {&pl.d_image, &pl.d_positive, &pl.d_negative};
      for (int w = 0; w < 3; ++w) {
        auto g = oracle::numeric_gradient(*ins[w], [&](const Matrix& x) {
          Matrix keep = *ins[w];
          *ins[w] = x;
          double v = pn_loss(a, b, c, 0.3, 0.2, own).value;
          *ins[w] = keep;
          return v;
        });
        EXPECT_LT(oracle::rel_error(oracle::flatten(*pouts[w]), oracle::flatten(g)), 1e-6)
            << "own=" << own << " input " << w;
      }
    }
  }
}

// --- Composite objectives over model parameters --------------------------

namespace {

struct Toy {
  ModelParams params;
  PairBatch batch;
  QuadBatch quads;
};

Toy make_toy(Rng& rng, int n = 4, int k = 3, std::size_t d = 4, std::size_t pixels = 6,
             std::size_t vocab = 9) {
  Toy t;
  t.params = init_params(d, pixels, vocab, rng);
  std::normal_distribution<double> bias(0.0, 0.3);
  for (Eigen::Index i = 0; i < t.params.image_bias.size(); ++i) t.params.image_bias(i) = bias(rng);
  t.params.logit_scale = 1.0;
  std::uniform_real_distribution<double> px(0.0, 1.0);
  auto images = [&](int rows) {
    Matrix m(rows, static_cast<Eigen::Index>(pixels));
    for (int r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = px(rng);
    return m;
  };
  auto tokens = [&]() {
    TokenIds ids(1 + uniform_index(rng, 3));
    for (auto& id : ids) id = uniform_index(rng, vocab);
    return ids;
  };
  t.batch.images = images(n);
  t.batch.aug_images = images(n);
  for (int i = 0; i < n; ++i) {
    t.batch.captions.push_back(tokens());
    t.batch.aug_captions.push_back(tokens());
  }
  t.quads.images = images(k);
  for (int i = 0; i < k; ++i) {
    t.quads.positives.push_back(tokens());
    t.quads.negatives.push_back(tokens());
  }
  return t;
}

double grad_error(const ModelParams& p, const LossValue& lv,
                  const std::function<double(const ModelParams&)>& f) {
  return oracle::rel_error(oracle::flatten(lv.gradients), oracle::numeric_gradient(p, f));
}

}  // namespace

TEST(ObjectiveGradients, ParameterLevelMatchesFiniteDifferences) {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    auto toy = make_toy(rng, 2 + trial % 3, 1 + trial % 4);
    LossConfig cfg;
    cfg.t_p = 0.3;
    cfg.t_n = 0.25;
    cfg.alpha = 0.7;
    cfg.beta = 1.5;
    cfg.lambda_ss = 0.5;
    cfg.own_negative_only = trial % 2 == 1;
    const auto& p = toy.params;
    auto f_clip = [&](const ModelParams& q) { return clip_objective(q, toy.batch, cfg).value; };
    auto f_ss = [&](const ModelParams& q) { return ss_objective(q, toy.batch, cfg).value; };
    auto f_pn = [&](const ModelParams& q) { return pn_objective(q, toy.quads, cfg).value; };
    auto f_all = [&](const ModelParams& q) {
      return cleaner_objective(q, toy.batch, toy.quads, cfg).value;
    };
    EXPECT_LT(grad_error(p, clip_objective(p, toy.batch, cfg), f_clip), 1e-5);
    EXPECT_LT(grad_error(p, ss_objective(p, toy.batch, cfg), f_ss), 1e-5);
    EXPECT_LT(grad_error(p, pn_objective(p, toy.quads, cfg), f_pn), 1e-5);
    EXPECT_LT(grad_error(p, cleaner_objective(p, toy.batch, toy.quads, cfg), f_all), 1e-5);
  }
}

TEST(ObjectiveGradients, FixedTemperatureLeavesLogitScaleAlone) {
  Rng rng(4);
  auto toy = make_toy(rng);
  LossConfig cfg;
  cfg.clip_temperature = 0.2;
  auto lv = cclip_objective(toy.params, toy.batch, cfg);
  EXPECT_EQ(lv.gradients.logit_scale, 0.0);
  auto learned = cclip_objective(toy.params, toy.batch, LossConfig{});
  EXPECT_NE(learned.gradients.logit_scale, 0.0);
}

TEST(ObjectiveIdentities, ReductionsHoldExactly) {
  Rng rng(8);
  auto toy = make_toy(rng);
  const auto& p = toy.params;
  LossConfig cfg;

  LossConfig no_ss = cfg;
  no_ss.lambda_ss = 0.0;
  EXPECT_EQ(cclip_objective(p, toy.batch, no_ss).value, clip_objective(p, toy.batch, no_ss).value);
  EXPECT_EQ(cclip_objective(p, toy.batch, no_ss).gradients, clip_objective(p, toy.batch, no_ss).gradients);

  LossConfig no_pn = cfg;
  no_pn.beta = 0.0;
  auto a = cleaner_objective(p, toy.batch, toy.quads, no_pn);
  auto b = cclip_objective(p, toy.batch, no_pn);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.gradients, b.gradients);

  // Empty quadruple batch: the pn term vanishes.
  auto c = cleaner_objective(p, toy.batch, QuadBatch{}, cfg);
  auto d = cclip_objective(p, toy.batch, cfg);
  EXPECT_EQ(c.value, d.value);
  EXPECT_EQ(c.gradients, d.gradients);

  // alpha = 0, beta = 1 is the pn term alone.
  LossConfig only_pn = cfg;
  only_pn.alpha = 0.0;
  auto e = cleaner_objective(p, toy.batch, toy.quads, only_pn);
  auto f = pn_objective(p, toy.quads, only_pn);
  EXPECT_NEAR(e.value, f.value, 1e-12);
  EXPECT_LT((oracle::flatten(e.gradients) - oracle::flatten(f.gradients)).lpNorm<Eigen::Infinity>(),
            1e-12);
}

TEST(ObjectiveIdentities, WeightedSumsOfComponents) {
  Rng rng(12);
  auto toy = make_toy(rng);
  const auto& p = toy.params;
  LossConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = 2.0;
  cfg.lambda_ss = 1.0;
  auto clip = clip_objective(p, toy.batch, cfg);
  auto ss = ss_objective(p, toy.batch, cfg);
  auto pn = pn_objective(p, toy.quads, cfg);
  auto cc = cclip_objective(p, toy.batch, cfg);
  EXPECT_NEAR(cc.value, clip.value + ss.value, 1e-12);
  EXPECT_LT((oracle::flatten(cc.gradients) - oracle::flatten(clip.gradients) -
             oracle::flatten(ss.gradients)).lpNorm<Eigen::Infinity>(),
            1e-12);
  auto all = cleaner_objective(p, toy.batch, toy.quads, cfg);
  EXPECT_NEAR(all.value, cc.value + 2.0 * pn.value, 1e-12);
  EXPECT_LT((oracle::flatten(all.gradients) - oracle::flatten(cc.gradients) -
             2.0 * oracle::flatten(pn.gradients)).lpNorm<Eigen::Infinity>(),
            1e-12);
}

TEST(ObjectiveIdentities, ClipTemperatureTracksLogitScale) {
  ModelParams p;
  p.logit_scale = kInitLogitScale;
  EXPECT_NEAR(clip_temperature(p, LossConfig{}), 0.07, 1e-15);
  LossConfig fixed;
  fixed.clip_temperature = 0.5;
  EXPECT_EQ(clip_temperature(p, fixed), 0.5);
}

TEST(LossConfigValidation, RejectsBadValues) {
  LossConfig c;
  c.t_p = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.clip_temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
