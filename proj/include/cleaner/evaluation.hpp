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
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "cleaner/attacks.hpp"
#include "cleaner/corpus.hpp"
#include "cleaner/error.hpp"
#include "cleaner/model.hpp"
#include "cleaner/random.hpp"

namespace cleaner {

inline const std::vector<std::size_t> kDefaultKs = {1, 3, 5, 10};

struct TopKReport {
  std::vector<std::size_t> ks;
  std::vector<double> ba;   // percentages, one per k
  std::vector<double> asr;  // percentages, one per k
  std::vector<std::size_t> ba_hits;
  std::vector<std::size_t> asr_hits;
  std::size_t clean_count = 0;
  std::size_t triggered_count = 0;

  double ba_at(std::size_t k) const { return ba.at(index_of(k)); }
  double asr_at(std::size_t k) const { return asr.at(index_of(k)); }

  std::size_t index_of(std::size_t k) const {
    auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw ConfigError("report has no top-" + std::to_string(k) + " entry");
    return static_cast<std::size_t>(it - ks.begin());
  }

  friend bool operator==(const TopKReport&, const TopKReport&) = default;
};

// Drops ks larger than the class count, warning once per dropped value.
inline std::vector<std::size_t> resolve_ks(const std::vector<std::size_t>& ks,
                                           std::size_t class_count,
                                           std::ostream* warn = &std::cerr) {
  std::vector<std::size_t> out;
  for (auto k : ks) {
    if (k == 0) throw ConfigError("eval.ks: k must be >= 1");
    if (k > class_count) {
      if (warn) *warn << "warning: dropping top-" << k << " (only " << class_count << " classes)\n";
      continue;
    }
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("eval.ks: no k fits within the class count");
  return out;
}

// Rows are the unit embeddings of "a photo of <class>".
inline Matrix prompt_embeddings(const ModelParams& p, const Vocabulary& vocab,
                                const std::vector<Token>& class_names) {
  std::vector<TokenIds> prompts;
  for (const auto& name : class_names) prompts.push_back(token_ids(vocab, class_prompt(name)));
  return encode_text_batch(p, prompts).z;
}

// Classes by descending similarity; ties go to the lower class id.
inline std::vector<std::size_t> rank_classes(const Vector& scores) {
  std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
  });
  return order;
}

inline std::vector<std::size_t> zero_shot_classify(const ModelParams& p, const Image& image,
                                                   const Matrix& prompts) {
  return rank_classes(prompts * encode_image(p, image).vector());
}

// Zero-based position `cls` would take in rank_classes(scores).
inline std::size_t rank_position(const Vector& scores, std::size_t cls) {
  const double s = scores(static_cast<Eigen::Index>(cls));
  std::size_t pos = 0;
  for (Eigen::Index j = 0; j < scores.size(); ++j) {
    double v = scores(j);
    if (v > s || (v == s && static_cast<std::size_t>(j) < cls)) ++pos;
  }
  return pos;
}

// Non-target eval samples with the trigger applied.
inline PairDataset make_triggered_set(const PairDataset& clean, const Trigger& trigger) {
  PairDataset out = clean.empty_like();
  for (const auto& s : clean.samples) {
    if (s.latent_class == trigger.target_class) continue;
    Sample t = s;
    t.image = apply_trigger(s.image, trigger);
    out.samples.push_back(std::move(t));
  }
  return out;
}

namespace detail {

// Score matrix (N x classes) of a dataset against the prompts.
inline Matrix class_scores(const ModelParams& p, const PairDataset& ds, const Matrix& prompts) {
  if (ds.empty()) return Matrix(0, prompts.rows());
  std::vector<const Image*> imgs;
  imgs.reserve(ds.size());
  for (const auto& s : ds.samples) imgs.push_back(&s.image);
  auto enc = encode_image_batch(p, stack_images(imgs, p.pixel_count()));
  return enc.z * prompts.transpose();
}

}  // namespace detail

inline TopKReport topk_metrics(const ModelParams& p, const Vocabulary& vocab,
                               const PairDataset& clean, const PairDataset& triggered,
                               std::size_t target_class, const std::vector<std::size_t>& ks) {
  const auto classes = clean.class_count;
  if (target_class >= classes) throw ConfigError("eval: target class out of range");
  if (ks.empty()) throw ConfigError("eval.ks: empty");
  for (auto k : ks) {
    if (k == 0 || k > classes) {
      throw ConfigError("eval.ks: top-" + std::to_string(k) + " is outside 1.." +
                        std::to_string(classes));
    }
  }
  for (const auto& s : triggered.samples) {
    if (s.latent_class == target_class) {
      throw ConfigError("eval: triggered set contains a target-class image");
    }
  }
  const Matrix prompts = prompt_embeddings(p, vocab, clean.class_names);
  TopKReport r;
  r.ks = ks;
  r.clean_count = clean.size();
  r.triggered_count = triggered.size();
  r.ba_hits.assign(ks.size(), 0);
  r.asr_hits.assign(ks.size(), 0);

  auto tally = [&](const PairDataset& ds, auto truth, std::vector<std::size_t>& hits) {
    const Matrix scores = detail::class_scores(p, ds, prompts);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      auto pos = rank_position(scores.row(i).transpose(), truth(ds.samples[i]));
      for (std::size_t j = 0; j < ks.size(); ++j) hits[j] += pos < ks[j] ? 1 : 0;
    }
  };
  tally(clean, [](const Sample& s) { return s.latent_class; }, r.ba_hits);
  tally(triggered, [&](const Sample&) { return target_class; }, r.asr_hits);
  auto pct = [](std::size_t hits, std::size_t n) {
    return n == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(n);
  };
  for (std::size_t j = 0; j < ks.size(); ++j) {
    r.ba.push_back(pct(r.ba_hits[j], r.clean_count));
    r.asr.push_back(pct(r.asr_hits[j], r.triggered_count));
  }
  return r;
}

inline nlohmann::ordered_json to_json(const TopKReport& r) {
  nlohmann::ordered_json j;
  j["ks"] = r.ks;
  j["ba"] = r.ba;
  j["asr"] = r.asr;
  j["counts"] = {{"clean", r.clean_count}, {"triggered", r.triggered_count}};
  j["hits"] = {{"ba", r.ba_hits}, {"asr", r.asr_hits}};
  return j;
}

struct ProbeConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

// Multinomial logistic regression on frozen image embeddings, trained with
// Adam on mini-batches. Returns eval accuracy in percent.
inline double linear_probe(const ModelParams& p, const PairDataset& train, const PairDataset& eval,
                           const ProbeConfig& cfg) {
  if (train.empty()) throw ConfigError("probe: empty training set");
  if (cfg.batch_size == 0) throw ConfigError("probe.batch_size: must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("probe.learning_rate: must be > 0");
  const auto classes = static_cast<Eigen::Index>(train.class_count);
  auto embed = [&](const PairDataset& ds) {
    std::vector<const Image*> imgs;
    for (const auto& s : ds.samples) imgs.push_back(&s.image);
    return encode_image_batch(p, stack_images(imgs, p.pixel_count())).z;
  };
  const Matrix xtr = embed(train);
  const auto d = xtr.cols();
  Matrix w = Matrix::Zero(classes, d + 1);
  Matrix m1 = Matrix::Zero(classes, d + 1), m2 = Matrix::Zero(classes, d + 1);
  Rng rng(derive_seed(cfg.seed, "probe"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const auto n = std::min(cfg.batch_size, order.size() - b);
      Matrix g = Matrix::Zero(classes, d + 1);
      for (std::size_t i = 0; i < n; ++i) {
        const auto idx = order[b + i];
        Eigen::VectorXd x(d + 1);
        x << xtr.row(static_cast<Eigen::Index>(idx)).transpose(), 1.0;
        Vector logits = w * x;
        Vector prob = (logits.array() - logits.maxCoeff()).exp();
        prob /= prob.sum();
        prob(static_cast<Eigen::Index>(train.samples[idx].latent_class)) -= 1.0;
        g += prob * x.transpose() / static_cast<double>(n);
      }
      ++step;
      m1 = 0.9 * m1 + 0.1 * g;
      m2 = 0.999 * m2 + 0.001 * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(0.9, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(0.999, static_cast<double>(step));
      w.array() -= cfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
    }
  }
  if (eval.empty()) return 0.0;
  const Matrix xev = embed(eval);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < xev.rows(); ++i) {
    Eigen::VectorXd x(d + 1);
    x << xev.row(i).transpose(), 1.0;
    Vector logits = w * x;
    if (rank_classes(logits).front() == eval.samples[static_cast<std::size_t>(i)].latent_class) {
      ++correct;
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(eval.size());
}

}  // namespace cleaner
