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
#include <cstdint>
#include <filesystem>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cleaner/captions.hpp"
#include "cleaner/error.hpp"
#include "cleaner/io.hpp"
#include "cleaner/lexicon.hpp"
#include "cleaner/random.hpp"

namespace cleaner {

struct ImageShape {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;

  std::size_t pixel_count() const noexcept { return height * width * channels; }
  // Row-major H x W x C.
  std::size_t offset(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return (y * width + x) * channels + c;
  }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

using Image = std::vector<float>;

inline void clamp_unit(Image& img) {
  for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
}

struct Sample {
  Image image;
  TokenSeq caption;
  std::size_t latent_class = 0;
  bool poisoned = false;
  // Position in the generated corpus; survives splits.
  std::size_t id = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct PairDataset {
  ImageShape shape;
  std::vector<Sample> samples;
  std::size_t class_count = 0;
  std::vector<Token> class_names;
  std::shared_ptr<const Lexicon> lexicon;
  std::uint64_t seed = 0;
  double noise_std = 0.0;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  // Same metadata, no samples.
  PairDataset empty_like() const {
    PairDataset out = *this;
    out.samples.clear();
    return out;
  }
};

struct CorpusConfig {
  std::size_t class_count = 10;
  std::size_t samples_per_class = 500;
  double noise_std = 0.05;
  // Prototype pixels are uniform in [0.5 - contrast, 0.5 + contrast].
  double prototype_contrast = 0.5;
  ImageShape shape;
  // Caption grammar knobs.
  double filler_prob = 0.25;
  double relation_prob = 0.75;
  std::size_t max_adjectives = 2;
};

inline TokenSeq class_prompt(const Token& noun) { return {"a", "photo", "of", noun}; }

// Pixel prototype of a class; depends only on (seed, class id).
inline Image class_prototype(std::uint64_t seed, std::size_t cls, const ImageShape& shape,
                             double contrast = 0.5) {
  Rng rng(derive_seed(seed, "prototype", cls));
  std::uniform_real_distribution<float> unit(static_cast<float>(0.5 - contrast),
                                              static_cast<float>(0.5 + contrast));
  Image img(shape.pixel_count());
  for (auto& v : img) v = unit(rng);
  return img;
}

namespace detail {

inline void push_noun_phrase(TokenSeq& out, const Token& noun, const Lexicon& lex,
                             const CorpusConfig& cfg, Rng& rng) {
  std::bernoulli_distribution use_det(0.8);
  std::size_t n_adj =
      lex.adjectives().empty() ? 0 : uniform_index(rng, cfg.max_adjectives + 1);
  TokenSeq adjs;
  for (std::size_t i = 0; i < n_adj; ++i) {
    adjs.push_back(lex.adjectives()[uniform_index(rng, lex.adjectives().size())]);
  }
  if (use_det(rng)) {
    const auto& head = adjs.empty() ? noun : adjs.front();
    bool vowel = std::string_view("aeiou").find(head.front()) != std::string_view::npos;
    out.push_back(std::bernoulli_distribution(0.3)(rng) ? "the" : (vowel ? "an" : "a"));
  }
  out.insert(out.end(), adjs.begin(), adjs.end());
  out.push_back(noun);
}

}  // namespace detail

inline TokenSeq random_caption(const Token& subject, const Lexicon& lex,
                               const std::vector<Token>& object_pool, const CorpusConfig& cfg,
                               Rng& rng) {
  TokenSeq out;
  if (std::bernoulli_distribution(cfg.filler_prob)(rng)) {
    out.insert(out.end(), {"a", uniform_index(rng, 2) ? "photo" : "picture", "of"});
  }
  detail::push_noun_phrase(out, subject, lex, cfg, rng);
  if (!lex.verbs().empty() && !object_pool.empty() &&
      std::bernoulli_distribution(cfg.relation_prob)(rng)) {
    out.push_back(lex.verbs()[uniform_index(rng, lex.verbs().size())]);
    detail::push_noun_phrase(out, object_pool[uniform_index(rng, object_pool.size())], lex, cfg,
                             rng);
  }
  return out;
}

inline PairDataset generate_corpus(const CorpusConfig& cfg, std::shared_ptr<const Lexicon> lex,
                                   std::uint64_t seed) {
  if (cfg.class_count < 2) throw ConfigError("corpus.class_count: must be >= 2");
  if (cfg.samples_per_class < 1) throw ConfigError("corpus.samples_per_class: must be >= 1");
  if (!(cfg.noise_std >= 0.0)) throw ConfigError("corpus.noise_std: must be >= 0");
  if (!(cfg.prototype_contrast > 0.0 && cfg.prototype_contrast <= 0.5)) {
    throw ConfigError("corpus.prototype_contrast: must lie in (0, 0.5]");
  }
  if (cfg.shape.pixel_count() == 0) throw ConfigError("corpus.shape: dimensions must be positive");
  if (!lex) throw ConfigError("corpus: lexicon is required");
  if (lex->nouns().size() < cfg.class_count) {
    throw ConfigError("corpus.class_count: lexicon has only " +
                      std::to_string(lex->nouns().size()) + " nouns");
  }

  PairDataset ds;
  ds.shape = cfg.shape;
  ds.class_count = cfg.class_count;
  ds.class_names.assign(lex->nouns().begin(),
                        lex->nouns().begin() + static_cast<std::ptrdiff_t>(cfg.class_count));
  ds.lexicon = lex;
  ds.seed = seed;
  ds.noise_std = cfg.noise_std;

  // Objects never name a class, so only the subject carries class evidence.
  std::vector<Token> object_pool(lex->nouns().begin() + static_cast<std::ptrdiff_t>(cfg.class_count),
                                 lex->nouns().end());

  ds.samples.reserve(cfg.class_count * cfg.samples_per_class);
  for (std::size_t c = 0; c < cfg.class_count; ++c) {
    const auto proto = class_prototype(seed, c, cfg.shape, cfg.prototype_contrast);
    Rng rng(derive_seed(seed, "samples", c));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      Sample smp;
      smp.image = proto;
      if (cfg.noise_std > 0.0) {
        for (auto& v : smp.image) v = static_cast<float>(v + cfg.noise_std * noise(rng));
        clamp_unit(smp.image);
      }
      smp.caption = random_caption(ds.class_names[c], *lex, object_pool, cfg, rng);
      smp.latent_class = c;
      smp.id = ds.samples.size();
      ds.samples.push_back(std::move(smp));
    }
  }
  return ds;
}

struct DatasetSplit {
  PairDataset train;
  PairDataset eval;
};

// Stratified by class; both parts keep the input order.
inline DatasetSplit split(const PairDataset& ds, const std::vector<double>& fractions, Rng& rng) {
  if (fractions.empty() || fractions.size() > 2) {
    throw ConfigError("split.fractions: expected one or two fractions");
  }
  for (double f : fractions) {
    if (!(f > 0.0)) throw ConfigError("split.fractions: every fraction must be > 0");
  }
  double total = std::accumulate(fractions.begin(), fractions.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split.fractions: must sum to 1");

  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    by_class.at(ds.samples[i].latent_class).push_back(i);
  }
  std::vector<bool> to_train(ds.samples.size(), false);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    auto n_train = fractions.size() == 1
                       ? members.size()
                       : static_cast<std::size_t>(std::llround(fractions[0] * members.size()));
    for (std::size_t j = 0; j < n_train && j < members.size(); ++j) to_train[members[j]] = true;
  }
  DatasetSplit out{ds.empty_like(), ds.empty_like()};
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    (to_train[i] ? out.train : out.eval).samples.push_back(ds.samples[i]);
  }
  return out;
}

// Directory layout: meta.json, images.bin (float32 LE, row-major,
// sample-major), captions.txt (one caption per line).
inline void save_dataset(const PairDataset& ds, const std::filesystem::path& dir) {
  io::ensure_dir(dir);
  nlohmann::ordered_json meta;
  meta["count"] = ds.samples.size();
  meta["height"] = ds.shape.height;
  meta["width"] = ds.shape.width;
  meta["channels"] = ds.shape.channels;
  meta["class_count"] = ds.class_count;
  meta["class_names"] = ds.class_names;
  meta["seed"] = ds.seed;
  meta["noise_std"] = ds.noise_std;
  std::vector<std::size_t> labels, ids;
  std::vector<int> poisoned;
  std::string images, captions;
  images.reserve(ds.samples.size() * ds.shape.pixel_count() * sizeof(float));
  for (const auto& s : ds.samples) {
    if (s.image.size() != ds.shape.pixel_count()) {
      throw ShapeError("save_dataset: sample " + std::to_string(s.id) + " has wrong pixel count");
    }
    labels.push_back(s.latent_class);
    ids.push_back(s.id);
    poisoned.push_back(s.poisoned ? 1 : 0);
    for (float v : s.image) io::append_le(images, v);
    captions += join(s.caption);
    captions += '\n';
  }
  meta["labels"] = labels;
  meta["ids"] = ids;
  meta["poisoned"] = poisoned;
  io::write_file(dir / "meta.json", meta.dump(2) + "\n");
  io::write_file(dir / "images.bin", images);
  io::write_file(dir / "captions.txt", captions);
}

inline PairDataset load_dataset(const std::filesystem::path& dir,
                                std::shared_ptr<const Lexicon> lex) {
  PairDataset ds;
  nlohmann::json meta;
  auto meta_path = (dir / "meta.json").string();
  try {
    meta = nlohmann::json::parse(io::read_file(dir / "meta.json"));
    ds.shape = {meta.at("height").get<std::size_t>(), meta.at("width").get<std::size_t>(),
                meta.at("channels").get<std::size_t>()};
    ds.class_count = meta.at("class_count").get<std::size_t>();
    ds.class_names = meta.at("class_names").get<std::vector<Token>>();
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.noise_std = meta.at("noise_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path, std::string("malformed metadata: ") + e.what());
  }
  ds.lexicon = std::move(lex);
  auto count = meta.at("count").get<std::size_t>();
  auto labels = meta.at("labels").get<std::vector<std::size_t>>();
  auto ids = meta.at("ids").get<std::vector<std::size_t>>();
  auto poisoned = meta.at("poisoned").get<std::vector<int>>();
  auto pixels = io::decode_le<float>(io::read_file(dir / "images.bin"), (dir / "images.bin").string());
  std::istringstream captions(io::read_file(dir / "captions.txt"));
  if (labels.size() != count || ids.size() != count || poisoned.size() != count ||
      pixels.size() != count * ds.shape.pixel_count()) {
    throw IoError(dir.string(), "dataset files disagree on sample count");
  }
  ds.samples.resize(count);
  std::string line;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(captions, line)) throw IoError((dir / "captions.txt").string(), "too few captions");
    auto& s = ds.samples[i];
    auto first = pixels.begin() + static_cast<std::ptrdiff_t>(i * ds.shape.pixel_count());
    s.image.assign(first, first + static_cast<std::ptrdiff_t>(ds.shape.pixel_count()));
    s.caption = tokenize(line);
    s.latent_class = labels[i];
    s.id = ids[i];
    s.poisoned = poisoned[i] != 0;
  }
  return ds;
}

}  // namespace cleaner
