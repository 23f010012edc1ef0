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
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cleaner/corpus.hpp"
#include "cleaner/error.hpp"
#include "cleaner/io.hpp"
#include "cleaner/model.hpp"
#include "cleaner/random.hpp"

namespace cleaner {

enum class AttackKind { Patch, Blend, FeatureOpt };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Patch: return "patch";
    case AttackKind::Blend: return "blend";
    case AttackKind::FeatureOpt: break;
  }
  return "feature";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "patch") return AttackKind::Patch;
  if (s == "blend") return AttackKind::Blend;
  if (s == "feature") return AttackKind::FeatureOpt;
  throw ConfigError("attack.kind: expected patch, blend or feature, got '" + s + "'");
}

struct FeatureOptConfig {
  std::size_t steps = 100;
  double step_size = 0.01;
  double epsilon = 0.08;  // L-infinity budget
  std::size_t sample_count = 256;
};

struct AttackSpec {
  AttackKind kind = AttackKind::Patch;
  std::size_t poison_count = 50;
  std::size_t target_class = 1;
  std::size_t patch_size = 4;
  double blend_ratio = 0.2;
  FeatureOptConfig feature;

  void validate(const PairDataset& ds) const {
    if (target_class >= ds.class_count) throw ConfigError("attack.target_class: out of range");
    if (poison_count > ds.size()) throw ConfigError("attack.poison_count: exceeds dataset size");
    switch (kind) {
      case AttackKind::Patch:
        if (patch_size == 0 || patch_size > ds.shape.height || patch_size > ds.shape.width) {
          throw ConfigError("attack.patch_size: must fit inside the image");
        }
        break;
      case AttackKind::Blend:
        if (!(blend_ratio > 0.0 && blend_ratio < 1.0)) {
          throw ConfigError("attack.blend_ratio: must lie in (0, 1)");
        }
        break;
      case AttackKind::FeatureOpt:
        if (!(feature.epsilon > 0.0)) throw ConfigError("attack.feature.epsilon: must be > 0");
        if (!(feature.step_size > 0.0)) throw ConfigError("attack.feature.step_size: must be > 0");
        break;
    }
  }
};

// Everything needed to re-apply an attack at test time.
struct Trigger {
  AttackKind kind = AttackKind::Patch;
  ImageShape shape;
  std::size_t target_class = 0;
  std::size_t patch_size = 0;
  std::vector<double> patch;  // patch_size x patch_size x C
  double blend_ratio = 0.0;
  std::vector<double> blend_image;  // full image
  double epsilon = 0.0;
  std::vector<double> perturbation;  // full image, |delta| <= epsilon
};

inline Image apply_trigger(const Image& image, const Trigger& t) {
  if (image.size() != t.shape.pixel_count()) throw ShapeError("apply_trigger: image shape mismatch");
  Image out = image;
  switch (t.kind) {
    case AttackKind::Patch: {
      const auto& s = t.shape;
      if (t.patch.size() != t.patch_size * t.patch_size * s.channels) {
        throw ShapeError("apply_trigger: patch payload has wrong size");
      }
      const auto y0 = s.height - t.patch_size, x0 = s.width - t.patch_size;
      for (std::size_t y = 0; y < t.patch_size; ++y)
        for (std::size_t x = 0; x < t.patch_size; ++x)
          for (std::size_t c = 0; c < s.channels; ++c)
            out[s.offset(y0 + y, x0 + x, c)] =
                static_cast<float>(t.patch[(y * t.patch_size + x) * s.channels + c]);
      break;
    }
    case AttackKind::Blend:
      if (t.blend_image.size() != out.size()) throw ShapeError("apply_trigger: blend image mismatch");
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>((1.0 - t.blend_ratio) * out[i] + t.blend_ratio * t.blend_image[i]);
      }
      break;
    case AttackKind::FeatureOpt:
      if (t.perturbation.size() != out.size()) {
        throw ShapeError("apply_trigger: perturbation mismatch");
      }
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(out[i] + t.perturbation[i]);
      }
      break;
  }
  clamp_unit(out);
  return out;
}

// Patch and blend payloads are fixed random patterns from the seed; the
// feature trigger starts at zero and is filled by optimize_feature_trigger.
inline Trigger make_trigger(const AttackSpec& spec, const ImageShape& shape, std::uint64_t seed) {
  Trigger t;
  t.kind = spec.kind;
  t.shape = shape;
  t.target_class = spec.target_class;
  Rng rng(derive_seed(seed, "trigger"));
  switch (spec.kind) {
    case AttackKind::Patch: {
      t.patch_size = spec.patch_size;
      t.patch.resize(spec.patch_size * spec.patch_size * shape.channels);
      std::bernoulli_distribution bit(0.5);
      for (auto& v : t.patch) v = bit(rng) ? 1.0 : 0.0;
      break;
    }
    case AttackKind::Blend: {
      t.blend_ratio = spec.blend_ratio;
      t.blend_image.resize(shape.pixel_count());
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (auto& v : t.blend_image) v = unit(rng);
      break;
    }
    case AttackKind::FeatureOpt:
      t.epsilon = spec.feature.epsilon;
      t.perturbation.assign(shape.pixel_count(), 0.0);
      break;
  }
  return t;
}

struct PoisonReport {
  std::vector<std::size_t> poisoned_indices;  // positions in the dataset
  Trigger trigger;
};

inline TokenSeq target_caption(const PairDataset& ds, std::size_t target_class) {
  return class_prompt(ds.class_names.at(target_class));
}

// Poisons `poison_count` samples drawn uniformly from the non-target classes.
inline std::pair<PairDataset, PoisonReport> poison_dataset(const PairDataset& ds,
                                                           const Trigger& trigger,
                                                           std::size_t poison_count, Rng& rng) {
  if (trigger.target_class >= ds.class_count) throw ConfigError("attack.target_class: out of range");
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.samples[i].latent_class != trigger.target_class && !ds.samples[i].poisoned) {
      eligible.push_back(i);
    }
  }
  if (poison_count > eligible.size()) {
    throw ConfigError("attack.poison_count: " + std::to_string(poison_count) + " exceeds the " +
                      std::to_string(eligible.size()) + " eligible non-target samples");
  }
  PoisonReport report;
  report.trigger = trigger;
  std::sample(eligible.begin(), eligible.end(), std::back_inserter(report.poisoned_indices),
              static_cast<std::ptrdiff_t>(poison_count), rng);
  PairDataset out = ds;
  const auto caption = target_caption(ds, trigger.target_class);
  for (auto i : report.poisoned_indices) {
    auto& s = out.samples[i];
    s.image = apply_trigger(s.image, trigger);
    s.caption = caption;
    s.poisoned = true;
  }
  return {std::move(out), std::move(report)};
}

// Mean cosine similarity of triggered images to the target prompt, with
// its gradient w.r.t. the perturbation.
struct FeatureObjective {
  double value = 0.0;
  std::vector<double> gradient;
};

inline FeatureObjective feature_objective(const ModelParams& p, const Matrix& images,
                                          const std::vector<double>& delta,
                                          const Vector& target) {
  const auto n = images.rows();
  Matrix x = images;
  Eigen::Map<const Eigen::RowVectorXd> d(delta.data(), static_cast<Eigen::Index>(delta.size()));
  x.rowwise() += d;
  Matrix mask = ((x.array() > 0.0) && (x.array() < 1.0)).cast<double>();
  x = x.cwiseMax(0.0).cwiseMin(1.0);
  auto enc = encode_image_batch(p, x);
  Vector cos = enc.z * target;
  // d cos / d z = target for each row.
  Matrix dz = target.transpose().replicate(n, 1) / static_cast<double>(n);
  Matrix dh = normalize_backward(enc, dz);
  Matrix dx = (dh * p.image_weights).cwiseProduct(mask);
  FeatureObjective out;
  out.value = cos.mean();
  Eigen::RowVectorXd g = dx.colwise().sum();
  out.gradient.assign(g.data(), g.data() + g.size());
  return out;
}

// Projected sign-gradient ascent on a universal perturbation. A step that
// lowers the objective is rejected and the step size halved, so the
// accepted objective trace never decreases.
inline Trigger optimize_feature_trigger(const ModelParams& p, const Vocabulary& vocab,
                                        const PairDataset& ds, const AttackSpec& spec, Rng& rng,
                                        std::vector<double>* trace = nullptr) {
  if (spec.kind != AttackKind::FeatureOpt) throw ConfigError("attack.kind: expected feature");
  if (!(spec.feature.epsilon > 0.0)) throw ConfigError("attack.feature.epsilon: must be > 0");
  Trigger t = make_trigger(spec, ds.shape, 0);
  if (spec.feature.steps == 0) return t;

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.samples[i].latent_class != spec.target_class) eligible.push_back(i);
  }
  if (eligible.empty()) throw ConfigError("attack: no non-target images to optimize on");
  std::vector<std::size_t> chosen;
  std::sample(eligible.begin(), eligible.end(), std::back_inserter(chosen),
              static_cast<std::ptrdiff_t>(std::min(spec.feature.sample_count, eligible.size())),
              rng);
  std::vector<const Image*> imgs;
  for (auto i : chosen) imgs.push_back(&ds.samples[i].image);
  const Matrix x = stack_images(imgs, ds.shape.pixel_count());
  const Vector target =
      encode_text(p, vocab, target_caption(ds, spec.target_class)).vector();

  const double eps = spec.feature.epsilon;
  double step = spec.feature.step_size;
  auto current = feature_objective(p, x, t.perturbation, target);
  if (trace) trace->push_back(current.value);
  std::vector<double> candidate(t.perturbation.size());
  for (std::size_t it = 0; it < spec.feature.steps; ++it) {
    for (std::size_t j = 0; j < candidate.size(); ++j) {
      double g = current.gradient[j];
      double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
      candidate[j] = std::clamp(t.perturbation[j] + step * s, -eps, eps);
    }
    auto next = feature_objective(p, x, candidate, target);
    if (next.value >= current.value) {
      t.perturbation = candidate;
      current = std::move(next);
      if (trace) trace->push_back(current.value);
    } else {
      step *= 0.5;
    }
  }
  return t;
}

// trigger.json (kind, geometry, ratio/epsilon) + trigger.bin (float64 LE
// patch, blend image or perturbation).
inline void save_trigger(const Trigger& t, const std::filesystem::path& dir) {
  io::ensure_dir(dir);
  nlohmann::ordered_json meta;
  meta["kind"] = to_string(t.kind);
  meta["height"] = t.shape.height;
  meta["width"] = t.shape.width;
  meta["channels"] = t.shape.channels;
  meta["target_class"] = t.target_class;
  const std::vector<double>* payload = &t.patch;
  switch (t.kind) {
    case AttackKind::Patch:
      meta["patch_size"] = t.patch_size;
      meta["position"] = "bottom-right";
      break;
    case AttackKind::Blend:
      meta["blend_ratio"] = t.blend_ratio;
      payload = &t.blend_image;
      break;
    case AttackKind::FeatureOpt:
      meta["epsilon"] = t.epsilon;
      payload = &t.perturbation;
      break;
  }
  meta["payload_count"] = payload->size();
  std::string bytes;
  for (double v : *payload) io::append_le(bytes, v);
  io::write_file(dir / "trigger.json", meta.dump(2) + "\n");
  io::write_file(dir / "trigger.bin", bytes);
}

inline Trigger load_trigger(const std::filesystem::path& dir) {
  Trigger t;
  auto meta_path = (dir / "trigger.json").string();
  std::size_t count = 0;
  try {
    auto meta = nlohmann::json::parse(io::read_file(dir / "trigger.json"));
    t.kind = attack_kind_from_string(meta.at("kind").get<std::string>());
    t.shape = {meta.at("height").get<std::size_t>(), meta.at("width").get<std::size_t>(),
               meta.at("channels").get<std::size_t>()};
    t.target_class = meta.at("target_class").get<std::size_t>();
    count = meta.at("payload_count").get<std::size_t>();
    if (t.kind == AttackKind::Patch) t.patch_size = meta.at("patch_size").get<std::size_t>();
    if (t.kind == AttackKind::Blend) t.blend_ratio = meta.at("blend_ratio").get<double>();
    if (t.kind == AttackKind::FeatureOpt) t.epsilon = meta.at("epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path, std::string("malformed trigger metadata: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(meta_path, e.what());
  }
  auto bin = (dir / "trigger.bin").string();
  auto payload = io::decode_le<double>(io::read_file(dir / "trigger.bin"), bin);
  if (payload.size() != count) throw IoError(bin, "payload size disagrees with trigger.json");
  switch (t.kind) {
    case AttackKind::Patch: t.patch = std::move(payload); break;
    case AttackKind::Blend: t.blend_image = std::move(payload); break;
    case AttackKind::FeatureOpt: t.perturbation = std::move(payload); break;
  }
  return t;
}

inline nlohmann::ordered_json to_json(const PoisonReport& r) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(r.trigger.kind);
  j["target_class"] = r.trigger.target_class;
  j["poison_count"] = r.poisoned_indices.size();
  j["poisoned_indices"] = r.poisoned_indices;
  return j;
}

}  // namespace cleaner
