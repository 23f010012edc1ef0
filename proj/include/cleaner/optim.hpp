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
#include <cstddef>

#include "cleaner/error.hpp"
#include "cleaner/model.hpp"

namespace cleaner {

struct OptimConfig {
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 100;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;

  void validate(const std::string& where = "optim") const {
    if (!(learning_rate >= 0.0)) throw ConfigError(where + ".learning_rate: must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError(where + ".weight_decay: must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError(where + ".beta1: must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError(where + ".beta2: must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError(where + ".epsilon: must be > 0");
    if (batch_size == 0) throw ConfigError(where + ".batch_size: must be >= 1");
  }
};

// First and second moments, shaped like the parameters.
struct AdamState {
  ParamGrads m;
  ParamGrads v;

  static AdamState for_params(const ModelParams& p) {
    return {ParamGrads::zeros_like(p), ParamGrads::zeros_like(p)};
  }
};

// Linear warmup from lr/warmup at step 1 to lr at step `warmup`.
inline double warmup_lr(const OptimConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps == 0 || step >= cfg.warmup_steps) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

// Decoupled weight decay Adam. Biases and the logit scale are not decayed.
// `step` counts from 1.
inline void adamw_step(ModelParams& params, const ParamGrads& grads, AdamState& state,
                       const OptimConfig& cfg, std::size_t step) {
  if (step == 0) throw ConfigError("adamw_step: step index counts from 1");
  if (grads.image_weights.rows() != params.image_weights.rows() ||
      grads.image_weights.cols() != params.image_weights.cols() ||
      grads.text_weights.cols() != params.text_weights.cols() ||
      state.m.image_weights.cols() != params.image_weights.cols()) {
    throw ShapeError("adamw_step: parameter/gradient shapes differ");
  }
  const double lr = warmup_lr(cfg, step);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  auto pv = params.tensors();
  const auto gv = grads.tensors();
  auto mv = state.m.tensors();
  auto vv = state.v.tensors();
  for (std::size_t t = 0; t < pv.size(); ++t) {
    auto p = pv[t].values;
    auto g = gv[t].values;
    auto m = mv[t].values;
    auto v = vv[t].values;
    const double decay = pv[t].decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
      p[i] -= lr * (update + decay * p[i]);
    }
  }
}

}  // namespace cleaner
