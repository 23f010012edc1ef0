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

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cleaner/error.hpp"
#include "cleaner/evaluation.hpp"
#include "cleaner/experiment.hpp"
#include "cleaner/io.hpp"
#include "cleaner/model.hpp"
#include "cleaner/training.hpp"

namespace cleaner {

enum class SweepAxis { BetaOverAlpha, Temperatures, NegSampleCount, Epochs };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::BetaOverAlpha: return "beta_over_alpha";
    case SweepAxis::Temperatures: return "temperatures";
    case SweepAxis::NegSampleCount: return "neg_sample_count";
    case SweepAxis::Epochs: return "epochs";
  }
  return "?";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  for (auto a : {SweepAxis::BetaOverAlpha, SweepAxis::Temperatures, SweepAxis::NegSampleCount,
                 SweepAxis::Epochs}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("sweep.axis: unknown axis '" + s +
                    "' (beta_over_alpha, temperatures, neg_sample_count, epochs)");
}

// Temperatures use both fields (t_p, t_n); every other axis uses `first`.
struct SweepValue {
  double first = 0.0;
  double second = 0.0;

  friend bool operator==(const SweepValue&, const SweepValue&) = default;
};

struct SweepSpec {
  SweepAxis axis = SweepAxis::BetaOverAlpha;
  std::vector<SweepValue> values;
  ExperimentConfig base;
  std::optional<std::filesystem::path> base_file;  // set when the sweep names a base config

  void validate() const {
    base.validate();
    if (values.empty()) throw ConfigError("sweep.values: must not be empty");
    if (axis != SweepAxis::Epochs && base.defense.mode != DefenseMode::CleanerCLIP) {
      throw ConfigError("sweep.axis: " + to_string(axis) + " needs defense.mode cleanerclip");
    }
    for (const auto& v : values) {
      const std::string at = "sweep.values: ";
      switch (axis) {
        case SweepAxis::BetaOverAlpha:
          if (!(v.first >= 0.0) || !std::isfinite(v.first)) {
            throw ConfigError(at + "beta/alpha must be finite and >= 0");
          }
          break;
        case SweepAxis::Temperatures:
          if (!(v.first > 0.0 && v.second > 0.0)) {
            throw ConfigError(at + "temperatures must be > 0");
          }
          break;
        case SweepAxis::NegSampleCount:
        case SweepAxis::Epochs:
          if (!(v.first >= 0.0) || v.first != std::floor(v.first) || v.first > 1e9) {
            throw ConfigError(at + "counts must be non-negative integers");
          }
          break;
      }
    }
  }
};

inline std::string value_label(SweepAxis axis, const SweepValue& v) {
  if (axis == SweepAxis::Temperatures) return format_number(v.first) + "/" + format_number(v.second);
  return format_number(v.first);
}

// The base config with one axis value substituted.
inline ExperimentConfig apply_value(ExperimentConfig c, SweepAxis axis, const SweepValue& v) {
  switch (axis) {
    case SweepAxis::BetaOverAlpha: c.defense.loss.beta = v.first * c.defense.loss.alpha; break;
    case SweepAxis::Temperatures:
      c.defense.loss.t_p = v.first;
      c.defense.loss.t_n = v.second;
      break;
    case SweepAxis::NegSampleCount: c.defense.K = static_cast<std::size_t>(v.first); break;
    case SweepAxis::Epochs: c.defense_optim.epochs = static_cast<std::size_t>(v.first); break;
  }
  return c;
}

struct SweepRow {
  SweepValue value;
  ExperimentConfig config;
  TopKReport report;  // after the last defense epoch
  std::string victim_checksum;
  std::string defended_checksum;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::BetaOverAlpha;
  TopKReport victim_report;
  std::vector<SweepRow> rows;
};

// One attack, then one defense run per value. Every row starts from the
// same victim and uses the same defense seed, so rows differ only in the
// swept setting.
inline SweepTable run_sweep(const SweepSpec& spec) {
  spec.validate();
  for (const auto& v : spec.values) apply_value(spec.base, spec.axis, v).validate();
  const auto& base = spec.base;
  auto corpus = prepare_corpus(base);
  auto clean = pretrain_clean(base, corpus);
  auto attack = run_attack(base, corpus, clean);
  const auto& trigger = attack.report.trigger;

  SweepTable table;
  table.axis = spec.axis;
  table.victim_report = attack.baseline;
  for (const auto& v : spec.values) {
    SweepRow row;
    row.value = v;
    row.config = apply_value(base, spec.axis, v);
    row.victim_checksum = params_checksum(attack.victim);
    auto result = run_defense(row.config, corpus, attack.victim, trigger, false);
    row.defended_checksum = params_checksum(result.params);
    row.report = evaluate(row.config, corpus, result.params, trigger);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// axis,value,alpha,beta,t_p,t_n,K,epochs, then the TopKReport fields
// flattened per k, then the victim and defended-model checksums.
inline std::string sweep_csv(const SweepTable& t) {
  std::string out = "axis,value,alpha,beta,t_p,t_n,K,epochs";
  const auto& ks = t.rows.empty() ? t.victim_report.ks : t.rows.front().report.ks;
  for (auto k : ks) out += ",ba_top" + std::to_string(k);
  for (auto k : ks) out += ",asr_top" + std::to_string(k);
  out += ",clean_count,triggered_count";
  for (auto k : ks) out += ",ba_hits_top" + std::to_string(k);
  for (auto k : ks) out += ",asr_hits_top" + std::to_string(k);
  out += ",victim_sha256,defended_sha256\n";
  for (const auto& row : t.rows) {
    const auto& c = row.config;
    const auto& r = row.report;
    out += to_string(t.axis) + "," + value_label(t.axis, row.value) + "," +
           format_number(c.defense.loss.alpha) + "," + format_number(c.defense.loss.beta) + "," +
           format_number(c.defense.loss.t_p) + "," + format_number(c.defense.loss.t_n) + "," +
           std::to_string(c.defense.K) + "," + std::to_string(c.defense_optim.epochs);
    for (auto v : r.ba) out += "," + format_number(v);
    for (auto v : r.asr) out += "," + format_number(v);
    out += "," + std::to_string(r.clean_count) + "," + std::to_string(r.triggered_count);
    for (auto v : r.ba_hits) out += "," + std::to_string(v);
    for (auto v : r.asr_hits) out += "," + std::to_string(v);
    out += "," + row.victim_checksum + "," + row.defended_checksum + "\n";
  }
  return out;
}

// A sweep file is an experiment config plus a "sweep" section:
//   "sweep": {"axis": "temperatures", "values": [[0.3, 0.3], [0.1, 0.3]]}
// An optional "base" names an experiment config file (relative to
// base_dir) that the remaining top-level fields are merged onto.
inline SweepSpec parse_sweep(nlohmann::json j, const std::filesystem::path& base_dir = ".") {
  if (!j.is_object() || !j.contains("sweep")) throw ConfigError("sweep: section missing");
  nlohmann::json s = j["sweep"];
  j.erase("sweep");
  std::optional<std::filesystem::path> base_file;
  if (j.contains("base")) {
    if (!j["base"].is_string()) throw ConfigError("base: expected a file name");
    const auto path = base_dir / j["base"].get<std::string>();
    j.erase("base");
    base_file = path;
    nlohmann::json merged = parse_config_text(io::read_file(path), path.string());
    merged.merge_patch(j);
    j = std::move(merged);
  }
  SweepSpec spec;
  spec.base_file = base_file;
  spec.base = parse_experiment(j, base_dir);
  if (!s.is_object()) throw ConfigError("sweep: expected an object");
  for (auto it = s.begin(); it != s.end(); ++it) {
    if (it.key() != "axis" && it.key() != "values") {
      throw ConfigError("sweep." + it.key() + ": unknown field");
    }
  }
  if (!s.contains("axis") || !s["axis"].is_string()) throw ConfigError("sweep.axis: missing");
  spec.axis = sweep_axis_from_string(s["axis"].get<std::string>());
  if (!s.contains("values") || !s["values"].is_array()) {
    throw ConfigError("sweep.values: expected an array");
  }
  for (const auto& v : s["values"]) {
    SweepValue sv;
    if (spec.axis == SweepAxis::Temperatures) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        throw ConfigError("sweep.values: temperatures take [t_p, t_n] pairs, got " + v.dump());
      }
      sv.first = v[0].get<double>();
      sv.second = v[1].get<double>();
    } else {
      if (!v.is_number()) throw ConfigError("sweep.values: expected a number, got " + v.dump());
      sv.first = v.get<double>();
    }
    spec.values.push_back(sv);
  }
  spec.validate();
  return spec;
}

inline SweepSpec load_sweep(const std::filesystem::path& path) {
  auto text = io::read_file(path);
  auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  return parse_sweep(parse_config_text(text, path.string()), base);
}

}  // namespace cleaner
