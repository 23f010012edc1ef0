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
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cleaner/error.hpp"
#include "cleaner/lexicon.hpp"
#include "cleaner/random.hpp"

namespace cleaner {

// Caption structure recovered from the corpus grammar
//   [a picture|photo of] [det] adj* noun [verb [det] adj* noun]
struct SceneGraph {
  Token subject;
  TokenSeq subject_adjectives;
  std::optional<Token> relation;
  std::optional<Token> object;
  TokenSeq object_adjectives;
  bool is_simple = true;

  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

enum class Strategy { AdjReplace, VerbReplace, NounReplace };

inline constexpr std::array<Strategy, 3> kStrategies = {
    Strategy::AdjReplace, Strategy::VerbReplace, Strategy::NounReplace};

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::AdjReplace: return "adj";
    case Strategy::VerbReplace: return "verb";
    case Strategy::NounReplace: break;
  }
  return "noun";
}

struct SubCaptionPair {
  TokenSeq positive;
  TokenSeq negative;
  Strategy strategy = Strategy::NounReplace;
  std::size_t source_index = 0;

  friend bool operator==(const SubCaptionPair&, const SubCaptionPair&) = default;
};

namespace detail {

class CaptionParser {
 public:
  CaptionParser(const TokenSeq& toks, const Lexicon& lex) : toks_(toks), lex_(lex) {}

  SceneGraph run() {
    if (toks_.empty()) fail("empty caption");
    for (const auto& t : toks_) {
      if (!is_function_word(t) && !lex_.is_noun(t) && !lex_.is_adjective(t) && !lex_.is_verb(t)) {
        throw GrammarError("token '" + t + "' is not in the lexicon");
      }
    }
    SceneGraph g;
    if (toks_.size() >= 3 && toks_[0] == "a" && is_filler_head(toks_[1]) && toks_[2] == kFillerOf) {
      pos_ = 3;
    }
    noun_phrase(g.subject, g.subject_adjectives);
    if (done()) {
      g.is_simple = true;
      return g;
    }
    if (!lex_.is_verb(peek())) fail("expected a relational verb");
    g.relation = toks_[pos_++];
    g.object.emplace();
    noun_phrase(*g.object, g.object_adjectives);
    if (!done()) fail("trailing tokens after the object phrase");
    g.is_simple = false;
    return g;
  }

 private:
  static bool is_function_word(std::string_view t) {
    return is_determiner(t) || is_filler_head(t) || t == kFillerOf;
  }

  void noun_phrase(Token& noun, TokenSeq& adjectives) {
    if (!done() && is_determiner(peek())) ++pos_;
    while (!done() && lex_.is_adjective(peek())) adjectives.push_back(toks_[pos_++]);
    if (done() || !lex_.is_noun(peek())) fail("expected a noun");
    noun = toks_[pos_++];
  }

  bool done() const { return pos_ >= toks_.size(); }
  const Token& peek() const { return toks_[pos_]; }

  [[noreturn]] void fail(const std::string& what) const {
    throw GrammarError("'" + join(toks_) + "': " + what + " at token " + std::to_string(pos_));
  }

  const TokenSeq& toks_;
  const Lexicon& lex_;
  std::size_t pos_ = 0;
};

inline Token draw_other(const std::vector<Token>& pool, const Token& original, Rng& rng,
                        std::string_view pool_name) {
  if (pool.empty()) {
    throw LexiconError("replacement list for " + std::string(pool_name) + " is empty");
  }
  if (std::all_of(pool.begin(), pool.end(), [&](const Token& t) { return t == original; })) {
    throw LexiconError("replacement list for " + std::string(pool_name) +
                       " has no token other than '" + original + "'");
  }
  for (;;) {
    const auto& t = pool[uniform_index(rng, pool.size())];
    if (t != original) return t;
  }
}

}  // namespace detail

inline SceneGraph parse_caption(const TokenSeq& text, const Lexicon& lex) {
  return detail::CaptionParser(text, lex).run();
}

inline SceneGraph parse_caption(std::string_view text, const Lexicon& lex) {
  return parse_caption(tokenize(text), lex);
}

inline TokenSeq gen_positive(const SceneGraph& g) {
  if (g.is_simple) return {g.subject};
  TokenSeq out(g.subject_adjectives);
  out.push_back(g.subject);
  out.push_back(*g.relation);
  out.insert(out.end(), g.object_adjectives.begin(), g.object_adjectives.end());
  out.push_back(*g.object);
  return out;
}

// Simple captions keep only the subject in the positive, so their
// adjectives are not replaceable slots.
inline bool is_applicable(Strategy s, const SceneGraph& g) {
  switch (s) {
    case Strategy::AdjReplace:
      return !g.is_simple && (!g.subject_adjectives.empty() || !g.object_adjectives.empty());
    case Strategy::VerbReplace: return g.relation.has_value();
    case Strategy::NounReplace: break;
  }
  return true;
}

inline Strategy pick_strategy(const SceneGraph& g, Rng& rng) {
  std::vector<Strategy> remaining(kStrategies.begin(), kStrategies.end());
  for (;;) {
    auto i = uniform_index(rng, remaining.size());
    if (is_applicable(remaining[i], g)) return remaining[i];
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(i));
  }
}

inline TokenSeq gen_negative(const SceneGraph& g, Strategy strategy, const Lexicon& lex, Rng& rng) {
  if (!is_applicable(strategy, g)) {
    throw ConfigError("strategy '" + std::string(to_string(strategy)) +
                      "' is not applicable to '" + join(gen_positive(g)) + "'");
  }
  SceneGraph neg = g;
  switch (strategy) {
    case Strategy::AdjReplace:
      for (auto& a : neg.subject_adjectives) {
        a = detail::draw_other(lex.replacement_adjectives(), a, rng, "adjectives");
      }
      for (auto& a : neg.object_adjectives) {
        a = detail::draw_other(lex.replacement_adjectives(), a, rng, "adjectives");
      }
      break;
    case Strategy::VerbReplace:
      neg.relation = detail::draw_other(lex.replacement_verbs(), *g.relation, rng, "verbs");
      break;
    case Strategy::NounReplace:
      neg.subject = detail::draw_other(lex.replacement_nouns(), g.subject, rng, "nouns");
      if (!g.is_simple) {
        neg.object = detail::draw_other(lex.replacement_nouns(), *g.object, rng, "nouns");
      }
      break;
  }
  return gen_positive(neg);
}

inline SubCaptionPair make_sub_captions(const TokenSeq& caption, const Lexicon& lex, Rng& rng,
                                        std::size_t source_index = 0) {
  auto g = parse_caption(caption, lex);
  SubCaptionPair out;
  out.positive = gen_positive(g);
  out.strategy = pick_strategy(g, rng);
  out.negative = gen_negative(g, out.strategy, lex, rng);
  out.source_index = source_index;
  return out;
}

}  // namespace cleaner
