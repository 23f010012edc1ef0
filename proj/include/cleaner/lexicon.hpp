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
#include <cctype>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cleaner/error.hpp"

namespace cleaner {

using Token = std::string;
using TokenSeq = std::vector<Token>;

inline constexpr std::array<std::string_view, 3> kDeterminers = {"a", "an", "the"};
// "a picture of", "a photo of"
inline constexpr std::array<std::string_view, 2> kFillerHeads = {"picture", "photo"};
inline constexpr std::string_view kFillerOf = "of";

inline bool is_determiner(std::string_view t) {
  return std::find(kDeterminers.begin(), kDeterminers.end(), t) != kDeterminers.end();
}

inline bool is_filler_head(std::string_view t) {
  return std::find(kFillerHeads.begin(), kFillerHeads.end(), t) != kFillerHeads.end();
}

inline TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join(const TokenSeq& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

enum class PartOfSpeech { Noun, Adjective, Verb };

class Lexicon {
 public:
  Lexicon() = default;

  // Replacement lists default to the corresponding part-of-speech list.
  Lexicon(std::vector<Token> nouns, std::vector<Token> adjectives, std::vector<Token> verbs)
      : Lexicon(nouns, adjectives, verbs, nouns, adjectives, verbs) {}

  Lexicon(std::vector<Token> nouns, std::vector<Token> adjectives, std::vector<Token> verbs,
          std::vector<Token> replacement_nouns, std::vector<Token> replacement_adjectives,
          std::vector<Token> replacement_verbs)
      : nouns_(std::move(nouns)),
        adjectives_(std::move(adjectives)),
        verbs_(std::move(verbs)),
        replacement_nouns_(std::move(replacement_nouns)),
        replacement_adjectives_(std::move(replacement_adjectives)),
        replacement_verbs_(std::move(replacement_verbs)) {
    index();
  }

  const std::vector<Token>& nouns() const noexcept { return nouns_; }
  const std::vector<Token>& adjectives() const noexcept { return adjectives_; }
  const std::vector<Token>& verbs() const noexcept { return verbs_; }
  const std::vector<Token>& replacement_nouns() const noexcept { return replacement_nouns_; }
  const std::vector<Token>& replacement_adjectives() const noexcept {
    return replacement_adjectives_;
  }
  const std::vector<Token>& replacement_verbs() const noexcept { return replacement_verbs_; }

  const std::vector<Token>& replacements(PartOfSpeech pos) const noexcept {
    switch (pos) {
      case PartOfSpeech::Noun: return replacement_nouns_;
      case PartOfSpeech::Adjective: return replacement_adjectives_;
      case PartOfSpeech::Verb: break;
    }
    return replacement_verbs_;
  }

  bool is_noun(std::string_view t) const { return noun_set_.count(std::string(t)) > 0; }
  bool is_adjective(std::string_view t) const { return adj_set_.count(std::string(t)) > 0; }
  bool is_verb(std::string_view t) const { return verb_set_.count(std::string(t)) > 0; }

  // Function words first, then nouns, adjectives, verbs and any
  // replacement-only tokens, each in file order.
  std::vector<Token> vocabulary() const {
    std::vector<Token> out;
    std::unordered_set<Token> seen;
    auto add = [&](std::string_view t) {
      if (seen.emplace(t).second) out.emplace_back(t);
    };
    for (auto t : kDeterminers) add(t);
    for (auto t : kFillerHeads) add(t);
    add(kFillerOf);
    for (const auto* list : {&nouns_, &adjectives_, &verbs_, &replacement_nouns_,
                             &replacement_adjectives_, &replacement_verbs_}) {
      for (const auto& t : *list) add(t);
    }
    return out;
  }

  static Lexicon parse(std::istream& in, const std::string& origin = "<lexicon>") {
    std::unordered_map<std::string, std::vector<Token>> sections;
    static const std::array<std::string_view, 6> kSections = {
        "nouns", "adjectives", "verbs", "replacement_nouns", "replacement_adjectives",
        "replacement_verbs"};
    std::vector<Token>* current = nullptr;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto toks = tokenize(line);
      if (toks.empty()) continue;
      auto where = origin + ":" + std::to_string(lineno);
      if (toks.size() != 1) throw LexiconError(where + ": expected one token per line");
      const auto& tok = toks.front();
      if (tok.front() == '[') {
        if (tok.back() != ']') throw LexiconError(where + ": malformed section header");
        auto name = tok.substr(1, tok.size() - 2);
        if (std::find(kSections.begin(), kSections.end(), name) == kSections.end()) {
          throw LexiconError(where + ": unknown section [" + name + "]");
        }
        current = &sections[name];
        continue;
      }
      if (!current) throw LexiconError(where + ": token before any section header");
      current->push_back(tok);
    }
    auto take = [&](const char* name) { return sections[name]; };
    auto nouns = take("nouns");
    auto adjectives = take("adjectives");
    auto verbs = take("verbs");
    auto rn = sections.count("replacement_nouns") ? take("replacement_nouns") : nouns;
    auto ra = sections.count("replacement_adjectives") ? take("replacement_adjectives") : adjectives;
    auto rv = sections.count("replacement_verbs") ? take("replacement_verbs") : verbs;
    if (nouns.empty()) throw LexiconError(origin + ": [nouns] section is empty or missing");
    return Lexicon(std::move(nouns), std::move(adjectives), std::move(verbs), std::move(rn),
                   std::move(ra), std::move(rv));
  }

  static Lexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open lexicon");
    return parse(in, path);
  }

 private:
  void index() {
    std::unordered_map<Token, PartOfSpeech> owner;
    auto claim = [&](const std::vector<Token>& list, PartOfSpeech pos,
                     std::unordered_set<Token>& set) {
      for (const auto& t : list) {
        if (is_determiner(t) || is_filler_head(t) || t == kFillerOf) {
          throw LexiconError("token '" + t + "' is reserved as a function word");
        }
        auto [it, fresh] = owner.emplace(t, pos);
        if (!fresh && it->second != pos) {
          throw LexiconError("token '" + t + "' appears under two parts of speech");
        }
        set.insert(t);
      }
    };
    claim(nouns_, PartOfSpeech::Noun, noun_set_);
    claim(adjectives_, PartOfSpeech::Adjective, adj_set_);
    claim(verbs_, PartOfSpeech::Verb, verb_set_);
    std::unordered_set<Token> scratch;
    claim(replacement_nouns_, PartOfSpeech::Noun, scratch);
    claim(replacement_adjectives_, PartOfSpeech::Adjective, scratch);
    claim(replacement_verbs_, PartOfSpeech::Verb, scratch);
  }

  std::vector<Token> nouns_, adjectives_, verbs_;
  std::vector<Token> replacement_nouns_, replacement_adjectives_, replacement_verbs_;
  std::unordered_set<Token> noun_set_, adj_set_, verb_set_;
};

// Dense token ids for the bag-of-tokens text encoder.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!ids_.emplace(tokens_[i], i).second) {
        throw VocabError("duplicate vocabulary token '" + tokens_[i] + "'");
      }
    }
  }
  explicit Vocabulary(const Lexicon& lex) : Vocabulary(lex.vocabulary()) {}

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<Token>& tokens() const noexcept { return tokens_; }
  const Token& token(std::size_t id) const { return tokens_.at(id); }
  bool contains(std::string_view t) const { return ids_.count(std::string(t)) > 0; }

  std::size_t id(std::string_view t) const {
    auto it = ids_.find(std::string(t));
    if (it == ids_.end()) throw VocabError("unknown token '" + std::string(t) + "'");
    return it->second;
  }

 private:
  std::vector<Token> tokens_;
  std::unordered_map<Token, std::size_t> ids_;
};

}  // namespace cleaner
