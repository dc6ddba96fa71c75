#include "vg3d/textsplit.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace vg3d {

const char* token_label_name(TokenLabel label) {
  switch (label) {
    case TokenLabel::MainObject: return "MainObject";
    case TokenLabel::Attribute: return "Attribute";
    case TokenLabel::Pronoun: return "Pronoun";
    case TokenLabel::AuxiliaryObject: return "AuxiliaryObject";
    case TokenLabel::Relationship: return "Relationship";
    case TokenLabel::Other: return "Other";
  }
  return "Other";
}

TokenLabel token_label_from_name(const std::string& name) {
  if (name == "MainObject") return TokenLabel::MainObject;
  if (name == "Attribute") return TokenLabel::Attribute;
  if (name == "Pronoun") return TokenLabel::Pronoun;
  if (name == "AuxiliaryObject") return TokenLabel::AuxiliaryObject;
  if (name == "Relationship") return TokenLabel::Relationship;
  if (name == "Other") return TokenLabel::Other;
  throw std::invalid_argument("unknown token label: " + name);
}

Lexicon default_lexicon() {
  Lexicon lex;
  lex.category_nouns = {"chair", "table",  "sofa",    "bed",   "desk",
                        "shelf", "cabinet", "monitor", "lamp",  "box",
                        "kitchen"};
  lex.attribute_words = {"red",  "green", "blue",   "yellow", "white", "black",
                         "dark", "brown", "wooden", "metal"};
  lex.relation_words = {"left", "right", "front", "behind", "near", "far", "in"};
  lex.pronouns = {"it", "that", "this"};
  return lex;
}

std::vector<std::string> tokenize(const std::string& utterance) {
  bool has_content = std::any_of(utterance.begin(), utterance.end(),
                                 [](unsigned char c) { return !std::isspace(c); });
  if (!has_content) throw std::invalid_argument("tokenize: empty utterance");
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : utterance) {
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      tokens.push_back(std::string(1, static_cast<char>(c)));
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

std::vector<TokenLabel> label_components(const std::vector<std::string>& tokens,
                                         const Lexicon& lexicon) {
  const std::size_t n = tokens.size();
  std::vector<TokenLabel> labels(n, TokenLabel::Other);

  bool in_relational_clause = false;
  bool main_found = false;
  std::size_t main_index = n;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& tok = tokens[i];
    if (lexicon.relation_words.count(tok)) {
      labels[i] = TokenLabel::Relationship;
      in_relational_clause = true;
    } else if (lexicon.pronouns.count(tok)) {
      labels[i] = TokenLabel::Pronoun;
    } else if (lexicon.category_nouns.count(tok)) {
      if (!in_relational_clause && !main_found) {
        labels[i] = TokenLabel::MainObject;
        main_found = true;
        main_index = i;
      } else {
        labels[i] = TokenLabel::AuxiliaryObject;
      }
    }
  }
  if (!main_found)
    throw std::invalid_argument("label_components: no main object noun found");

  // Adjectives take the role of the noun they precede: the run immediately
  // before the main object is Attribute, runs before auxiliary nouns belong
  // to the surrounding stream.
  for (std::size_t i = 0; i < n; ++i) {
    if (!lexicon.attribute_words.count(tokens[i])) continue;
    std::size_t j = i + 1;
    while (j < n && lexicon.attribute_words.count(tokens[j])) ++j;
    if (j < n && labels[j] == TokenLabel::MainObject) {
      labels[i] = TokenLabel::Attribute;
    } else if (j < n && labels[j] == TokenLabel::AuxiliaryObject) {
      labels[i] = TokenLabel::AuxiliaryObject;
    }
  }
  (void)main_index;
  return labels;
}

SplitResult partition_tokens(const std::vector<std::string>& tokens,
                             const std::vector<TokenLabel>& labels) {
  if (tokens.size() != labels.size())
    throw std::invalid_argument("partition_tokens: token/label length mismatch");
  SplitResult split;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int idx = static_cast<int>(i);
    switch (labels[i]) {
      case TokenLabel::MainObject:
      case TokenLabel::Attribute:
        split.target_indices.push_back(idx);
        break;
      case TokenLabel::AuxiliaryObject:
      case TokenLabel::Pronoun:
      case TokenLabel::Relationship:
        split.surrounding_indices.push_back(idx);
        break;
      case TokenLabel::Other:
        split.other_indices.push_back(idx);
        break;
    }
  }
  if (split.target_indices.empty())
    throw std::invalid_argument("partition_tokens: no main object tokens");
  return split;
}

}  // namespace vg3d
