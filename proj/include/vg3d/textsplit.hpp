#pragma once

#include <set>
#include <string>
#include <vector>

#include "vg3d/tensor.hpp"

namespace vg3d {

enum class TokenLabel { MainObject, Attribute, Pronoun, AuxiliaryObject, Relationship, Other };

const char* token_label_name(TokenLabel label);
TokenLabel token_label_from_name(const std::string& name);

// Word lists the labeler consults. The grounding vocabulary is small and
// closed, so plain sets are enough.
struct Lexicon {
  std::set<std::string> category_nouns;
  std::set<std::string> attribute_words;  // colors / materials
  std::set<std::string> relation_words;   // content words of spatial relations
  std::set<std::string> pronouns;
};

Lexicon default_lexicon();

struct TokenSet {
  std::vector<std::string> tokens;
  std::vector<TokenLabel> labels;
  Tensor features;  // [L,D], filled by the text encoder
};

struct SplitResult {
  std::vector<int> target_indices;       // MainObject + Attribute
  std::vector<int> surrounding_indices;  // AuxiliaryObject + Pronoun + Relationship
  std::vector<int> other_indices;
};

// Lowercased whitespace split with punctuation broken out into its own
// tokens.
std::vector<std::string> tokenize(const std::string& utterance);

// Rule-based five-component labeling. The first category noun before any
// relation word is the main object; category nouns inside a relational
// clause are auxiliary; adjectives attach to the nearest following noun.
std::vector<TokenLabel> label_components(const std::vector<std::string>& tokens,
                                         const Lexicon& lexicon);

SplitResult partition_tokens(const std::vector<std::string>& tokens,
                             const std::vector<TokenLabel>& labels);

}  // namespace vg3d
