#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wagparse/corpus.hpp"

namespace wagparse {

/// A word (possibly multi-word, e.g. "new york") with the concept it evokes.
/// An empty concept falls back to the first word.
struct LexEntry {
  std::string words;
  std::string concept_name;
  /// Extra structure evoked by the word but left unaligned, e.g. "teacher" ->
  /// person :ARG0-of teach-01 keeps "teach-01" off the sentence.
  std::string unaligned_relation;
  std::string unaligned_concept;
};

/// One sentence shape. The sentence pattern is a list of items:
///   "$a:noun"      slot a filled from lexicon class "noun"
///   "$c:@clause"   slot c filled by a recursively generated clause template
///   "word"         literal word, unaligned
///   "word=x"       literal word aligned to node x (a slot or a constant)
///   "word=:k"      literal word aligned to edge k of `edges`
/// `nodes` declares constants as "x / concept"; `edges` are "x :rel y" over
/// slot and constant names; `root` names the top node.
struct Template {
  std::string name;
  std::string category = "sentence";  // "sentence" or "clause"
  double weight = 1.0;
  std::string root;
  std::vector<std::string> sentence;
  std::vector<std::string> nodes;
  std::vector<std::string> edges;
};

struct GrammarSpec {
  std::map<std::string, std::vector<LexEntry>> lexicon;
  std::vector<Template> templates;
  /// Probability that a slot of an adjective class gets a ":mod" adjective.
  double adjective_rate = 0.3;
  std::vector<std::string> adjective_classes;
  std::string adjective_lexicon = "adj";
  /// Recursion limit for "@clause" slots.
  int max_depth = 2;
  /// Enables lexicon entries with unaligned concepts.
  bool unaligned_concepts = true;
  std::size_t min_words = 3;
  std::size_t max_words = 30;
  std::size_t max_nodes = 64;
  /// Longest allowed linearization, so targets fit the model's positions.
  std::size_t max_linearized = 120;

  nlohmann::json to_json() const;
  static GrammarSpec from_json(const nlohmann::json& j);
  static GrammarSpec load(const std::filesystem::path& path);
  /// The built-in grammar (identical to data/grammar.json).
  static GrammarSpec builtin();
};

/// Deterministic given (spec, n, seed). Every record passes validate(), has
/// at least one unaligned relation, and lies within the word limits.
std::vector<CorpusRecord> generate(const GrammarSpec& spec, std::size_t n, std::uint64_t seed);

}  // namespace wagparse
