#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wagparse/graph.hpp"

namespace wagparse {

/// Triples of one graph with variables numbered by node order. Roles are
/// interned per set. The root contributes the attribute (root, TOP, root concept)
/// as the reference scorer does.
struct TripleSet {
  std::vector<std::string> variables;
  std::vector<std::string> concepts;  // instance triple per variable
  struct Relation {
    int source;
    std::string role;
    int target;
  };
  struct Attribute {
    int variable;
    std::string role;
    std::string value;
  };
  std::vector<Relation> relations;
  std::vector<Attribute> attributes;

  std::size_t size() const { return concepts.size() + relations.size() + attributes.size(); }
};

inline constexpr const char* kUnlabeledRole = ":rel";

/// With `unlabeled`, every relation role becomes kUnlabeledRole.
TripleSet to_triples(const AmrGraph& graph, bool unlabeled = false);

struct SmatchScore {
  std::size_t matched = 0;
  std::size_t pred_total = 0;
  std::size_t gold_total = 0;
  /// Gold variable per predicted variable, -1 when unmapped.
  std::vector<int> mapping;

  double precision() const;
  double recall() const;
  /// Harmonic mean; two empty graphs score 1.
  double f1() const;
  SmatchScore& operator+=(const SmatchScore& other);
};

struct SmatchOptions {
  int restarts = 10;  // random starts on top of the concept-matching start
  std::uint64_t seed = 1;
};

inline constexpr std::size_t kExactMaxVariables = 6;

/// Exhaustive search over injective partial maps. Throws Error(kInput) when
/// either graph has more than kExactMaxVariables variables.
SmatchScore score_exact(const AmrGraph& pred, const AmrGraph& gold, bool unlabeled = false);

/// Hill climbing with reassign and swap moves from a concept-matching start
/// plus `restarts` random starts; best result wins.
SmatchScore score(const AmrGraph& pred, const AmrGraph& gold, const SmatchOptions& options = {});
SmatchScore score_unlabeled(const AmrGraph& pred, const AmrGraph& gold, const SmatchOptions& options = {});

/// Matched count of a fixed mapping (exposed for tests).
std::size_t matched_triples(const TripleSet& pred, const TripleSet& gold, const std::vector<int>& mapping);

struct ScoredPair {
  std::size_t words = 0;
  SmatchScore labeled;
  SmatchScore unlabeled;
};

struct SmatchBucket {
  std::size_t max_words = 0;
  std::size_t n = 0;
  SmatchScore score;
};

/// Stable sort by word count, consecutive chunks of `bucket_size` pairs, each
/// scored from summed triple counts.
std::vector<SmatchBucket> bucket_report(const std::vector<ScoredPair>& pairs, std::size_t bucket_size);

struct SmatchReport {
  SmatchScore corpus;
  SmatchScore unlabeled;
  std::vector<SmatchBucket> buckets;

  /// {corpus_f1, precision, recall, unlabeled_f1, buckets:[{max_words, f1, n}]}
  nlohmann::json to_json() const;
};

/// Scores pair i with seed options.seed + i, so every pair is independent.
SmatchReport evaluate_graphs(const std::vector<AmrGraph>& predictions, const std::vector<AmrGraph>& golds,
                             const std::vector<std::size_t>& word_counts, std::size_t bucket_size,
                             const SmatchOptions& options = {});

}  // namespace wagparse
