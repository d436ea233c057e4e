#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wagparse/graph.hpp"

namespace wagparse {

/// Gold alignment between graph elements and sentence token positions.
/// Token lists are sorted and non-empty; an element without an entry is
/// unaligned.
struct Alignment {
  std::map<std::string, std::vector<int>> nodes;   // node id -> tokens
  std::map<std::size_t, std::vector<int>> edges;   // edge index -> tokens

  bool operator==(const Alignment&) const = default;
};

/// Throws Error(kInput) when an entry references a missing element, a token
/// outside [0, sentence_length), or an empty or unsorted token list.
void check_alignment(const AmrGraph& graph, const Alignment& alignment, std::size_t sentence_length);

nlohmann::json alignment_to_json(const Alignment& alignment);
Alignment alignment_from_json(const nlohmann::json& j);

enum class WagVariant { kFull, kContracted };

std::string to_string(WagVariant variant);
WagVariant parse_wag_variant(const std::string& text);

/// A node either sits on a sentence token (Aligned) or carries the label of
/// the graph element it came from (Virtual).
struct WagNode {
  std::vector<int> tokens;  // empty => Virtual; more than one only before splitting
  std::string label;        // concept or relation label of the source element

  bool aligned() const { return !tokens.empty(); }
  int token() const { return tokens.front(); }

  bool operator==(const WagNode&) const = default;
};

/// Word-Aligned Graph. Arcs keep the direction of the source graph
/// (parent -> child) because contraction needs it; message passing treats
/// them as undirected (see neighbours()).
struct Wag {
  std::vector<WagNode> nodes;
  std::vector<std::pair<int, int>> arcs;
  WagVariant variant = WagVariant::kFull;

  std::size_t virtual_count() const;
  std::size_t aligned_count() const;
  /// Undirected adjacency without self-loops, sorted and deduplicated.
  std::vector<std::vector<int>> neighbours() const;
  /// Symmetric closure of the arc set.
  std::vector<std::pair<int, int>> undirected_edges() const;
  bool connected() const;

  bool operator==(const Wag&) const = default;
};

/// Relabelled copy of the source graph: node i corresponds to graph node i,
/// edge j to graph edge j, each carrying its aligned tokens (possibly none).
struct WordGraph {
  struct Element {
    std::vector<int> tokens;
    std::string label;
  };
  struct Link {
    int source;
    int target;
  };
  std::vector<Element> nodes;
  std::vector<Element> edges;
  std::vector<Link> links;  // endpoints of each edge, parallel to `edges`
  int root = 0;
};

WordGraph relabel_with_words(const AmrGraph& graph, const Alignment& alignment);

/// Every edge becomes a node wired between its former endpoints.
Wag expand_edges(const WordGraph& words);

/// A node on k > 1 tokens becomes a parent on the first token with k - 1
/// children, one per remaining token. Nodes that end up on the same token are
/// merged so each token position hosts at most one node.
Wag split_multi_token(const Wag& wag);

/// Merges every Virtual node into its nearest Aligned ancestor (lowest index
/// on ties), falling back to the nearest Aligned descendant and then to the
/// nearest Aligned node in the undirected sense. Self-loops and duplicate
/// arcs are dropped. Throws Error(kStructural) when nothing is aligned.
Wag contract(const Wag& full);

/// relabel -> expand -> split -> (contract).
Wag build_wag(const AmrGraph& graph, const Alignment& alignment, WagVariant variant);

nlohmann::json wag_to_json(const Wag& wag, const std::vector<std::string>& sentence);

}  // namespace wagparse
