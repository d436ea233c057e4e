#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace wagparse {

struct AmrNode {
  std::string id;
  std::string concept_name;

  bool operator==(const AmrNode&) const = default;
};

struct AmrEdge {
  std::string source;
  std::string relation;  // always starts with ':'
  std::string target;

  bool operator==(const AmrEdge&) const = default;
};

/// Rooted, directed, acyclic concept graph. An instance with no nodes and an
/// empty root is the designated empty graph returned by failed decodes.
struct AmrGraph {
  std::vector<AmrNode> nodes;
  std::vector<AmrEdge> edges;
  std::string root;

  bool empty() const { return nodes.empty(); }
  std::optional<std::size_t> node_index(const std::string& id) const;
  const AmrNode* find_node(const std::string& id) const;

  bool operator==(const AmrGraph&) const = default;
};

enum class ViolationKind {
  kEmpty,
  kMissingRoot,
  kDuplicateId,
  kEmptyConcept,
  kBadRelation,
  kDanglingEdge,
  kCycle,
  kUnreachable,
};

struct Violation {
  ViolationKind kind;
  std::string detail;
};

/// Returns every invariant violation; an empty result means the graph is valid.
std::vector<Violation> validate(const AmrGraph& graph);

bool is_valid(const AmrGraph& graph);

/// Label-preserving isomorphism test. Exponential in the worst case but fine
/// for the graph sizes used here (it prunes by concept and degree).
bool isomorphic(const AmrGraph& a, const AmrGraph& b);

/// Multi-line indented rendering for humans.
std::string pretty_print(const AmrGraph& graph);

}  // namespace wagparse
