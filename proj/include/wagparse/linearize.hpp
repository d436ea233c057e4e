#pragma once

#include <string>
#include <vector>

#include "wagparse/graph.hpp"

namespace wagparse {

/// Parenthesized depth-first token rendering of a graph, e.g.
/// "( <R0> tell-01 :ARG0 ( <R1> you ) :ARG2 ( <R2> i ) :ARG1 ( ... <R1> ... ) )".
struct LinearizedGraph {
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  std::string to_string() const;
  static LinearizedGraph from_string(const std::string& text);

  bool operator==(const LinearizedGraph&) const = default;
};

/// Deterministic DFS linearization. Children are visited in
/// (relation, target id) order; the first visit of a node opens
/// "( <Rk> concept", later visits emit the bare "<Rk>".
/// Throws Error(kStructural) when the graph violates any invariant.
LinearizedGraph linearize(const AmrGraph& graph);

struct RepairReport {
  std::vector<std::string> actions;

  bool clean() const { return actions.empty(); }
};

struct DelinearizeResult {
  AmrGraph graph;
  RepairReport report;
};

/// Best-effort inverse of linearize. Never throws: unbalanced parentheses are
/// closed, unknown tokens and dangling relations dropped, cycle-closing and
/// unresolved references removed, unreachable nodes pruned. Returns the empty
/// graph when nothing usable is left.
DelinearizeResult delinearize(const LinearizedGraph& tokens);

}  // namespace wagparse
