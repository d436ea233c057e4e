#include "wagparse/linearize.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "wagparse/errors.hpp"
#include "wagparse/vocab.hpp"

namespace wagparse {

std::string LinearizedGraph::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

LinearizedGraph LinearizedGraph::from_string(const std::string& text) {
  LinearizedGraph g;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) g.tokens.push_back(tok);
  return g;
}

LinearizedGraph linearize(const AmrGraph& graph) {
  const auto violations = validate(graph);
  if (!violations.empty()) {
    const bool cyclic = std::any_of(violations.begin(), violations.end(),
                                    [](const Violation& v) { return v.kind == ViolationKind::kCycle; });
    fail(ErrorCategory::kStructural, cyclic ? "cannot linearize a cyclic graph"
                                            : "cannot linearize invalid graph: " + violations.front().detail);
  }
  require(graph.nodes.size() <= static_cast<std::size_t>(Vocabulary::kMaxVariables), ErrorCategory::kStructural,
          "graph exceeds the variable token budget");

  std::unordered_map<std::string, const AmrNode*> nodes;
  for (const auto& n : graph.nodes) nodes[n.id] = &n;
  std::unordered_map<std::string, std::vector<const AmrEdge*>> children;
  for (const auto& e : graph.edges) children[e.source].push_back(&e);
  for (auto& [_, list] : children) {
    std::stable_sort(list.begin(), list.end(), [](const AmrEdge* a, const AmrEdge* b) {
      return std::tie(a->relation, a->target) < std::tie(b->relation, b->target);
    });
  }

  LinearizedGraph out;
  std::unordered_map<std::string, int> variable;
  std::function<void(const std::string&)> visit = [&](const std::string& id) {
    const int k = static_cast<int>(variable.size());
    variable.emplace(id, k);
    out.tokens.insert(out.tokens.end(), {"(", Vocabulary::variable_token(k), nodes.at(id)->concept_name});
    for (const auto* e : children[id]) {
      out.tokens.push_back(e->relation);
      auto it = variable.find(e->target);
      if (it != variable.end()) {
        out.tokens.push_back(Vocabulary::variable_token(it->second));
      } else {
        visit(e->target);
      }
    }
    out.tokens.push_back(")");
  };
  visit(graph.root);
  return out;
}

namespace {

enum class TokenKind { kOpen, kClose, kVariable, kRelation, kConcept, kJunk };

TokenKind classify(const std::string& token) {
  if (token == "(") return TokenKind::kOpen;
  if (token == ")") return TokenKind::kClose;
  if (Vocabulary::parse_variable(token)) return TokenKind::kVariable;
  if (token.size() > 1 && token.front() == ':') return TokenKind::kRelation;
  if (token.empty() || token.front() == '<') return TokenKind::kJunk;  // <s>, </s>, <pad>, ...
  return TokenKind::kConcept;
}

class RepairingParser {
 public:
  explicit RepairingParser(const std::vector<std::string>& tokens) : tokens_(tokens) {}

  DelinearizeResult run() {
    DelinearizeResult result;
    while (pos_ < tokens_.size() && classify(tokens_[pos_]) != TokenKind::kOpen) {
      note("dropped leading token '" + tokens_[pos_] + "'");
      ++pos_;
    }
    if (pos_ == tokens_.size()) {
      note("no node found");
      result.report = std::move(report_);
      return result;
    }
    const auto root = parse_node(0);
    if (pos_ < tokens_.size()) {
      note("ignored " + std::to_string(tokens_.size() - pos_) + " trailing tokens");
    }
    result.graph = assemble(root);
    result.report = std::move(report_);
    return result;
  }

 private:
  struct PendingEdge {
    std::string source;
    std::string relation;
    std::string target_id;   // set for nested nodes
    int target_var = -1;     // set for bare references
  };

  static constexpr int kMaxDepth = 256;

  void note(std::string action) { report_.actions.push_back(std::move(action)); }

  std::string fresh_id() { return "x" + std::to_string(fresh_++); }

  bool at_end() const { return pos_ >= tokens_.size(); }
  TokenKind peek() const { return classify(tokens_[pos_]); }

  // Precondition: current token is "(" (or a bare concept being promoted to a node).
  std::string parse_node(int depth, bool bare_concept = false) {
    std::string id;
    if (!bare_concept) ++pos_;  // "("

    if (!at_end() && peek() == TokenKind::kVariable) {
      const int k = *Vocabulary::parse_variable(tokens_[pos_++]);
      if (defined_.count(k)) {
        id = fresh_id();
        note("variable <R" + std::to_string(k) + "> redefined; treated as a new node");
      } else {
        id = "v" + std::to_string(k);
        defined_[k] = id;
      }
    } else {
      id = fresh_id();
      if (!bare_concept) note("node without variable");
    }

    if (!at_end() && peek() == TokenKind::kConcept) {
      concepts_[id] = tokens_[pos_++];
    } else {
      note("node " + id + " has no concept");
    }
    order_.push_back(id);
    if (bare_concept) return id;

    while (!at_end()) {
      switch (peek()) {
        case TokenKind::kClose:
          ++pos_;
          return id;
        case TokenKind::kRelation: {
          const auto relation = tokens_[pos_++];
          if (at_end()) {
            note("dangling relation " + relation + " at end");
            break;
          }
          switch (peek()) {
            case TokenKind::kOpen:
              if (depth + 1 >= kMaxDepth) {
                note("nesting too deep; truncated");
                pos_ = tokens_.size();
                break;
              }
              edges_.push_back({id, relation, parse_node(depth + 1), -1});
              break;
            case TokenKind::kVariable:
              edges_.push_back({id, relation, "", *Vocabulary::parse_variable(tokens_[pos_++])});
              break;
            case TokenKind::kConcept:
              note("bare concept after " + relation + " promoted to node");
              edges_.push_back({id, relation, parse_node(depth + 1, true), -1});
              break;
            default:
              note("dangling relation " + relation + " pruned");
              break;
          }
          break;
        }
        case TokenKind::kOpen: {
          note("subtree without relation discarded");
          const auto orphan = parse_node(depth + 1);
          orphans_.insert(orphan);
          break;
        }
        default:
          note("dropped token '" + tokens_[pos_] + "'");
          ++pos_;
          break;
      }
    }
    note("closed unbalanced parenthesis of " + id);
    return id;
  }

  AmrGraph assemble(const std::string& root) {
    AmrGraph g;
    if (!concepts_.count(root)) {
      note("root has no concept; empty graph");
      return g;
    }
    std::vector<AmrEdge> edges;
    std::set<std::tuple<std::string, std::string, std::string>> seen;
    std::unordered_map<std::string, std::vector<std::string>> adjacency;

    auto reaches = [&](const std::string& from, const std::string& to) {
      std::vector<std::string> stack{from};
      std::set<std::string> visited{from};
      while (!stack.empty()) {
        auto v = stack.back();
        stack.pop_back();
        if (v == to) return true;
        for (const auto& c : adjacency[v]) {
          if (visited.insert(c).second) stack.push_back(c);
        }
      }
      return false;
    };

    for (const auto& pe : edges_) {
      std::string target = pe.target_id;
      if (pe.target_var >= 0) {
        auto it = defined_.find(pe.target_var);
        if (it == defined_.end()) {
          note("reference to undefined <R" + std::to_string(pe.target_var) + "> dropped");
          continue;
        }
        target = it->second;
      }
      if (!concepts_.count(pe.source) || !concepts_.count(target)) {
        note("edge touching a node without concept dropped");
        continue;
      }
      if (!seen.insert({pe.source, pe.relation, target}).second) {
        note("duplicate edge dropped");
        continue;
      }
      if (reaches(target, pe.source)) {
        note("cycle-closing edge " + pe.relation + " dropped");
        continue;
      }
      adjacency[pe.source].push_back(target);
      edges.push_back({pe.source, pe.relation, target});
    }

    std::set<std::string> reachable{root};
    std::vector<std::string> stack{root};
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (const auto& c : adjacency[v]) {
        if (reachable.insert(c).second) stack.push_back(c);
      }
    }

    for (const auto& id : order_) {
      if (!reachable.count(id)) {
        if (concepts_.count(id) && !orphans_.count(id)) note("unreachable node " + id + " pruned");
        continue;
      }
      g.nodes.push_back({id, concepts_.at(id)});
    }
    for (auto& e : edges) {
      if (reachable.count(e.source)) g.edges.push_back(std::move(e));
    }
    g.root = root;
    return g;
  }

  const std::vector<std::string>& tokens_;
  std::size_t pos_ = 0;
  int fresh_ = 0;
  std::map<int, std::string> defined_;
  std::unordered_map<std::string, std::string> concepts_;
  std::vector<std::string> order_;
  std::vector<PendingEdge> edges_;
  std::set<std::string> orphans_;
  RepairReport report_;
};

}  // namespace

DelinearizeResult delinearize(const LinearizedGraph& tokens) {
  return RepairingParser(tokens.tokens).run();
}

}  // namespace wagparse
