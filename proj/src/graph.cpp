#include "wagparse/graph.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "wagparse/errors.hpp"

namespace wagparse {

std::string_view category_name(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kInput: return "input";
    case ErrorCategory::kStructural: return "structural";
    case ErrorCategory::kNumeric: return "numeric";
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kIo: return "io";
  }
  return "unknown";
}

std::optional<std::size_t> AmrGraph::node_index(const std::string& id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return i;
  }
  return std::nullopt;
}

const AmrNode* AmrGraph::find_node(const std::string& id) const {
  auto idx = node_index(id);
  return idx ? &nodes[*idx] : nullptr;
}

std::vector<Violation> validate(const AmrGraph& graph) {
  std::vector<Violation> out;
  if (graph.nodes.empty()) {
    out.push_back({ViolationKind::kEmpty, "graph has no nodes"});
    return out;
  }

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& node = graph.nodes[i];
    if (!index.emplace(node.id, i).second) {
      out.push_back({ViolationKind::kDuplicateId, node.id});
    }
    if (node.concept_name.empty()) {
      out.push_back({ViolationKind::kEmptyConcept, node.id});
    }
  }

  auto root_it = index.find(graph.root);
  if (root_it == index.end()) {
    out.push_back({ViolationKind::kMissingRoot, graph.root});
  }

  std::vector<std::vector<std::size_t>> children(graph.nodes.size());
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto& edge = graph.edges[e];
    if (edge.relation.size() < 2 || edge.relation.front() != ':') {
      out.push_back({ViolationKind::kBadRelation, edge.relation});
    }
    auto s = index.find(edge.source);
    auto t = index.find(edge.target);
    if (s == index.end() || t == index.end()) {
      out.push_back({ViolationKind::kDanglingEdge,
                     edge.source + " " + edge.relation + " " + edge.target});
      continue;
    }
    children[s->second].push_back(t->second);
  }

  // Cycle detection by colouring DFS.
  std::vector<int> colour(graph.nodes.size(), 0);
  bool cyclic = false;
  std::function<void(std::size_t)> visit = [&](std::size_t v) {
    colour[v] = 1;
    for (auto c : children[v]) {
      if (colour[c] == 1) {
        cyclic = true;
      } else if (colour[c] == 0) {
        visit(c);
      }
    }
    colour[v] = 2;
  };
  for (std::size_t v = 0; v < graph.nodes.size(); ++v) {
    if (colour[v] == 0) visit(v);
  }
  if (cyclic) out.push_back({ViolationKind::kCycle, "directed cycle present"});

  if (root_it != index.end()) {
    std::vector<bool> seen(graph.nodes.size(), false);
    std::vector<std::size_t> stack{root_it->second};
    seen[root_it->second] = true;
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (auto c : children[v]) {
        if (!seen[c]) {
          seen[c] = true;
          stack.push_back(c);
        }
      }
    }
    for (std::size_t v = 0; v < graph.nodes.size(); ++v) {
      if (!seen[v]) out.push_back({ViolationKind::kUnreachable, graph.nodes[v].id});
    }
  }
  return out;
}

bool is_valid(const AmrGraph& graph) { return validate(graph).empty(); }

namespace {

struct IndexedGraph {
  std::vector<std::string> concept_name;
  // (relation, target) pairs per node, sorted
  std::vector<std::vector<std::pair<std::string, std::size_t>>> out;
  std::vector<std::size_t> in_degree;
  std::size_t root = 0;
};

IndexedGraph index_graph(const AmrGraph& g) {
  IndexedGraph ig;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    index[g.nodes[i].id] = i;
    ig.concept_name.push_back(g.nodes[i].concept_name);
  }
  ig.out.resize(g.nodes.size());
  ig.in_degree.assign(g.nodes.size(), 0);
  for (const auto& e : g.edges) {
    auto s = index.at(e.source);
    auto t = index.at(e.target);
    ig.out[s].emplace_back(e.relation, t);
    ++ig.in_degree[t];
  }
  for (auto& o : ig.out) std::sort(o.begin(), o.end());
  ig.root = g.root.empty() ? 0 : index.at(g.root);
  return ig;
}

std::string signature(const IndexedGraph& g, std::size_t v) {
  std::string sig = g.concept_name[v] + "|" + std::to_string(g.in_degree[v]) + "|";
  for (const auto& [rel, _] : g.out[v]) sig += rel + ",";
  return sig;
}

}  // namespace

bool isomorphic(const AmrGraph& a, const AmrGraph& b) {
  if (a.nodes.size() != b.nodes.size() || a.edges.size() != b.edges.size()) return false;
  if (a.empty()) return b.empty();
  const auto ga = index_graph(a);
  const auto gb = index_graph(b);
  const std::size_t n = ga.concept_name.size();

  std::vector<std::string> sig_a(n), sig_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    sig_a[i] = signature(ga, i);
    sig_b[i] = signature(gb, i);
  }
  {
    auto sa = sig_a, sb = sig_b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    if (sa != sb) return false;
  }

  std::multiset<std::tuple<std::size_t, std::string, std::size_t>> edges_b;
  for (std::size_t v = 0; v < n; ++v) {
    for (const auto& [rel, t] : gb.out[v]) edges_b.emplace(v, rel, t);
  }

  std::vector<long> map(n, -1);
  std::vector<bool> used(n, false);

  // Assign a-nodes in BFS order from the root so constraints bite early.
  std::vector<std::size_t> order;
  {
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> queue{ga.root};
    seen[ga.root] = true;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      order.push_back(queue[q]);
      for (const auto& [_, t] : ga.out[queue[q]]) {
        if (!seen[t]) {
          seen[t] = true;
          queue.push_back(t);
        }
      }
    }
    for (std::size_t v = 0; v < n; ++v) {
      if (!seen[v]) order.push_back(v);
    }
  }

  auto consistent = [&](std::size_t va) {
    // Every edge between va and already-mapped nodes must exist in b.
    const auto vb = static_cast<std::size_t>(map[va]);
    for (const auto& [rel, t] : ga.out[va]) {
      if (map[t] >= 0 && !edges_b.count({vb, rel, static_cast<std::size_t>(map[t])})) return false;
    }
    for (std::size_t u = 0; u < n; ++u) {
      if (map[u] < 0 || u == va) continue;
      for (const auto& [rel, t] : ga.out[u]) {
        if (t == va && !edges_b.count({static_cast<std::size_t>(map[u]), rel, vb})) return false;
      }
    }
    return true;
  };

  std::function<bool(std::size_t)> search = [&](std::size_t k) -> bool {
    if (k == order.size()) return true;
    const auto va = order[k];
    for (std::size_t vb = 0; vb < n; ++vb) {
      if (used[vb] || sig_a[va] != sig_b[vb]) continue;
      if (va == ga.root && vb != gb.root) continue;
      map[va] = static_cast<long>(vb);
      used[vb] = true;
      if (consistent(va) && search(k + 1)) return true;
      map[va] = -1;
      used[vb] = false;
    }
    return false;
  };
  return search(0);
}

std::string pretty_print(const AmrGraph& graph) {
  if (graph.empty()) return "(empty)\n";
  std::map<std::string, std::vector<const AmrEdge*>> children;
  for (const auto& e : graph.edges) children[e.source].push_back(&e);
  for (auto& [_, list] : children) {
    std::sort(list.begin(), list.end(), [](const AmrEdge* x, const AmrEdge* y) {
      return std::tie(x->relation, x->target) < std::tie(y->relation, y->target);
    });
  }
  std::ostringstream os;
  std::set<std::string> printed;
  std::function<void(const std::string&, int)> emit = [&](const std::string& id, int depth) {
    const auto* node = graph.find_node(id);
    os << "(" << id << " / " << (node ? node->concept_name : "?");
    printed.insert(id);
    for (const auto* e : children[id]) {
      os << "\n" << std::string(static_cast<std::size_t>(depth + 1) * 4, ' ') << e->relation << " ";
      if (printed.count(e->target)) {
        os << e->target;
      } else {
        emit(e->target, depth + 1);
      }
    }
    os << ")";
  };
  emit(graph.root, 0);
  os << "\n";
  return os.str();
}

}  // namespace wagparse
