#include "wagparse/wag.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <unordered_map>

#include "wagparse/errors.hpp"

namespace wagparse {

void check_alignment(const AmrGraph& graph, const Alignment& alignment, std::size_t sentence_length) {
  auto check_tokens = [&](const std::vector<int>& tokens, const std::string& what) {
    require(!tokens.empty(), ErrorCategory::kInput, "empty token list for " + what);
    require(std::is_sorted(tokens.begin(), tokens.end()) &&
                std::adjacent_find(tokens.begin(), tokens.end()) == tokens.end(),
            ErrorCategory::kInput, "token list not strictly increasing for " + what);
    for (int t : tokens) {
      require(t >= 0 && static_cast<std::size_t>(t) < sentence_length, ErrorCategory::kInput,
              "token " + std::to_string(t) + " out of sentence bounds for " + what);
    }
  };
  for (const auto& [id, tokens] : alignment.nodes) {
    require(graph.find_node(id) != nullptr, ErrorCategory::kInput, "alignment references missing node " + id);
    check_tokens(tokens, "node " + id);
  }
  for (const auto& [index, tokens] : alignment.edges) {
    require(index < graph.edges.size(), ErrorCategory::kInput,
            "alignment references missing edge " + std::to_string(index));
    check_tokens(tokens, "edge " + std::to_string(index));
  }
}

nlohmann::json alignment_to_json(const Alignment& alignment) {
  auto out = nlohmann::json::array();
  for (const auto& [id, tokens] : alignment.nodes) out.push_back({{"node", id}, {"tokens", tokens}});
  for (const auto& [index, tokens] : alignment.edges) out.push_back({{"edge", index}, {"tokens", tokens}});
  return out;
}

Alignment alignment_from_json(const nlohmann::json& j) {
  require(j.is_array(), ErrorCategory::kInput, "alignment must be a list");
  Alignment a;
  for (const auto& entry : j) {
    auto tokens = entry.at("tokens").get<std::vector<int>>();
    if (entry.contains("node")) {
      require(a.nodes.emplace(entry.at("node").get<std::string>(), std::move(tokens)).second,
              ErrorCategory::kInput, "duplicate node alignment");
    } else if (entry.contains("edge")) {
      require(a.edges.emplace(entry.at("edge").get<std::size_t>(), std::move(tokens)).second,
              ErrorCategory::kInput, "duplicate edge alignment");
    } else {
      fail(ErrorCategory::kInput, "alignment entry needs \"node\" or \"edge\"");
    }
  }
  return a;
}

std::string to_string(WagVariant variant) { return variant == WagVariant::kFull ? "full" : "contracted"; }

WagVariant parse_wag_variant(const std::string& text) {
  if (text == "full") return WagVariant::kFull;
  if (text == "contracted") return WagVariant::kContracted;
  fail(ErrorCategory::kInput, "unknown WAG variant '" + text + "'");
}

std::size_t Wag::virtual_count() const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const WagNode& n) { return !n.aligned(); }));
}

std::size_t Wag::aligned_count() const { return nodes.size() - virtual_count(); }

std::vector<std::vector<int>> Wag::neighbours() const {
  std::vector<std::vector<int>> adj(nodes.size());
  for (const auto& [a, b] : arcs) {
    if (a == b) continue;
    adj[static_cast<std::size_t>(a)].push_back(b);
    adj[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

std::vector<std::pair<int, int>> Wag::undirected_edges() const {
  std::vector<std::pair<int, int>> out;
  const auto adj = neighbours();
  for (std::size_t v = 0; v < adj.size(); ++v) {
    for (int u : adj[v]) out.emplace_back(static_cast<int>(v), u);
  }
  return out;
}

bool Wag::connected() const {
  if (nodes.empty()) return true;
  const auto adj = neighbours();
  std::vector<bool> seen(nodes.size(), false);
  std::vector<int> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int u : adj[static_cast<std::size_t>(v)]) {
      if (!seen[static_cast<std::size_t>(u)]) {
        seen[static_cast<std::size_t>(u)] = true;
        ++count;
        stack.push_back(u);
      }
    }
  }
  return count == nodes.size();
}

WordGraph relabel_with_words(const AmrGraph& graph, const Alignment& alignment) {
  std::unordered_map<std::string, int> index;
  WordGraph words;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& node = graph.nodes[i];
    index[node.id] = static_cast<int>(i);
    WordGraph::Element element{{}, node.concept_name};
    if (auto it = alignment.nodes.find(node.id); it != alignment.nodes.end()) element.tokens = it->second;
    words.nodes.push_back(std::move(element));
  }
  for (const auto& [id, _] : alignment.nodes) {
    require(index.count(id) > 0, ErrorCategory::kInput, "alignment references missing node " + id);
  }
  for (const auto& [e, _] : alignment.edges) {
    require(e < graph.edges.size(), ErrorCategory::kInput, "alignment references missing edge " + std::to_string(e));
  }
  for (std::size_t e = 0; e < graph.edges.size(); ++e) {
    const auto& edge = graph.edges[e];
    auto s = index.find(edge.source);
    auto t = index.find(edge.target);
    require(s != index.end() && t != index.end(), ErrorCategory::kInput, "edge references missing node");
    WordGraph::Element element{{}, edge.relation};
    if (auto it = alignment.edges.find(e); it != alignment.edges.end()) element.tokens = it->second;
    words.edges.push_back(std::move(element));
    words.links.push_back({s->second, t->second});
  }
  if (auto r = index.find(graph.root); r != index.end()) words.root = r->second;
  return words;
}

Wag expand_edges(const WordGraph& words) {
  Wag wag;
  wag.variant = WagVariant::kFull;
  for (const auto& n : words.nodes) wag.nodes.push_back({n.tokens, n.label});
  for (std::size_t e = 0; e < words.edges.size(); ++e) {
    const int edge_node = static_cast<int>(wag.nodes.size());
    wag.nodes.push_back({words.edges[e].tokens, words.edges[e].label});
    wag.arcs.emplace_back(words.links[e].source, edge_node);
    wag.arcs.emplace_back(edge_node, words.links[e].target);
  }
  return wag;
}

namespace {

// Collapses nodes according to `representative` (a node maps to itself when it
// survives), renumbering survivors in their original order.
Wag quotient(const Wag& wag, const std::vector<int>& representative) {
  std::vector<int> new_index(wag.nodes.size(), -1);
  Wag out;
  out.variant = wag.variant;
  for (std::size_t v = 0; v < wag.nodes.size(); ++v) {
    if (representative[v] == static_cast<int>(v)) {
      new_index[v] = static_cast<int>(out.nodes.size());
      out.nodes.push_back(wag.nodes[v]);
    }
  }
  std::set<std::pair<int, int>> seen;
  for (const auto& [a, b] : wag.arcs) {
    const int na = new_index[static_cast<std::size_t>(representative[static_cast<std::size_t>(a)])];
    const int nb = new_index[static_cast<std::size_t>(representative[static_cast<std::size_t>(b)])];
    if (na == nb) continue;
    if (seen.count({na, nb}) || seen.count({nb, na})) continue;
    seen.insert({na, nb});
    out.arcs.emplace_back(na, nb);
  }
  return out;
}

}  // namespace

Wag split_multi_token(const Wag& wag) {
  Wag split;
  split.variant = wag.variant;
  std::vector<int> parent_of(wag.nodes.size());
  for (std::size_t v = 0; v < wag.nodes.size(); ++v) {
    parent_of[v] = static_cast<int>(split.nodes.size());
    const auto& node = wag.nodes[v];
    split.nodes.push_back({node.tokens.empty() ? std::vector<int>{} : std::vector<int>{node.tokens.front()}, node.label});
  }
  split.arcs = wag.arcs;
  for (std::size_t v = 0; v < wag.nodes.size(); ++v) {
    const auto& tokens = wag.nodes[v].tokens;
    for (std::size_t k = 1; k < tokens.size(); ++k) {
      const int child = static_cast<int>(split.nodes.size());
      split.nodes.push_back({{tokens[k]}, wag.nodes[v].label});
      split.arcs.emplace_back(parent_of[v], child);
    }
  }

  // One node per token position: later claimants merge into the first.
  std::vector<int> representative(split.nodes.size());
  std::iota(representative.begin(), representative.end(), 0);
  std::unordered_map<int, int> host;
  bool merged = false;
  for (std::size_t v = 0; v < split.nodes.size(); ++v) {
    if (!split.nodes[v].aligned()) continue;
    auto [it, inserted] = host.emplace(split.nodes[v].token(), static_cast<int>(v));
    if (!inserted) {
      representative[v] = it->second;
      merged = true;
    }
  }
  return merged ? quotient(split, representative) : split;
}

Wag contract(const Wag& full) {
  const std::size_t n = full.nodes.size();
  require(full.aligned_count() > 0, ErrorCategory::kStructural, "cannot contract a WAG without aligned nodes");

  std::vector<std::vector<int>> parents(n), children(n);
  for (const auto& [a, b] : full.arcs) {
    children[static_cast<std::size_t>(a)].push_back(b);
    parents[static_cast<std::size_t>(b)].push_back(a);
  }
  const auto undirected = full.neighbours();

  // Layered BFS; returns the lowest-index aligned node in the nearest layer.
  auto nearest_aligned = [&](int start, const std::vector<std::vector<int>>& step) -> int {
    std::vector<bool> seen(n, false);
    std::vector<int> layer{start};
    seen[static_cast<std::size_t>(start)] = true;
    while (!layer.empty()) {
      std::vector<int> next;
      for (int v : layer) {
        for (int u : step[static_cast<std::size_t>(v)]) {
          if (!seen[static_cast<std::size_t>(u)]) {
            seen[static_cast<std::size_t>(u)] = true;
            next.push_back(u);
          }
        }
      }
      int best = -1;
      for (int u : next) {
        if (full.nodes[static_cast<std::size_t>(u)].aligned() && (best < 0 || u < best)) best = u;
      }
      if (best >= 0) return best;
      layer = std::move(next);
    }
    return -1;
  };

  std::vector<int> representative(n);
  for (std::size_t v = 0; v < n; ++v) {
    const int iv = static_cast<int>(v);
    if (full.nodes[v].aligned()) {
      representative[v] = iv;
      continue;
    }
    int target = nearest_aligned(iv, parents);
    if (target < 0) target = nearest_aligned(iv, children);
    if (target < 0) target = nearest_aligned(iv, undirected);
    require(target >= 0, ErrorCategory::kStructural, "virtual node in a component without aligned nodes");
    representative[v] = target;
  }
  Wag out = quotient(full, representative);
  out.variant = WagVariant::kContracted;
  return out;
}

Wag build_wag(const AmrGraph& graph, const Alignment& alignment, WagVariant variant) {
  Wag wag = split_multi_token(expand_edges(relabel_with_words(graph, alignment)));
  if (variant == WagVariant::kContracted) wag = contract(wag);
  return wag;
}

nlohmann::json wag_to_json(const Wag& wag, const std::vector<std::string>& sentence) {
  auto nodes = nlohmann::json::array();
  for (std::size_t v = 0; v < wag.nodes.size(); ++v) {
    const auto& node = wag.nodes[v];
    nlohmann::json j{{"index", v}};
    if (node.aligned()) {
      j["kind"] = "aligned";
      j["token"] = node.token();
      if (static_cast<std::size_t>(node.token()) < sentence.size()) {
        j["word"] = sentence[static_cast<std::size_t>(node.token())];
      }
    } else {
      j["kind"] = "virtual";
      j["label"] = node.label;
    }
    nodes.push_back(std::move(j));
  }
  auto edges = nlohmann::json::array();
  for (const auto& [a, b] : wag.arcs) edges.push_back({a, b});
  return {{"variant", to_string(wag.variant)},
          {"nodes", std::move(nodes)},
          {"edges", std::move(edges)},
          {"virtual_count", wag.virtual_count()}};
}

}  // namespace wagparse
