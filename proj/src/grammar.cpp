#include "wagparse/grammar.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "wagparse/builtin_grammar.hpp"
#include "wagparse/errors.hpp"
#include "wagparse/linearize.hpp"
#include "wagparse/nn/rng.hpp"

namespace wagparse {

namespace {

std::string default_concept(const std::string& words) {
  std::string c = words;
  for (auto& ch : c) {
    if (ch == ' ') ch = '-';
  }
  return c;
}

LexEntry entry_from_json(const nlohmann::json& j) {
  LexEntry e;
  if (j.is_string()) {
    const auto text = j.get<std::string>();
    const auto bar = text.find('|');
    e.words = text.substr(0, bar);
    e.concept_name = bar == std::string::npos ? default_concept(e.words) : text.substr(bar + 1);
  } else {
    e.words = j.at("words").get<std::string>();
    e.concept_name = j.value("concept", default_concept(e.words));
    e.unaligned_relation = j.value("unaligned_relation", std::string());
    e.unaligned_concept = j.value("unaligned_concept", std::string());
    require(e.unaligned_relation.empty() == e.unaligned_concept.empty(), ErrorCategory::kInput,
            "lexicon entry '" + e.words + "' needs both unaligned_relation and unaligned_concept");
  }
  require(!split_words(e.words).empty() && !e.concept_name.empty(), ErrorCategory::kInput, "empty lexicon entry");
  return e;
}

nlohmann::json entry_to_json(const LexEntry& e) {
  if (e.unaligned_concept.empty()) {
    return e.concept_name == default_concept(e.words) ? nlohmann::json(e.words) : nlohmann::json(e.words + "|" + e.concept_name);
  }
  return {{"words", e.words},
          {"concept", e.concept_name},
          {"unaligned_relation", e.unaligned_relation},
          {"unaligned_concept", e.unaligned_concept}};
}

struct Slot {
  std::string name;
  std::string cls;
};

// "$a:noun" -> {a, noun}
Slot parse_slot(const std::string& item) {
  const auto colon = item.find(':');
  require(item.size() > 1 && item[0] == '$' && colon != std::string::npos && colon > 1 && colon + 1 < item.size(),
          ErrorCategory::kInput, "bad slot '" + item + "'");
  return {item.substr(1, colon - 1), item.substr(colon + 1)};
}

struct EdgeSpec {
  std::string source, relation, target;
};

EdgeSpec parse_edge(const std::string& text) {
  const auto parts = split_words(text);
  require(parts.size() == 3 && parts[1].size() > 1 && parts[1][0] == ':', ErrorCategory::kInput,
          "bad template edge '" + text + "'");
  return {parts[0], parts[1], parts[2]};
}

std::pair<std::string, std::string> parse_constant(const std::string& text) {
  const auto parts = split_words(text);
  require(parts.size() == 3 && parts[1] == "/", ErrorCategory::kInput, "bad template node '" + text + "'");
  return {parts[0], parts[2]};
}

void check_template(const Template& t, const GrammarSpec& spec) {
  require(t.category == "sentence" || t.category == "clause", ErrorCategory::kInput,
          "template " + t.name + ": category must be sentence or clause");
  require(t.weight > 0.0, ErrorCategory::kInput, "template " + t.name + ": weight must be positive");
  std::set<std::string> names;
  for (const auto& n : t.nodes) names.insert(parse_constant(n).first);
  for (const auto& item : t.sentence) {
    if (!item.empty() && item[0] == '$') {
      const auto slot = parse_slot(item);
      require(slot.cls[0] == '@' || spec.lexicon.count(slot.cls) > 0, ErrorCategory::kInput,
              "template " + t.name + ": unknown lexicon class " + slot.cls);
      names.insert(slot.name);
    }
  }
  require(names.count(t.root) > 0, ErrorCategory::kInput, "template " + t.name + ": root '" + t.root + "' undefined");
  for (std::size_t k = 0; k < t.edges.size(); ++k) {
    const auto e = parse_edge(t.edges[k]);
    require(names.count(e.source) && names.count(e.target), ErrorCategory::kInput,
            "template " + t.name + ": edge '" + t.edges[k] + "' uses an undefined name");
  }
  for (const auto& item : t.sentence) {
    const auto eq = item.find('=');
    if (item.empty() || item[0] == '$' || eq == std::string::npos) continue;
    const auto target = item.substr(eq + 1);
    if (!target.empty() && target[0] == ':') {
      const auto k = std::stoul(target.substr(1));
      require(k < t.edges.size(), ErrorCategory::kInput, "template " + t.name + ": '" + item + "' names a missing edge");
    } else {
      require(names.count(target) > 0, ErrorCategory::kInput, "template " + t.name + ": '" + item + "' names an undefined node");
    }
  }
}

class Builder {
 public:
  Builder(const GrammarSpec& spec, nn::Rng& rng) : spec_(spec), rng_(rng) {}

  CorpusRecord take(std::string id) {
    CorpusRecord r;
    r.id = std::move(id);
    r.tokens = std::move(tokens_);
    r.graph = std::move(graph_);
    r.alignment = std::move(alignment_);
    for (auto& [node_id, tokens] : r.alignment.nodes) std::sort(tokens.begin(), tokens.end());
    for (auto& [k, tokens] : r.alignment.edges) std::sort(tokens.begin(), tokens.end());
    return r;
  }

  void set_root(const std::string& id) { graph_.root = id; }

  std::string instantiate(const Template& t, int depth) {
    std::map<std::string, std::string> names;
    for (const auto& n : t.nodes) {
      const auto [name, concept_name] = parse_constant(n);
      names[name] = add_node(concept_name);
    }
    std::vector<std::pair<int, std::string>> node_links;
    std::vector<std::pair<int, std::size_t>> edge_links;
    for (const auto& item : t.sentence) {
      if (!item.empty() && item[0] == '$') {
        const auto slot = parse_slot(item);
        names[slot.name] = slot.cls[0] == '@' ? instantiate(pick_template(slot.cls.substr(1), depth + 1), depth + 1)
                                              : fill(slot.cls);
        continue;
      }
      const auto eq = item.find('=');
      if (eq == std::string::npos || eq == 0) {
        tokens_.push_back(item);
        continue;
      }
      const int position = static_cast<int>(tokens_.size());
      tokens_.push_back(item.substr(0, eq));
      const auto target = item.substr(eq + 1);
      if (target[0] == ':') {
        edge_links.emplace_back(position, std::stoul(target.substr(1)));
      } else {
        node_links.emplace_back(position, target);
      }
    }
    std::vector<std::size_t> edge_index;
    for (const auto& text : t.edges) {
      const auto e = parse_edge(text);
      edge_index.push_back(graph_.edges.size());
      graph_.edges.push_back({names.at(e.source), e.relation, names.at(e.target)});
    }
    for (const auto& [position, name] : node_links) alignment_.nodes[names.at(name)].push_back(position);
    for (const auto& [position, k] : edge_links) alignment_.edges[edge_index.at(k)].push_back(position);
    return names.at(t.root);
  }

  const Template& pick_template(const std::string& category, int depth) {
    std::vector<const Template*> options;
    double total = 0.0;
    for (const auto& t : spec_.templates) {
      if (t.category != category) continue;
      if (depth >= spec_.max_depth && recursive(t)) continue;
      options.push_back(&t);
      total += t.weight;
    }
    require(!options.empty(), ErrorCategory::kInput, "grammar has no usable '" + category + "' template");
    double r = rng_.uniform() * total;
    for (const auto* t : options) {
      if (r < t->weight) return *t;
      r -= t->weight;
    }
    return *options.back();
  }

 private:
  static bool recursive(const Template& t) {
    for (const auto& item : t.sentence) {
      if (item.rfind("$", 0) == 0 && item.find(":@") != std::string::npos) return true;
    }
    return false;
  }

  std::string add_node(const std::string& concept_name) {
    std::string id = "n" + std::to_string(next_id_++);
    graph_.nodes.push_back({id, concept_name});
    return id;
  }

  const LexEntry& pick_entry(const std::string& cls) {
    const auto& entries = spec_.lexicon.at(cls);
    std::vector<const LexEntry*> usable;
    for (const auto& e : entries) {
      if (spec_.unaligned_concepts || e.unaligned_concept.empty()) usable.push_back(&e);
    }
    require(!usable.empty(), ErrorCategory::kInput, "lexicon class " + cls + " has no usable entry");
    return *usable[rng_.below(usable.size())];
  }

  void emit(const std::string& words, const std::string& node) {
    for (const auto& w : split_words(words)) {
      alignment_.nodes[node].push_back(static_cast<int>(tokens_.size()));
      tokens_.push_back(w);
    }
  }

  std::string fill(const std::string& cls) {
    std::string adjective;
    const bool adjectival = std::find(spec_.adjective_classes.begin(), spec_.adjective_classes.end(), cls) !=
                            spec_.adjective_classes.end();
    if (adjectival && rng_.bernoulli(spec_.adjective_rate)) {
      const auto& a = pick_entry(spec_.adjective_lexicon);
      adjective = add_node(a.concept_name);
      emit(a.words, adjective);
    }
    const auto& e = pick_entry(cls);
    const auto node = add_node(e.concept_name);
    emit(e.words, node);
    if (!adjective.empty()) graph_.edges.push_back({node, ":mod", adjective});
    if (!e.unaligned_concept.empty()) {
      const auto extra = add_node(e.unaligned_concept);
      graph_.edges.push_back({node, e.unaligned_relation, extra});
    }
    return node;
  }

  const GrammarSpec& spec_;
  nn::Rng& rng_;
  std::vector<std::string> tokens_;
  AmrGraph graph_;
  Alignment alignment_;
  int next_id_ = 0;
};

bool has_unaligned_edge(const CorpusRecord& r) {
  for (std::size_t k = 0; k < r.graph.edges.size(); ++k) {
    if (!r.alignment.edges.count(k)) return true;
  }
  return false;
}

}  // namespace

nlohmann::json GrammarSpec::to_json() const {
  nlohmann::json lex = nlohmann::json::object();
  for (const auto& [cls, entries] : lexicon) {
    auto& arr = lex[cls] = nlohmann::json::array();
    for (const auto& e : entries) arr.push_back(entry_to_json(e));
  }
  nlohmann::json temps = nlohmann::json::array();
  for (const auto& t : templates) {
    nlohmann::json tj = {{"name", t.name}, {"category", t.category}, {"weight", t.weight},
                         {"root", t.root}, {"sentence", t.sentence}, {"nodes", t.nodes}, {"edges", t.edges}};
    temps.push_back(tj);
  }
  return {{"adjective_rate", adjective_rate},
          {"adjective_classes", adjective_classes},
          {"adjective_lexicon", adjective_lexicon},
          {"max_depth", max_depth},
          {"unaligned_concepts", unaligned_concepts},
          {"min_words", min_words},
          {"max_words", max_words},
          {"max_nodes", max_nodes},
          {"max_linearized", max_linearized},
          {"lexicon", lex},
          {"templates", temps}};
}

GrammarSpec GrammarSpec::from_json(const nlohmann::json& j) {
  try {
    GrammarSpec s;
    s.adjective_rate = j.value("adjective_rate", s.adjective_rate);
    s.adjective_classes = j.value("adjective_classes", s.adjective_classes);
    s.adjective_lexicon = j.value("adjective_lexicon", s.adjective_lexicon);
    s.max_depth = j.value("max_depth", s.max_depth);
    s.unaligned_concepts = j.value("unaligned_concepts", s.unaligned_concepts);
    s.min_words = j.value("min_words", s.min_words);
    s.max_words = j.value("max_words", s.max_words);
    s.max_nodes = j.value("max_nodes", s.max_nodes);
    s.max_linearized = j.value("max_linearized", s.max_linearized);
    for (const auto& [cls, entries] : j.at("lexicon").items()) {
      auto& list = s.lexicon[cls];
      for (const auto& e : entries) list.push_back(entry_from_json(e));
    }
    for (const auto& tj : j.at("templates")) {
      Template t;
      t.name = tj.at("name").get<std::string>();
      t.category = tj.value("category", t.category);
      t.weight = tj.value("weight", t.weight);
      t.root = tj.at("root").get<std::string>();
      t.sentence = tj.at("sentence").get<std::vector<std::string>>();
      t.nodes = tj.value("nodes", t.nodes);
      t.edges = tj.value("edges", t.edges);
      s.templates.push_back(std::move(t));
    }
    require(s.adjective_rate >= 0.0 && s.adjective_rate <= 1.0, ErrorCategory::kInput, "adjective_rate must lie in [0, 1]");
    require(s.adjective_classes.empty() || s.lexicon.count(s.adjective_lexicon), ErrorCategory::kInput,
            "adjective lexicon class missing");
    require(s.min_words >= 1 && s.min_words <= s.max_words, ErrorCategory::kInput, "bad word limits");
    for (const auto& t : s.templates) check_template(t, s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::kInput, std::string("bad grammar spec: ") + e.what());
  }
}

GrammarSpec GrammarSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCategory::kIo, "cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCategory::kInput, path.string() + ": " + e.what());
  }
}

GrammarSpec GrammarSpec::builtin() { return from_json(nlohmann::json::parse(detail::kBuiltinGrammar)); }

std::vector<CorpusRecord> generate(const GrammarSpec& spec, std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorCategory::kInput, "generate needs n >= 1");
  nn::Rng rng(seed);
  std::vector<CorpusRecord> out;
  out.reserve(n);
  constexpr int kAttempts = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "syn-%06zu", i);
    bool done = false;
    for (int attempt = 0; attempt < kAttempts && !done; ++attempt) {
      Builder b(spec, rng);
      const auto& top = b.pick_template("sentence", 0);
      b.set_root(b.instantiate(top, 0));
      auto r = b.take(id);
      if (r.tokens.size() < spec.min_words || r.tokens.size() > spec.max_words) continue;
      if (r.graph.nodes.size() > spec.max_nodes || !is_valid(r.graph) || !has_unaligned_edge(r)) continue;
      if (linearize(r.graph).size() > spec.max_linearized) continue;
      check_alignment(r.graph, r.alignment, r.tokens.size());
      out.push_back(std::move(r));
      done = true;
    }
    require(done, ErrorCategory::kInput, "grammar cannot produce a record within its limits");
  }
  return out;
}

}  // namespace wagparse
