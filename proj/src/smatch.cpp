#include "wagparse/smatch.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_map>

#include "wagparse/errors.hpp"
#include "wagparse/nn/rng.hpp"

namespace wagparse {

TripleSet to_triples(const AmrGraph& graph, bool unlabeled) {
  TripleSet t;
  std::map<std::string, int> index;
  for (const auto& n : graph.nodes) {
    index.emplace(n.id, static_cast<int>(t.variables.size()));
    t.variables.push_back(n.id);
    t.concepts.push_back(n.concept_name);
  }
  for (const auto& e : graph.edges) {
    auto s = index.find(e.source);
    auto d = index.find(e.target);
    if (s == index.end() || d == index.end()) continue;
    t.relations.push_back({s->second, unlabeled ? std::string(kUnlabeledRole) : e.relation, d->second});
  }
  if (auto r = index.find(graph.root); r != index.end()) {
    t.attributes.push_back({r->second, "TOP", graph.nodes[r->second].concept_name});
  }
  return t;
}

double SmatchScore::precision() const {
  return pred_total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(pred_total);
}

double SmatchScore::recall() const {
  return gold_total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(gold_total);
}

double SmatchScore::f1() const {
  if (pred_total == 0 && gold_total == 0) return 1.0;
  return 2.0 * static_cast<double>(matched) / static_cast<double>(pred_total + gold_total);
}

SmatchScore& SmatchScore::operator+=(const SmatchScore& other) {
  matched += other.matched;
  pred_total += other.pred_total;
  gold_total += other.gold_total;
  mapping.clear();
  return *this;
}

namespace {

// Scores mappings incrementally. Triples are counted as multisets: a group of
// identical predicted triples matches min(count, gold count).
class Matcher {
 public:
  Matcher(const TripleSet& pred, const TripleSet& gold)
      : np_(static_cast<int>(pred.variables.size())), ng_(static_cast<int>(gold.variables.size())) {
    local_.assign(static_cast<std::size_t>(np_ * ng_), 0);
    for (int i = 0; i < np_; ++i) {
      for (int j = 0; j < ng_; ++j) {
        int w = pred.concepts[static_cast<std::size_t>(i)] == gold.concepts[static_cast<std::size_t>(j)] ? 1 : 0;
        w += attribute_overlap(pred, gold, i, j);
        local_[static_cast<std::size_t>(i * ng_ + j)] = w;
      }
    }
    std::map<std::tuple<int, int, int>, int> groups;
    for (const auto& r : pred.relations) ++groups[{r.source, r.target, role(r.role)}];
    for (const auto& r : gold.relations) ++gold_relations_[key(r.source, r.target, role(r.role))];
    groups_of_.resize(static_cast<std::size_t>(np_));
    for (const auto& [k, count] : groups) {
      const auto& [v, u, ro] = k;
      const int g = static_cast<int>(groups_.size());
      groups_.push_back({v, u, ro, count});
      groups_of_[static_cast<std::size_t>(v)].push_back(g);
      if (u != v) groups_of_[static_cast<std::size_t>(u)].push_back(g);
    }
  }

  int pred_vars() const { return np_; }
  int gold_vars() const { return ng_; }

  int local(int i, int j) const { return j < 0 ? 0 : local_[static_cast<std::size_t>(i * ng_ + j)]; }

  int concept_match(const TripleSet& pred, const TripleSet& gold, int i, int j) const {
    return pred.concepts[static_cast<std::size_t>(i)] == gold.concepts[static_cast<std::size_t>(j)] ? 1 : 0;
  }

  int group_score(int g, const std::vector<int>& m) const {
    const auto& gr = groups_[static_cast<std::size_t>(g)];
    const int a = m[static_cast<std::size_t>(gr.v)];
    const int b = m[static_cast<std::size_t>(gr.u)];
    if (a < 0 || b < 0) return 0;
    auto it = gold_relations_.find(key(a, b, gr.role));
    return it == gold_relations_.end() ? 0 : std::min(gr.count, it->second);
  }

  int total(const std::vector<int>& m) const {
    int s = 0;
    for (int i = 0; i < np_; ++i) s += local(i, m[static_cast<std::size_t>(i)]);
    for (int g = 0; g < static_cast<int>(groups_.size()); ++g) s += group_score(g, m);
    return s;
  }

  // Relation score of the groups touching any of `vars`, each group once.
  int touching(std::initializer_list<int> vars, const std::vector<int>& m) const {
    int s = 0;
    std::vector<int> seen;
    for (int v : vars) {
      for (int g : groups_of_[static_cast<std::size_t>(v)]) {
        if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
        seen.push_back(g);
        s += group_score(g, m);
      }
    }
    return s;
  }

 private:
  struct Group {
    int v, u, role, count;
  };

  static std::uint64_t key(int a, int b, int r) {
    return (static_cast<std::uint64_t>(a) << 42) | (static_cast<std::uint64_t>(b) << 21) | static_cast<std::uint64_t>(r);
  }

  int role(const std::string& r) {
    auto [it, inserted] = roles_.emplace(r, static_cast<int>(roles_.size()));
    return it->second;
  }

  static int attribute_overlap(const TripleSet& pred, const TripleSet& gold, int i, int j) {
    std::map<std::pair<std::string, std::string>, int> p, g;
    for (const auto& a : pred.attributes) {
      if (a.variable == i) ++p[{a.role, a.value}];
    }
    if (p.empty()) return 0;
    for (const auto& a : gold.attributes) {
      if (a.variable == j) ++g[{a.role, a.value}];
    }
    int s = 0;
    for (const auto& [k, c] : p) {
      auto it = g.find(k);
      if (it != g.end()) s += std::min(c, it->second);
    }
    return s;
  }

  int np_, ng_;
  std::vector<int> local_;
  std::map<std::string, int> roles_;
  std::unordered_map<std::uint64_t, int> gold_relations_;
  std::vector<Group> groups_;
  std::vector<std::vector<int>> groups_of_;
};

int climb(const Matcher& mt, std::vector<int>& m) {
  const int np = mt.pred_vars();
  const int ng = mt.gold_vars();
  std::vector<int> owner(static_cast<std::size_t>(ng), -1);
  for (int i = 0; i < np; ++i) {
    if (m[static_cast<std::size_t>(i)] >= 0) owner[static_cast<std::size_t>(m[static_cast<std::size_t>(i)])] = i;
  }
  int score = mt.total(m);
  while (true) {
    int best_delta = 0;
    int kind = 0, a = -1, b = -1;
    for (int i = 0; i < np; ++i) {
      auto& mi = m[static_cast<std::size_t>(i)];
      const int old = mi;
      const int before = mt.local(i, old) + mt.touching({i}, m);
      for (int j = -1; j < ng; ++j) {
        if (j == old || (j >= 0 && owner[static_cast<std::size_t>(j)] >= 0)) continue;
        mi = j;
        const int delta = mt.local(i, j) + mt.touching({i}, m) - before;
        mi = old;
        if (delta > best_delta) {
          best_delta = delta;
          kind = 1;
          a = i;
          b = j;
        }
      }
    }
    for (int i = 0; i < np; ++i) {
      for (int k = i + 1; k < np; ++k) {
        auto& mi = m[static_cast<std::size_t>(i)];
        auto& mk = m[static_cast<std::size_t>(k)];
        if (mi == mk) continue;  // both unmapped
        const int before = mt.local(i, mi) + mt.local(k, mk) + mt.touching({i, k}, m);
        std::swap(mi, mk);
        const int delta = mt.local(i, mi) + mt.local(k, mk) + mt.touching({i, k}, m) - before;
        std::swap(mi, mk);
        if (delta > best_delta) {
          best_delta = delta;
          kind = 2;
          a = i;
          b = k;
        }
      }
    }
    if (kind == 0) break;
    if (kind == 1) {
      auto& ma = m[static_cast<std::size_t>(a)];
      if (ma >= 0) owner[static_cast<std::size_t>(ma)] = -1;
      ma = b;
      if (b >= 0) owner[static_cast<std::size_t>(b)] = a;
    } else {
      auto& ma = m[static_cast<std::size_t>(a)];
      auto& mb = m[static_cast<std::size_t>(b)];
      std::swap(ma, mb);
      if (ma >= 0) owner[static_cast<std::size_t>(ma)] = a;
      if (mb >= 0) owner[static_cast<std::size_t>(mb)] = b;
    }
    score += best_delta;
  }
  return score;
}

SmatchScore finish(const TripleSet& pred, const TripleSet& gold, std::size_t matched, std::vector<int> mapping) {
  SmatchScore s;
  s.matched = matched;
  s.pred_total = pred.size();
  s.gold_total = gold.size();
  s.mapping = std::move(mapping);
  return s;
}

SmatchScore hill_climb(const TripleSet& pred, const TripleSet& gold, const SmatchOptions& options,
                       const std::vector<int>* extra_start = nullptr) {
  const Matcher mt(pred, gold);
  const int np = mt.pred_vars();
  const int ng = mt.gold_vars();
  const std::size_t ceiling = std::min(pred.size(), gold.size());

  // Concept-matching start: first free gold variable with the same concept.
  std::vector<int> start(static_cast<std::size_t>(np), -1);
  {
    std::vector<bool> used(static_cast<std::size_t>(ng), false);
    for (int i = 0; i < np; ++i) {
      for (int j = 0; j < ng; ++j) {
        if (!used[static_cast<std::size_t>(j)] && mt.concept_match(pred, gold, i, j)) {
          start[static_cast<std::size_t>(i)] = j;
          used[static_cast<std::size_t>(j)] = true;
          break;
        }
      }
    }
  }
  std::vector<int> best = start;
  int best_score = climb(mt, best);
  if (extra_start != nullptr && extra_start->size() == static_cast<std::size_t>(np)) {
    std::vector<int> m = *extra_start;
    const int s = climb(mt, m);
    if (s > best_score) {
      best_score = s;
      best = std::move(m);
    }
  }

  nn::Rng rng(options.seed);
  for (int r = 0; r < options.restarts && static_cast<std::size_t>(best_score) < ceiling; ++r) {
    std::vector<int> perm(static_cast<std::size_t>(std::max(np, ng)));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<int> m(static_cast<std::size_t>(np));
    for (int i = 0; i < np; ++i) {
      const int j = perm[static_cast<std::size_t>(i)];
      m[static_cast<std::size_t>(i)] = j < ng ? j : -1;
    }
    const int s = climb(mt, m);
    if (s > best_score) {
      best_score = s;
      best = m;
    }
  }
  return finish(pred, gold, static_cast<std::size_t>(best_score), std::move(best));
}

}  // namespace

std::size_t matched_triples(const TripleSet& pred, const TripleSet& gold, const std::vector<int>& mapping) {
  require(mapping.size() == pred.variables.size(), ErrorCategory::kInput, "mapping size differs from variable count");
  return static_cast<std::size_t>(Matcher(pred, gold).total(mapping));
}

SmatchScore score_exact(const AmrGraph& pred, const AmrGraph& gold, bool unlabeled) {
  require(pred.nodes.size() <= kExactMaxVariables && gold.nodes.size() <= kExactMaxVariables, ErrorCategory::kInput,
          "exact SMATCH refuses graphs above " + std::to_string(kExactMaxVariables) + " variables");
  const auto tp = to_triples(pred, unlabeled);
  const auto tg = to_triples(gold, unlabeled);
  const Matcher mt(tp, tg);
  const int np = mt.pred_vars();
  const int ng = mt.gold_vars();
  std::vector<int> m(static_cast<std::size_t>(np), -1), best = m;
  std::vector<bool> used(static_cast<std::size_t>(ng), false);
  int best_score = -1;
  auto rec = [&](auto&& self, int i) -> void {
    if (i == np) {
      const int s = mt.total(m);
      if (s > best_score) {
        best_score = s;
        best = m;
      }
      return;
    }
    m[static_cast<std::size_t>(i)] = -1;
    self(self, i + 1);
    for (int j = 0; j < ng; ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      used[static_cast<std::size_t>(j)] = true;
      m[static_cast<std::size_t>(i)] = j;
      self(self, i + 1);
      used[static_cast<std::size_t>(j)] = false;
    }
    m[static_cast<std::size_t>(i)] = -1;
  };
  rec(rec, 0);
  return finish(tp, tg, static_cast<std::size_t>(std::max(best_score, 0)), std::move(best));
}

SmatchScore score(const AmrGraph& pred, const AmrGraph& gold, const SmatchOptions& options) {
  return hill_climb(to_triples(pred), to_triples(gold), options);
}

SmatchScore score_unlabeled(const AmrGraph& pred, const AmrGraph& gold, const SmatchOptions& options) {
  // The labeled optimum is a feasible unlabeled start, which keeps the
  // unlabeled score at or above the labeled one pair by pair.
  const auto labeled = score(pred, gold, options);
  return hill_climb(to_triples(pred, true), to_triples(gold, true), options, &labeled.mapping);
}

std::vector<SmatchBucket> bucket_report(const std::vector<ScoredPair>& pairs, std::size_t bucket_size) {
  require(bucket_size > 0, ErrorCategory::kConfig, "bucket size must be positive");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pairs[a].words < pairs[b].words; });
  std::vector<SmatchBucket> buckets;
  for (std::size_t start = 0; start < order.size(); start += bucket_size) {
    SmatchBucket bucket;
    const std::size_t end = std::min(order.size(), start + bucket_size);
    for (std::size_t k = start; k < end; ++k) {
      bucket.score += pairs[order[k]].labeled;
      bucket.max_words = std::max(bucket.max_words, pairs[order[k]].words);
    }
    bucket.n = end - start;
    buckets.push_back(std::move(bucket));
  }
  return buckets;
}

nlohmann::json SmatchReport::to_json() const {
  nlohmann::json buckets_json = nlohmann::json::array();
  for (const auto& b : buckets) buckets_json.push_back({{"max_words", b.max_words}, {"f1", b.score.f1()}, {"n", b.n}});
  return {{"corpus_f1", corpus.f1()},
          {"precision", corpus.precision()},
          {"recall", corpus.recall()},
          {"unlabeled_f1", unlabeled.f1()},
          {"buckets", buckets_json}};
}

SmatchReport evaluate_graphs(const std::vector<AmrGraph>& predictions, const std::vector<AmrGraph>& golds,
                             const std::vector<std::size_t>& word_counts, std::size_t bucket_size,
                             const SmatchOptions& options) {
  require(predictions.size() == golds.size() && golds.size() == word_counts.size(), ErrorCategory::kInput,
          "prediction, gold and word-count lists differ in length");
  std::vector<ScoredPair> pairs;
  SmatchReport report;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    SmatchOptions per_pair = options;
    per_pair.seed = options.seed + i;
    ScoredPair p;
    p.words = word_counts[i];
    p.labeled = score(predictions[i], golds[i], per_pair);
    p.unlabeled = score_unlabeled(predictions[i], golds[i], per_pair);
    report.corpus += p.labeled;
    report.unlabeled += p.unlabeled;
    pairs.push_back(std::move(p));
  }
  report.buckets = bucket_report(pairs, bucket_size);
  return report;
}

}  // namespace wagparse
