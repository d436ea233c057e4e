#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "test_util.hpp"
#include "wagparse/errors.hpp"
#include "wagparse/nn/rng.hpp"
#include "wagparse/smatch.hpp"

using namespace wagparse;
using test::make_graph;

namespace {

// Random rooted DAG with `n` nodes over a small concept and role alphabet so
// that near-ties between mappings are common.
AmrGraph random_graph(nn::Rng& rng, std::size_t n) {
  static const std::vector<std::string> concepts{"a", "b", "c", "d"};
  static const std::vector<std::string> roles{":ARG0", ":ARG1", ":mod"};
  AmrGraph g;
  for (std::size_t i = 0; i < n; ++i) g.nodes.push_back({"v" + std::to_string(i), concepts[rng.below(concepts.size())]});
  for (std::size_t i = 1; i < n; ++i) {
    g.edges.push_back({g.nodes[rng.below(i)].id, roles[rng.below(roles.size())], g.nodes[i].id});
  }
  for (std::size_t extra = rng.below(3); extra > 0 && n > 2; --extra) {
    const std::size_t t = 1 + rng.below(n - 1);
    const std::size_t s = rng.below(t);
    g.edges.push_back({g.nodes[s].id, roles[rng.below(roles.size())], g.nodes[t].id});
  }
  g.root = g.nodes.front().id;
  return g;
}

// Brute force over injective maps straight from the graphs, counting
// multiset matches of instance, relation and root triples.
std::size_t oracle_matched(const AmrGraph& p, const AmrGraph& g) {
  const std::size_t np = p.nodes.size(), ng = g.nodes.size();
  std::vector<int> gold_slots(std::max(np, ng));
  std::iota(gold_slots.begin(), gold_slots.end(), 0);
  std::size_t best = 0;
  std::map<std::string, int> gi, pi;
  for (std::size_t i = 0; i < ng; ++i) gi[g.nodes[i].id] = static_cast<int>(i);
  for (std::size_t i = 0; i < np; ++i) pi[p.nodes[i].id] = static_cast<int>(i);
  do {
    // Slot values >= ng mean "unmapped".
    std::size_t m = 0;
    for (std::size_t i = 0; i < np; ++i) {
      const int t = gold_slots[i];
      if (t < static_cast<int>(ng) && p.nodes[i].concept_name == g.nodes[t].concept_name) ++m;
    }
    if (gold_slots[pi[p.root]] == gi[g.root] && p.find_node(p.root)->concept_name == g.find_node(g.root)->concept_name) ++m;
    std::vector<bool> used(g.edges.size());
    for (const auto& e : p.edges) {
      const int s = gold_slots[pi[e.source]], t = gold_slots[pi[e.target]];
      for (std::size_t k = 0; k < g.edges.size(); ++k) {
        if (!used[k] && gi[g.edges[k].source] == s && gi[g.edges[k].target] == t && g.edges[k].relation == e.relation) {
          used[k] = true;
          ++m;
          break;
        }
      }
    }
    best = std::max(best, m);
  } while (std::next_permutation(gold_slots.begin(), gold_slots.end()));
  return best;
}

}  // namespace

TEST_CASE("triples") {
  CHECK(to_triples(make_graph({{"a", "x"}}, {})).size() == 2);
  CHECK(to_triples(make_graph({{"a", "x"}, {"b", "y"}}, {{"a", ":ARG0", "b"}})).size() == 4);
  const auto country = test::country_record().graph;
  CHECK(to_triples(country).size() == country.nodes.size() + country.edges.size() + 1);
}

TEST_CASE("exact scores") {
  const auto gold = make_graph({{"a", "x"}, {"b", "y"}, {"c", "z"}}, {{"a", ":ARG0", "b"}, {"a", ":ARG1", "c"}});
  CHECK(score_exact(gold, gold).f1() == 1.0);
  CHECK(score_exact(make_graph({{"q", "p"}, {"r", "s"}}, {{"q", ":ARG0", "r"}}),
                    make_graph({{"a", "x"}, {"b", "y"}}, {{"a", ":mod", "b"}}))
            .f1() == 0.0);
  auto pred = gold;
  pred.edges.pop_back();
  const auto s = score_exact(pred, gold);
  const std::size_t n = to_triples(gold).size();
  CHECK(s.matched == n - 1);
  CHECK(s.precision() == 1.0);
  CHECK(s.recall() == doctest::Approx(static_cast<double>(n - 1) / static_cast<double>(n)).epsilon(1e-15));
  nn::Rng rng(1);
  CHECK_THROWS_AS(score_exact(random_graph(rng, 7), gold), Error);
}

TEST_CASE("exact search agrees with the brute-force oracle") {
  nn::Rng rng(23);
  for (int trial = 0; trial < 60; ++trial) {
    const auto p = random_graph(rng, 1 + rng.below(5));
    const auto g = random_graph(rng, 1 + rng.below(5));
    CHECK(score_exact(p, g).matched == oracle_matched(p, g));
  }
}

TEST_CASE("hill climbing equals exact search on small pairs") {
  nn::Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_graph(rng, 1 + rng.below(5));
    const auto g = random_graph(rng, 1 + rng.below(5));
    SmatchOptions o{10, static_cast<std::uint64_t>(trial)};
    const auto climbed = score(p, g, o);
    CHECK(climbed.matched == score_exact(p, g).matched);
    CHECK(score(p, g, o).f1() == climbed.f1());
    const auto unl = score_unlabeled(p, g, o);
    CHECK(unl.f1() >= climbed.f1());
    CHECK(unl.matched == score_exact(p, g, true).matched);
    CHECK(score(g, g, o).f1() == 1.0);
  }
}

TEST_CASE("labels and monotonicity") {
  const auto g = make_graph({{"a", "x"}, {"b", "y"}, {"c", "z"}}, {{"a", ":ARG0", "b"}, {"b", ":ARG1", "c"}});
  auto relabeled = g;
  for (auto& e : relabeled.edges) e.relation = ":mod";
  CHECK(score_unlabeled(relabeled, g).f1() == 1.0);
  CHECK(score(relabeled, g).f1() < 1.0);
  auto extra = g;
  extra.edges.push_back({"a", ":ARG2", "c"});
  CHECK(score(extra, g).recall() <= score(g, g).recall());
  CHECK(score(AmrGraph{}, AmrGraph{}).f1() == 1.0);
  CHECK(score(AmrGraph{}, g).f1() == 0.0);
}

TEST_CASE("bucket report") {
  nn::Rng rng(4);
  std::vector<AmrGraph> preds, golds;
  std::vector<std::size_t> words;
  for (int i = 0; i < 23; ++i) {
    golds.push_back(random_graph(rng, 1 + rng.below(6)));
    preds.push_back(random_graph(rng, 1 + rng.below(6)));
    words.push_back(3 + rng.below(20));
  }
  const auto report = evaluate_graphs(preds, golds, words, 5);
  CHECK(report.buckets.size() == 5);
  SmatchScore summed;
  std::size_t prev = 0, n = 0;
  for (const auto& b : report.buckets) {
    summed += b.score;
    CHECK(b.max_words >= prev);
    prev = b.max_words;
    n += b.n;
  }
  CHECK(n == 23);
  CHECK(summed.matched == report.corpus.matched);
  CHECK(summed.f1() == report.corpus.f1());
  CHECK(evaluate_graphs(preds, golds, words, 100).buckets.size() == 1);

  const auto j = report.to_json();
  for (const char* key : {"corpus_f1", "precision", "recall", "unlabeled_f1", "buckets"}) CHECK(j.contains(key));
  CHECK(evaluate_graphs(golds, golds, words, 5).corpus.f1() == 1.0);
}
