#include <doctest.h>

#include <set>

#include "test_util.hpp"
#include "wagparse/corpus.hpp"
#include "wagparse/errors.hpp"
#include "wagparse/linearize.hpp"
#include "wagparse/vocab.hpp"

using namespace wagparse;
using test::make_graph;

namespace {

bool has_violation(const AmrGraph& g, ViolationKind kind) {
  for (const auto& v : validate(g)) {
    if (v.kind == kind) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("validate") {
  CHECK(validate(test::tell_graph()).empty());
  CHECK(has_violation(make_graph({{"a", "x"}}, {{"a", ":mod", "a"}}), ViolationKind::kCycle));
  CHECK(has_violation(make_graph({{"a", "x"}, {"b", "y"}}, {}), ViolationKind::kUnreachable));
  CHECK(has_violation(make_graph({{"a", "x"}}, {{"a", "mod", "a"}}), ViolationKind::kBadRelation));
  CHECK(has_violation(make_graph({{"a", "x"}}, {{"a", ":mod", "zz"}}), ViolationKind::kDanglingEdge));
  CHECK(has_violation(AmrGraph{}, ViolationKind::kEmpty));
}

TEST_CASE("linearize single node") {
  const auto g = make_graph({{"c0", "country"}}, {});
  CHECK(linearize(g).to_string() == "( <R0> country )");
}

TEST_CASE("linearize re-entrancy") {
  const auto lin = linearize(test::tell_graph());
  CHECK(lin.tokens[1] == "<R0>");
  CHECK(lin.tokens[2] == "tell-01");
  CHECK(lin.to_string() ==
        "( <R0> tell-01 :ARG0 ( <R1> you ) :ARG1 ( <R2> wash-01 :ARG0 ( <R3> i ) :ARG1 ( <R4> dog ) ) :ARG2 <R3> )");
  std::set<std::string> distinct;
  std::size_t occurrences = 0;
  for (const auto& t : lin.tokens) {
    if (Vocabulary::parse_variable(t)) {
      distinct.insert(t);
      ++occurrences;
    }
  }
  CHECK(distinct.size() == 5);
  CHECK(occurrences == 6);  // five nodes plus one re-entrant reference
  CHECK(linearize(test::tell_graph()) == lin);
}

TEST_CASE("linearize rejects cycles") {
  const auto g = make_graph({{"a", "x"}, {"b", "y"}}, {{"a", ":ARG0", "b"}, {"b", ":ARG1", "a"}});
  try {
    linearize(g);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::kStructural);
  }
}

TEST_CASE("delinearize repairs") {
  SUBCASE("single node") {
    const auto r = delinearize(LinearizedGraph::from_string("( <R0> country )"));
    CHECK(r.graph.nodes.size() == 1);
    CHECK(r.report.clean());
  }
  SUBCASE("truncated") {
    const auto r = delinearize(LinearizedGraph::from_string("( <R0> country :domain ( <R1> it"));
    REQUIRE(r.graph.nodes.size() == 2);
    REQUIRE(r.graph.edges.size() == 1);
    CHECK(r.graph.edges[0].relation == ":domain");
    CHECK(is_valid(r.graph));
    CHECK_FALSE(r.report.clean());
  }
  SUBCASE("garbage never throws") {
    for (const char* text : {"", ")", ":ARG0", "( ( ( :x", "<R3>", "( <R0> a :ARG0 <R0> )", "( <R0> a :ARG0 )"}) {
      const auto r = delinearize(LinearizedGraph::from_string(text));
      CHECK((r.graph.empty() || is_valid(r.graph)));
    }
  }
}

TEST_CASE("round trip over generated graphs") {
  const auto& corpus = test::generated();
  REQUIRE(corpus.size() == 1000);
  for (const auto& r : corpus) {
    const auto back = delinearize(linearize(r.graph));
    CHECK(back.report.clean());
    CHECK(isomorphic(back.graph, r.graph));
  }
}

TEST_CASE("vocabulary") {
  const auto v = Vocabulary::build({"country", ":ARG0", "dog", "country", "<s>"});
  CHECK(v.id("<pad>") == Vocabulary::kPad);
  CHECK(v.id("<mask>") == Vocabulary::kMask);
  CHECK(v.id("(") == Vocabulary::kOpen);
  CHECK(v.id("<R0>") == Vocabulary::kFirstVariable);
  CHECK(v.id(":ARG0") == Vocabulary::kFirstFree);
  CHECK(v.is_relation(v.id(":ARG0")));
  CHECK(v.id("never-seen") == Vocabulary::kUnk);
  CHECK(v.size() == Vocabulary::kFirstFree + 3);
  CHECK(Vocabulary::from_json(v.to_json()) == v);
}

TEST_CASE("corpus records round trip") {
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& r = test::generated()[i];
    CHECK(record_from_json(nlohmann::json::parse(record_to_json(r).dump())) == r);
  }
  auto j = record_to_json(test::country_record());
  j["alignment"].push_back({{"node", "c"}, {"tokens", {40}}});
  CHECK_THROWS_AS(record_from_json(j), Error);
}
