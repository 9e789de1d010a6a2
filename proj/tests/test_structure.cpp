#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "procstruct/error.hpp"
#include "procstruct/process_lm.hpp"
#include "procstruct/structure.hpp"

using namespace procstruct;

namespace {

// Independent reference: split a list of 1-based sentence numbers at the
// first position holding the largest gap, written over value copies.
std::string reference_tree(std::vector<int> ids, std::vector<double> gaps) {
  if (ids.size() == 1) return std::to_string(ids[0]);
  std::size_t cut = 0;
  for (std::size_t k = 1; k < gaps.size(); ++k) {
    if (gaps[k] > gaps[cut]) cut = k;
  }
  std::vector<int> left(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(cut) + 1);
  std::vector<int> right(ids.begin() + static_cast<std::ptrdiff_t>(cut) + 1, ids.end());
  std::vector<double> lg(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<double> rg(gaps.begin() + static_cast<std::ptrdiff_t>(cut) + 1, gaps.end());
  return "(" + reference_tree(left, lg) + " " + reference_tree(right, rg) + ")";
}

std::string reference_tree(const std::vector<double>& gaps) {
  std::vector<int> ids(gaps.size() + 1);
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = static_cast<int>(k) + 1;
  return reference_tree(ids, gaps);
}

DistanceSequence seq(std::vector<double> v) { return {std::move(v), 8}; }

ProcessDoc numbered_doc(std::size_t n, std::vector<std::string> outline = {}) {
  ProcessDoc d;
  d.id = "p";
  for (std::size_t k = 0; k < n; ++k) d.sentences.push_back({"step", "s" + std::to_string(k + 1)});
  d.outline = std::move(outline);
  return d;
}

std::set<std::pair<int, int>> edge_set(const ProcessGraph& g) {
  std::set<std::pair<int, int>> out;
  for (const auto& e : g.edges()) out.emplace(g.nodes()[e.src].id, g.nodes()[e.dst].id);
  return out;
}

bool connected_acyclic(const ProcessGraph& g) {
  const std::size_t n = g.node_count();
  if (g.edge_count() + 1 != n) return false;
  std::vector<int> indegree(n, 0);
  for (const auto& e : g.edges()) ++indegree[e.dst];
  std::size_t roots = 0;
  for (int d : indegree) {
    if (d > 1) return false;
    roots += d == 0;
  }
  if (roots != 1) return false;
  std::vector<bool> seen(n, false);
  std::function<void(std::size_t)> walk = [&](std::size_t v) {
    seen[v] = true;
    for (const auto& e : g.edges()) {
      if (e.src == v && !seen[e.dst]) walk(e.dst);
    }
  };
  for (std::size_t v = 0; v < n; ++v) {
    if (indegree[v] == 0) walk(v);
  }
  for (bool s : seen) {
    if (!s) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("structure_induction") {

TEST_CASE("level distance unit cases") {
  std::vector<std::vector<double>> gates{std::vector<double>(8, 0.3), std::vector<double>(8, 1.0),
                                         std::vector<double>(8, 0.0), std::vector<double>(8, 0.5)};
  DistanceSequence d = level_distance(gates, 8);
  REQUIRE(d.values.size() == 3);
  CHECK(d.values[0] == 0.0);
  CHECK(d.values[1] == 8.0);
  CHECK(d.values[2] == 4.0);
  CHECK_THROWS_AS(level_distance({std::vector<double>(4, 0.0)}, 8), DimensionError);
}

TEST_CASE("greedy tree hand traces") {
  CHECK(greedy_tree(seq({5, 1})).to_string() == "(1 (2 3))");
  CHECK(greedy_tree(seq({1, 1})).to_string() == "(1 (2 3))");
  CHECK(greedy_tree(seq({1, 5})).to_string() == "((1 2) 3)");
  CHECK(greedy_tree(seq({})).to_string() == "1");
  CHECK(greedy_tree(seq({2, 3, 3, 1})).to_string() == "((1 2) (3 (4 5)))");
}

TEST_CASE("greedy tree agrees with the reference on every small sequence") {
  std::size_t count = 0;
  std::function<void(std::vector<double>&)> all = [&](std::vector<double>& v) {
    if (!v.empty()) {
      ++count;
      REQUIRE(greedy_tree(seq(v)).to_string() == reference_tree(v));
    }
    if (v.size() == 5) return;
    for (double x : {1.0, 2.0, 3.0}) {
      v.push_back(x);
      all(v);
      v.pop_back();
    }
  };
  std::vector<double> v;
  all(v);
  CHECK(count == 363);
}

TEST_CASE("greedy tree agrees with the reference on random sequences") {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(static_cast<std::size_t>(rng.range(0, 11)));
    for (auto& x : v) x = rng.uniform(0, 8);
    const ProcessTree t = greedy_tree(seq(v));
    CHECK_NOTHROW(t.validate());
    CHECK(t.leaf_count() == v.size() + 1);
    REQUIRE(t.to_string() == reference_tree(v));
    // Strictly monotone transforms keep the argmax positions.
    std::vector<double> w(v);
    for (auto& x : w) x = std::exp(0.5 * x) - 3.0;
    REQUIRE(greedy_tree(seq(w)).to_string() == t.to_string());
  }
}

TEST_CASE("tree to graph uses left heads") {
  ProcessDoc d = numbered_doc(3);
  CHECK(edge_set(tree_to_graph(ProcessTree::parse("((1 2) 3)"), d)) == std::set<std::pair<int, int>>{{1, 2}, {1, 3}});
  CHECK(edge_set(tree_to_graph(ProcessTree::parse("(1 (2 3))"), d)) == std::set<std::pair<int, int>>{{1, 2}, {2, 3}});
  CHECK_THROWS_AS(tree_to_graph(ProcessTree::parse("(1 2)"), d), ContractError);
}

TEST_CASE("random trees give connected acyclic graphs") {
  Rng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(rng.range(1, 10));
    ProcessTree t = random_tree(n, rng);
    CHECK_NOTHROW(t.validate());
    ProcessGraph g = tree_to_graph(t, numbered_doc(n));
    CHECK(connected_acyclic(g));
  }
}

TEST_CASE("random tree shapes are uniform") {
  // Five shapes over four leaves.
  Rng rng(14);
  std::map<std::string, int> counts;
  const int draws = 20000;
  for (int k = 0; k < draws; ++k) ++counts[random_tree(4, rng).to_string()];
  CHECK(counts.size() == 5);
  for (const auto& [shape, c] : counts) {
    INFO(shape);
    CHECK(std::abs(c - draws / 5) < 400);
  }
}

TEST_CASE("bracket parsing") {
  const ProcessTree t = ProcessTree::parse("((1 2) (3 4))");
  CHECK(t.to_string() == "((1 2) (3 4))");
  CHECK(t.leaf_count() == 4);
  CHECK(ProcessTree::parse("1").to_string() == "1");
  CHECK_THROWS_AS(ProcessTree::parse("(1 3)"), FormatError);
  CHECK_THROWS_AS(ProcessTree::parse("(1 2"), FormatError);
  CHECK_THROWS_AS(ProcessTree::parse("(1)"), FormatError);
  CHECK_THROWS_AS(ProcessTree::parse("(1 2) 3"), FormatError);
}

TEST_CASE("gold tree reproduces the gold edges") {
  ProcessDoc d = numbered_doc(6, {"1", "1.1", "1.2", "1.2.1", "2", "2.1"});
  const ProcessTree t = gold_tree(d);
  CHECK_NOTHROW(t.validate());
  const auto induced = edge_set(tree_to_graph(t, d));
  const auto gold = edge_set(gold_graph(d));
  CHECK(gold == std::set<std::pair<int, int>>{{1, 2}, {1, 3}, {3, 4}, {5, 6}});
  for (const auto& e : gold) CHECK(induced.count(e) == 1);
  // The second top-level step hangs off the first.
  CHECK(induced.count({1, 5}) == 1);
  CHECK_THROWS_AS(gold_tree(numbered_doc(2)), ContractError);
}

TEST_CASE("induction on degenerate models") {
  std::vector<ProcessDoc> corpus{numbered_doc(5)};
  LmConfig c;
  c.encoder_layers = 1;
  c.emb_dim = 4;
  c.hidden = 4;
  c.d_model = 8;
  c.chunk = 2;
  ProcessLm m = ProcessLm::create(c, build_vocabulary(corpus));

  SUBCASE("single sentence") {
    Induction ind = induce(m, numbered_doc(1), 2);
    CHECK(ind.tree.to_string() == "1");
    CHECK(ind.graph.edge_count() == 0);
    CHECK(ind.distances.values.empty());
  }

  SUBCASE("zero parameters give a right-branching chain") {
    for (auto& p : m.named_params()) {
      for (auto& v : p.tensor->values) v = 0.0;
    }
    Induction ind = induce(m, corpus[0], 2);
    for (double d : ind.distances.values) CHECK(d == ind.distances.values[0]);
    CHECK(ind.tree.to_string() == "(1 (2 (3 (4 5))))");
    CHECK(edge_set(ind.graph) == std::set<std::pair<int, int>>{{1, 2}, {2, 3}, {3, 4}, {4, 5}});
  }

  SUBCASE("distances stay within range") {
    for (std::size_t layer = 1; layer <= 3; ++layer) {
      Induction ind = induce(m, corpus[0], layer);
      CHECK(ind.distances.values.size() == 4);
      for (double d : ind.distances.values) {
        CHECK(d >= 0.0);
        CHECK(d <= 8.0);
      }
    }
  }

  SUBCASE("gate layer out of range") {
    CHECK_THROWS_AS(induce(m, corpus[0], 0), ContractError);
    CHECK_THROWS_AS(induce(m, corpus[0], 4), ContractError);
  }
}

TEST_CASE("induced records round trip") {
  ProcessDoc d = numbered_doc(4);
  Induction ind;
  ind.distances = seq({0.1, 1.0 / 3.0, 2.5e-7});
  ind.tree = greedy_tree(ind.distances);
  ind.graph = tree_to_graph(ind.tree, d);
  std::vector<InducedRecord> records{make_record("doc1/p000", ind), make_record("x", Induction{seq({}), ProcessTree::leaf_tree(0), tree_to_graph(ProcessTree::leaf_tree(0), numbered_doc(1))})};
  std::ostringstream out;
  write_induced(out, records);
  std::istringstream in(out.str());
  const auto back = read_induced(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == records[0]);
  CHECK(back[1] == records[1]);
  CHECK(edge_set(record_graph(back[0], d)) == edge_set(ind.graph));
}

TEST_CASE("induced record errors carry line numbers") {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      read_induced(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("tree 1\n") == 1);
  CHECK(line_of("#process a\ntree (1 3)\n") == 2);
  CHECK(line_of("#process a\ntree (1 2)\ndistances 1 2\n") == 3);
  CHECK(line_of("#process a\ntree (1 2)\ndistances 1\n1 => 2\n") == 4);
  CHECK(line_of("#process a\ntree (1 2)\ndistances 1\n1 -> 3\n") == 4);
  CHECK(line_of("#process a\ntree (1 2)\ndistances 1\n\n") == 4);
  CHECK(line_of("#process a\n") == 1);
}

TEST_CASE("evaluation against gold") {
  std::vector<ProcessDoc> docs{numbered_doc(3, {"1", "1.1", "1.2"}), numbered_doc(2), numbered_doc(2, {"1", "2"})};
  std::vector<ProcessGraph> graphs;
  graphs.push_back(gold_graph(docs[0]));
  graphs.push_back(tree_to_graph(ProcessTree::parse("(1 2)"), docs[1]));
  graphs.push_back(gold_graph(docs[2]));
  const CorpusReport r = evaluate_graphs(docs, graphs, {});
  CHECK(r.docs.size() == 2);
  CHECK(r.mean_simged == 1.0);
  CHECK(r.mean_node_rate == 1.0);
  CHECK(r.mean_edge_rate == 1.0);
  CHECK_THROWS_AS(evaluate_graphs({docs[1]}, {graphs[1]}, {}), ContractError);
}

TEST_CASE("random baseline is reproducible") {
  std::vector<ProcessDoc> docs{numbered_doc(5, {"1", "1.1", "1.1.1", "1.2", "2"}),
                               numbered_doc(4, {"1", "1.1", "2", "2.1"})};
  const auto a = random_baseline(docs, 20, 7, {});
  const auto b = random_baseline(docs, 20, 7, {});
  CHECK(a.per_seed.size() == 20);
  CHECK(a.per_seed == b.per_seed);
  CHECK(a.mean > 0.0);
  CHECK(a.mean < 1.0);
}

}  // TEST_SUITE
