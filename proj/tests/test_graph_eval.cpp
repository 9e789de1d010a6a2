#include <doctest.h>

#include <cmath>
#include <sstream>

#include "procstruct/error.hpp"
#include "procstruct/graph_eval.hpp"
#include "procstruct/rng.hpp"

using namespace procstruct;

namespace {

ProcessGraph graph(const std::vector<std::string>& labels, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  ProcessGraph g;
  for (std::size_t k = 0; k < labels.size(); ++k) g.add_node(static_cast<int>(k) + 1, labels[k]);
  for (auto [a, b] : edges) g.add_edge(a, b);
  return g;
}

// Labels drawn from a small word pool so that partial overlaps are common.
ProcessGraph random_graph(Rng& rng, std::size_t max_nodes) {
  static const char* const words[] = {"open", "form", "check", "send", "mail", "close", "file", "save"};
  const auto n = static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(max_nodes)));
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < n; ++k) {
    std::string label;
    const auto len = rng.range(1, 3);
    for (std::int64_t w = 0; w < len; ++w) label += std::string(w ? " " : "") + words[rng.range(0, 7)];
    labels.push_back(label);
  }
  ProcessGraph g = graph(labels, {});
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a != b && rng.bernoulli(0.2)) g.add_edge(a, b);
    }
  }
  return g;
}

// Exhaustive optimal assignment over pairs with similarity >= theta, by a
// bitmask dynamic programme over the second graph's nodes.
double optimal_assignment(const ProcessGraph& g1, const ProcessGraph& g2, double theta) {
  const std::size_t n1 = g1.node_count(), n2 = g2.node_count();
  std::vector<double> best(std::size_t{1} << n2, -1.0);
  best[0] = 0.0;
  for (std::size_t i = 0; i < n1; ++i) {
    std::vector<double> next(best);
    for (std::size_t mask = 0; mask < best.size(); ++mask) {
      if (best[mask] < 0) continue;
      for (std::size_t j = 0; j < n2; ++j) {
        if (mask & (std::size_t{1} << j)) continue;
        const double s = label_similarity(g1.nodes()[i].label, g2.nodes()[j].label);
        if (s < theta) continue;
        auto& slot = next[mask | (std::size_t{1} << j)];
        slot = std::max(slot, best[mask] + s);
      }
    }
    best = std::move(next);
  }
  double out = 0.0;
  for (double v : best) out = std::max(out, v);
  return out;
}

}  // namespace

TEST_SUITE("graph_eval") {

TEST_CASE("label similarity") {
  CHECK(label_similarity("create purchase order", "create the purchase order") == doctest::Approx(6.0 / 7.0));
  CHECK(label_similarity("Send the mail.", "send the mail") == 1.0);
  CHECK(label_similarity("open form", "close file") == 0.0);
  CHECK(label_similarity("", "") == 1.0);
}

TEST_CASE("graph invariants") {
  ProcessGraph g = graph({"a", "b"}, {{0, 1}});
  CHECK_THROWS_AS(g.add_edge(0, 1), ContractError);
  CHECK_THROWS_AS(g.add_edge(1, 1), ContractError);
  CHECK_THROWS(g.add_edge(0, 5));
  CHECK(g.neighbors(1) == std::vector<std::size_t>{0});
}

TEST_CASE("mapping identical and disjoint graphs") {
  ProcessGraph g = graph({"open form", "fill name", "save"}, {{0, 1}, {1, 2}});
  NodeMapping m = map_nodes(g, g, 0.5);
  CHECK(m.size() == 3);
  for (const auto& p : m.pairs) {
    CHECK(p.first == p.second);
    CHECK(p.context_similarity == 1.0);
  }
  ProcessGraph h = graph({"close file", "send mail"}, {{0, 1}});
  CHECK(map_nodes(g, h, 0.5).size() == 0);
}

TEST_CASE("simged examples") {
  ProcessGraph g = graph({"open form", "fill name", "save"}, {{0, 1}, {1, 2}});
  const SimWeights w;
  CHECK(simged(g, g, w, 0.5).simged == 1.0);
  ProcessGraph h = graph({"close file", "send mail"}, {{0, 1}});
  const SimReport r = simged(g, h, w, 0.5);
  CHECK(r.simged == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.sim_m == 1.0);

  // s1 -> s2, s1 -> s3 against s1 -> s2, s2 -> s3. Mapped neighbour sets:
  // s1 {2,3} vs {2}: 2/3; s2 {1} vs {1,3}: 2/3; s3 {1} vs {2}: 0.
  // m* = 1/3 + 1/3 + 1 = 5/3, sim_M = 5/9, sim_E = 2/4.
  ProcessGraph a = graph({"s1", "s2", "s3"}, {{0, 1}, {0, 2}});
  ProcessGraph b = graph({"s1", "s2", "s3"}, {{0, 1}, {1, 2}});
  const SimReport t = simged(a, b, w, 0.5);
  CHECK(t.sim_n == 0.0);
  CHECK(t.sim_e == doctest::Approx(0.5));
  CHECK(t.m_star == doctest::Approx(5.0 / 3.0));
  CHECK(t.sim_m == doctest::Approx(5.0 / 9.0));
  CHECK(t.simged == doctest::Approx(1.0 - (0.3 * 5.0 / 9.0 + 0.4 * 0.5)));
}

TEST_CASE("empty graphs") {
  ProcessGraph e;
  CHECK(simged(e, e, SimWeights{}, 0.5).simged == 1.0);
  const MatchRates r = match_rates(e, e, map_nodes(e, e, 0.5));
  CHECK(r.node_rate == 1.0);
  CHECK(r.edge_rate == 1.0);
  // edgeless and label-disjoint: sim_E is 0 by convention, so only w1 + w2 count
  ProcessGraph x = graph({"open form"}, {}), y = graph({"send mail"}, {});
  CHECK(simged(x, y, SimWeights{}, 0.5).simged == doctest::Approx(0.4));
}

TEST_CASE("match rates") {
  ProcessGraph g = graph({"open form", "fill name", "save"}, {{0, 1}, {1, 2}});
  MatchRates same = match_rates(g, g, map_nodes(g, g, 0.5));
  CHECK(same.node_rate == 1.0);
  CHECK(same.edge_rate == 1.0);
  ProcessGraph h = graph({"close file", "send mail"}, {{0, 1}});
  MatchRates none = match_rates(g, h, map_nodes(g, h, 0.5));
  CHECK(none.node_rate == 0.0);
  CHECK(none.edge_rate == 0.0);
  // Adding a correctly mapped edge to both graphs never lowers the edge rate.
  ProcessGraph a = graph({"a", "b", "c"}, {{0, 1}});
  ProcessGraph b = graph({"a", "b", "c"}, {{1, 2}});
  const double before = match_rates(a, b, map_nodes(a, b, 0.5)).edge_rate;
  a.add_edge(0, 2);
  b.add_edge(0, 2);
  CHECK(match_rates(a, b, map_nodes(a, b, 0.5)).edge_rate >= before);
}

TEST_CASE("weights must be a convex combination") {
  CHECK_NOTHROW(SimWeights{}.validate());
  CHECK_THROWS_AS((SimWeights{0.5, 0.5, 0.5}.validate()), ContractError);
  CHECK_THROWS_AS((SimWeights{-0.1, 0.7, 0.4}.validate()), ContractError);
}

TEST_CASE("random pairs: range, symmetry, injectivity, threshold") {
  Rng rng(41);
  for (int trial = 0; trial < 500; ++trial) {
    ProcessGraph g1 = random_graph(rng, 12), g2 = random_graph(rng, 12);
    const NodeMapping m = map_nodes(g1, g2, 0.5);
    std::vector<int> used(g2.node_count(), 0);
    for (const auto& p : m.pairs) {
      REQUIRE(p.label_similarity >= 0.5);
      REQUIRE(++used[p.second] == 1);
      REQUIRE(m.first_to_second[p.first] == static_cast<int>(p.second));
      REQUIRE(m.second_to_first[p.second] == static_cast<int>(p.first));
    }
    const double s12 = simged(g1, g2, SimWeights{}, 0.5).simged;
    const double s21 = simged(g2, g1, SimWeights{}, 0.5).simged;
    REQUIRE(s12 >= 0.0);
    REQUIRE(s12 <= 1.0);
    REQUIRE(std::abs(s12 - s21) < 1e-12);
    const MatchRates r = match_rates(g1, g2, m);
    REQUIRE(r.node_rate >= 0.0);
    REQUIRE(r.node_rate <= 1.0);
    REQUIRE(r.edge_rate >= 0.0);
    REQUIRE(r.edge_rate <= 1.0);
  }
}

TEST_CASE("greedy mapping is at least half the optimal assignment") {
  Rng rng(42);
  for (int trial = 0; trial < 500; ++trial) {
    ProcessGraph g1 = random_graph(rng, 8), g2 = random_graph(rng, 8);
    const double greedy = map_nodes(g1, g2, 0.5).total_label_similarity();
    const double best = optimal_assignment(g1, g2, 0.5);
    REQUIRE(greedy <= best + 1e-12);
    REQUIRE(greedy >= 0.5 * best - 1e-12);
  }
}

TEST_CASE("filtering unmatched gold nodes") {
  ProcessGraph gold = graph({"open form", "noise here", "save"}, {{0, 1}, {0, 2}});
  ProcessGraph induced = graph({"open form", "save"}, {{0, 1}});
  NodeMapping m = map_nodes(gold, induced, 0.5);
  ProcessGraph f = filter_unmatched(gold, m);
  CHECK(f.node_count() == 2);
  CHECK(f.edge_count() == 1);
  EvalOptions o;
  o.filter_unmatched = true;
  CHECK(score_pair("x", gold, induced, o).simged == 1.0);
  CHECK(score_pair("x", gold, induced, {}).simged < 1.0);
}

TEST_CASE("aggregation and reports") {
  ProcessGraph g = graph({"a", "b"}, {{0, 1}});
  DocScore one = score_pair("only", g, g, {});
  CorpusReport r = aggregate({one});
  CHECK(r.mean_simged == one.simged);
  CHECK(r.mean_node_rate == one.node_rate);
  CHECK(r.mean_edge_rate == one.edge_rate);
  std::ostringstream csv;
  write_report_csv(csv, r);
  CHECK(csv.str() == "doc_id,nodes,edges,node_rate,edge_rate,simged\nonly,2,1,1.000000,1.000000,1.000000\n"
                     "mean,,,1.000000,1.000000,1.000000\n");
  std::ostringstream table;
  write_report_table(table, r);
  CHECK(table.str().find("mean") != std::string::npos);
  CHECK_THROWS(aggregate({}));
}

}  // TEST_SUITE
