#include "procstruct/graph_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <tuple>

#include "procstruct/corpus.hpp"
#include "procstruct/error.hpp"

namespace procstruct {

std::size_t ProcessGraph::add_node(int id, std::string label) {
  nodes_.push_back({id, std::move(label)});
  return nodes_.size() - 1;
}

void ProcessGraph::add_edge(std::size_t src, std::size_t dst) {
  if (src >= nodes_.size() || dst >= nodes_.size()) throw ContractError("edge endpoint does not exist");
  if (src == dst) throw ContractError("self-loop on node " + std::to_string(nodes_[src].id));
  if (has_edge(src, dst)) {
    throw ContractError("duplicate edge " + std::to_string(nodes_[src].id) + " -> " + std::to_string(nodes_[dst].id));
  }
  edges_.push_back({src, dst});
}

bool ProcessGraph::has_edge(std::size_t src, std::size_t dst) const {
  return std::find(edges_.begin(), edges_.end(), Edge{src, dst}) != edges_.end();
}

std::vector<std::size_t> ProcessGraph::neighbors(std::size_t n) const {
  std::vector<std::size_t> out;
  for (const auto& e : edges_) {
    if (e.src == n) out.push_back(e.dst);
    if (e.dst == n) out.push_back(e.src);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double label_similarity(std::string_view a, std::string_view b) {
  auto ta = tokenize(a);
  auto tb = tokenize(b);
  if (ta.empty() && tb.empty()) return 1.0;
  std::sort(ta.begin(), ta.end());
  std::sort(tb.begin(), tb.end());
  std::vector<std::string> common;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
  return 2.0 * static_cast<double>(common.size()) / static_cast<double>(ta.size() + tb.size());
}

double NodeMapping::total_label_similarity() const {
  double total = 0.0;
  for (const auto& p : pairs) total += p.label_similarity;
  return total;
}

namespace {

double dice(std::vector<std::size_t> a, std::vector<std::size_t> b) {
  if (a.empty() && b.empty()) return 1.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  return 2.0 * static_cast<double>(common.size()) / static_cast<double>(a.size() + b.size());
}

}  // namespace

NodeMapping map_nodes(const ProcessGraph& g1, const ProcessGraph& g2, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ContractError("theta must be in [0, 1]");
  struct Candidate {
    double sim;
    std::size_t i, j;
    std::tuple<const std::string*, const std::string*, int, int> order_key;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < g1.node_count(); ++i) {
    for (std::size_t j = 0; j < g2.node_count(); ++j) {
      const auto& a = g1.nodes()[i];
      const auto& b = g2.nodes()[j];
      const double s = label_similarity(a.label, b.label);
      if (s < theta) continue;
      const bool a_first = a.label <= b.label;
      candidates.push_back({s, i, j,
                            {a_first ? &a.label : &b.label, a_first ? &b.label : &a.label, std::min(a.id, b.id),
                             std::max(a.id, b.id)}});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
    if (x.sim != y.sim) return x.sim > y.sim;
    const auto& [xl1, xl2, xi1, xi2] = x.order_key;
    const auto& [yl1, yl2, yi1, yi2] = y.order_key;
    if (*xl1 != *yl1) return *xl1 < *yl1;
    if (*xl2 != *yl2) return *xl2 < *yl2;
    return std::tie(xi1, xi2) < std::tie(yi1, yi2);
  });

  NodeMapping m;
  m.first_to_second.assign(g1.node_count(), -1);
  m.second_to_first.assign(g2.node_count(), -1);
  for (const auto& c : candidates) {
    if (m.first_to_second[c.i] >= 0 || m.second_to_first[c.j] >= 0) continue;
    m.first_to_second[c.i] = static_cast<int>(c.j);
    m.second_to_first[c.j] = static_cast<int>(c.i);
    m.pairs.push_back({c.i, c.j, c.sim, 0.0});
  }

  for (auto& p : m.pairs) {
    std::vector<std::size_t> n1, n2;
    for (auto v : g1.neighbors(p.first)) {
      if (m.first_to_second[v] >= 0) n1.push_back(static_cast<std::size_t>(m.first_to_second[v]));
    }
    for (auto v : g2.neighbors(p.second)) {
      if (m.second_to_first[v] >= 0) n2.push_back(v);
    }
    p.context_similarity = dice(std::move(n1), std::move(n2));
  }
  return m;
}

void SimWeights::validate() const {
  if (mapping < 0 || nodes < 0 || edges < 0) throw ContractError("similarity weights must be non-negative");
  if (std::abs(mapping + nodes + edges - 1.0) > 1e-9) throw ContractError("similarity weights must sum to 1");
}

std::size_t mapped_edge_count(const ProcessGraph& g1, const ProcessGraph& g2, const NodeMapping& mapping) {
  std::size_t count = 0;
  for (const auto& e : g1.edges()) {
    const int s = mapping.first_to_second[e.src];
    const int d = mapping.first_to_second[e.dst];
    if (s >= 0 && d >= 0 && g2.has_edge(static_cast<std::size_t>(s), static_cast<std::size_t>(d))) ++count;
  }
  return count;
}

SimReport simged(const ProcessGraph& g1, const ProcessGraph& g2, const NodeMapping& mapping,
                 const SimWeights& weights) {
  weights.validate();
  SimReport r;
  const std::size_t n_total = g1.node_count() + g2.node_count();
  if (n_total == 0) {
    r.simged = 1.0;
    return r;
  }
  r.mapped_nodes = mapping.size();
  r.mapped_edges = mapped_edge_count(g1, g2, mapping);
  if (mapping.size() == 0) {
    r.m_star = 1.0;
    r.sim_m = 1.0;
  } else {
    for (const auto& p : mapping.pairs) r.m_star += 1.0 - p.context_similarity;
    r.sim_m = r.m_star / static_cast<double>(mapping.size());
  }
  r.sim_n = static_cast<double>(n_total - 2 * mapping.size()) / static_cast<double>(n_total);
  const std::size_t e_total = g1.edge_count() + g2.edge_count();
  r.sim_e = e_total == 0 ? 0.0
                         : static_cast<double>(e_total - 2 * r.mapped_edges) / static_cast<double>(e_total);
  r.simged = 1.0 - (weights.mapping * r.sim_m + weights.nodes * r.sim_n + weights.edges * r.sim_e);
  r.simged = std::clamp(r.simged, 0.0, 1.0);
  return r;
}

SimReport simged(const ProcessGraph& g1, const ProcessGraph& g2, const SimWeights& weights, double theta) {
  return simged(g1, g2, map_nodes(g1, g2, theta), weights);
}

MatchRates match_rates(const ProcessGraph& g1, const ProcessGraph& g2, const NodeMapping& mapping) {
  MatchRates r;
  const std::size_t n_total = g1.node_count() + g2.node_count();
  const std::size_t e_total = g1.edge_count() + g2.edge_count();
  r.node_rate = n_total == 0 ? 1.0 : 2.0 * static_cast<double>(mapping.size()) / static_cast<double>(n_total);
  r.edge_rate = e_total == 0 ? 1.0
                             : 2.0 * static_cast<double>(mapped_edge_count(g1, g2, mapping)) /
                                   static_cast<double>(e_total);
  return r;
}

ProcessGraph filter_unmatched(const ProcessGraph& gold, const NodeMapping& mapping) {
  ProcessGraph out;
  std::vector<int> remap(gold.node_count(), -1);
  for (std::size_t i = 0; i < gold.node_count(); ++i) {
    if (mapping.first_to_second[i] < 0) continue;
    remap[i] = static_cast<int>(out.add_node(gold.nodes()[i].id, gold.nodes()[i].label));
  }
  for (const auto& e : gold.edges()) {
    if (remap[e.src] >= 0 && remap[e.dst] >= 0) {
      out.add_edge(static_cast<std::size_t>(remap[e.src]), static_cast<std::size_t>(remap[e.dst]));
    }
  }
  return out;
}

DocScore score_pair(const std::string& id, const ProcessGraph& gold, const ProcessGraph& induced,
                    const EvalOptions& options) {
  NodeMapping mapping = map_nodes(gold, induced, options.theta);
  const ProcessGraph* g = &gold;
  ProcessGraph filtered;
  if (options.filter_unmatched) {
    filtered = filter_unmatched(gold, mapping);
    mapping = map_nodes(filtered, induced, options.theta);
    g = &filtered;
  }
  const auto rates = match_rates(*g, induced, mapping);
  const auto sim = simged(*g, induced, mapping, options.weights);
  return {id, gold.node_count(), gold.edge_count(), rates.node_rate, rates.edge_rate, sim.simged};
}

CorpusReport aggregate(std::vector<DocScore> docs) {
  if (docs.empty()) throw ContractError("cannot aggregate an empty evaluation");
  CorpusReport r;
  for (const auto& d : docs) {
    r.mean_node_rate += d.node_rate;
    r.mean_edge_rate += d.edge_rate;
    r.mean_simged += d.simged;
  }
  const auto n = static_cast<double>(docs.size());
  r.mean_node_rate /= n;
  r.mean_edge_rate /= n;
  r.mean_simged /= n;
  r.docs = std::move(docs);
  return r;
}

void write_report_table(std::ostream& out, const CorpusReport& report) {
  std::size_t width = 6;
  for (const auto& d : report.docs) width = std::max(width, d.id.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %6s %6s %9s %9s %9s\n", static_cast<int>(width), "doc_id", "nodes", "edges",
                "node_rate", "edge_rate", "simged");
  out << buf;
  for (const auto& d : report.docs) {
    std::snprintf(buf, sizeof buf, "%-*s %6zu %6zu %9.4f %9.4f %9.4f\n", static_cast<int>(width), d.id.c_str(),
                  d.nodes, d.edges, d.node_rate, d.edge_rate, d.simged);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s %6s %6s %9.4f %9.4f %9.4f\n", static_cast<int>(width), "mean", "", "",
                report.mean_node_rate, report.mean_edge_rate, report.mean_simged);
  out << buf;
}

void write_report_csv(std::ostream& out, const CorpusReport& report) {
  char buf[256];
  out << "doc_id,nodes,edges,node_rate,edge_rate,simged\n";
  for (const auto& d : report.docs) {
    std::snprintf(buf, sizeof buf, ",%zu,%zu,%.6f,%.6f,%.6f\n", d.nodes, d.edges, d.node_rate, d.edge_rate,
                  d.simged);
    out << d.id << buf;
  }
  std::snprintf(buf, sizeof buf, ",,,%.6f,%.6f,%.6f\n", report.mean_node_rate, report.mean_edge_rate,
                report.mean_simged);
  out << "mean" << buf;
}

}  // namespace procstruct
