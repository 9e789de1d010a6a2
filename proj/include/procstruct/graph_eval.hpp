#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace procstruct {

// Labeled directed graph over sentence nodes. Edges reference node
// positions; no self-loops, no duplicates.
class ProcessGraph {
 public:
  struct Node {
    int id;
    std::string label;
  };
  struct Edge {
    std::size_t src;
    std::size_t dst;
    bool operator==(const Edge&) const = default;
    auto operator<=>(const Edge&) const = default;
  };

  std::size_t add_node(int id, std::string label);
  void add_edge(std::size_t src, std::size_t dst);
  bool has_edge(std::size_t src, std::size_t dst) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  // Predecessors and successors of `n`, sorted, without duplicates.
  std::vector<std::size_t> neighbors(std::size_t n) const;

 private:
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
};

// Dice coefficient of the lowercase, punctuation-free token multisets.
double label_similarity(std::string_view a, std::string_view b);

struct MappedPair {
  std::size_t first;   // node position in G1
  std::size_t second;  // node position in G2
  double label_similarity;
  double context_similarity;
};

struct NodeMapping {
  std::vector<MappedPair> pairs;
  std::vector<int> first_to_second;  // -1 when unmapped
  std::vector<int> second_to_first;

  std::size_t size() const { return pairs.size(); }
  double total_label_similarity() const;
};

// Greedy matching: repeatedly take the most label-similar unmatched pair with
// similarity >= theta. Ties go to the lexicographically smaller label pair,
// then smaller node ids, compared without regard to graph order so the result
// does not depend on which graph comes first. Context similarity of a mapped
// pair is the Dice overlap of their mapped neighbour sets.
NodeMapping map_nodes(const ProcessGraph& g1, const ProcessGraph& g2, double theta);

struct SimWeights {
  double mapping = 0.3;
  double nodes = 0.3;
  double edges = 0.4;

  // Throws ContractError unless all weights are >= 0 and sum to 1.
  void validate() const;
};

struct SimReport {
  double simged = 0.0;
  double sim_m = 0.0;
  double sim_n = 0.0;
  double sim_e = 0.0;
  double m_star = 0.0;
  std::size_t mapped_nodes = 0;
  std::size_t mapped_edges = 0;
};

// Number of G1 edges whose endpoints map onto a G2 edge with the same direction.
std::size_t mapped_edge_count(const ProcessGraph& g1, const ProcessGraph& g2, const NodeMapping& mapping);

SimReport simged(const ProcessGraph& g1, const ProcessGraph& g2, const NodeMapping& mapping,
                 const SimWeights& weights);
SimReport simged(const ProcessGraph& g1, const ProcessGraph& g2, const SimWeights& weights, double theta);

struct MatchRates {
  double node_rate = 0.0;
  double edge_rate = 0.0;
};

MatchRates match_rates(const ProcessGraph& g1, const ProcessGraph& g2, const NodeMapping& mapping);

// Drops nodes of `gold` that the mapping leaves unmatched, with their edges.
ProcessGraph filter_unmatched(const ProcessGraph& gold, const NodeMapping& mapping);

struct DocScore {
  std::string id;
  std::size_t nodes = 0;  // gold node count
  std::size_t edges = 0;  // gold edge count
  double node_rate = 0.0;
  double edge_rate = 0.0;
  double simged = 0.0;
};

struct CorpusReport {
  std::vector<DocScore> docs;
  double mean_node_rate = 0.0;
  double mean_edge_rate = 0.0;
  double mean_simged = 0.0;
};

struct EvalOptions {
  SimWeights weights;
  double theta = 0.5;
  bool filter_unmatched = false;
};

DocScore score_pair(const std::string& id, const ProcessGraph& gold, const ProcessGraph& induced,
                    const EvalOptions& options);
// Means are taken in document order.
CorpusReport aggregate(std::vector<DocScore> docs);

void write_report_table(std::ostream& out, const CorpusReport& report);
void write_report_csv(std::ostream& out, const CorpusReport& report);

}  // namespace procstruct
