#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "procstruct/corpus.hpp"
#include "procstruct/graph_eval.hpp"
#include "procstruct/on_lstm.hpp"
#include "procstruct/rng.hpp"

namespace procstruct {

struct ProcessLm;

// values[k] is the distance between sentences k and k+1 (0-based), so a
// process of L sentences has L-1 entries, each in [0, d_model].
struct DistanceSequence {
  std::vector<double> values;
  std::size_t d_model = 0;
};

// d_l = D - sum_k ftilde_lk for every step after the first. `master_forget`
// holds one expanded gate vector per step.
DistanceSequence level_distance(const std::vector<std::vector<double>>& master_forget, std::size_t d_model);
// Same, reading layer `layer` (0-based) of a forward run.
DistanceSequence level_distance(const Tape& tape, const OnLstmRun& run, std::size_t layer);

// Binary tree over sentences 0..L-1 in order.
class ProcessTree {
 public:
  struct Node {
    int left = -1;   // child node positions; -1 for leaves
    int right = -1;
    int leaf = -1;   // sentence index for leaves
    double split = 0.0;  // distance at which an internal node was split
    bool is_leaf() const { return leaf >= 0; }
  };

  ProcessTree() = default;
  static ProcessTree leaf_tree(int sentence);

  int add_leaf(int sentence);
  int add_internal(int left, int right, double split = 0.0);
  void set_root(int root) { root_ = root; }

  int root() const { return root_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  std::size_t leaf_count() const;

  // Throws ContractError unless every internal node has two children, the
  // tree is connected from the root, and leaves read 0..L-1 left to right.
  void validate() const;

  // Bracketed form with 1-based sentence numbers, e.g. "(1 (2 3))"; a
  // single-sentence tree prints as "1".
  std::string to_string() const;
  static ProcessTree parse(const std::string& text);

  // Structural equality (split values ignored).
  bool same_shape(const ProcessTree& other) const;

 private:
  std::vector<Node> nodes_;
  int root_ = -1;
};

// Top-down: split span [a, b] before the position with the largest distance,
// leftmost on ties.
ProcessTree greedy_tree(const DistanceSequence& d);

// Head of a subtree is the head of its left child; each internal node adds
// the edge head(left) -> head(right). Node ids are 1-based sentence numbers.
ProcessGraph tree_to_graph(const ProcessTree& tree, const ProcessDoc& doc);
// Gold hierarchy as parent -> child edges.
ProcessGraph gold_graph(const ProcessDoc& doc);
// A binary tree whose left-head graph equals gold_graph(doc) on the gold
// parent -> child edges; siblings after the first top-level node hang off it.
ProcessTree gold_tree(const ProcessDoc& doc);

// Uniformly random binary tree shape over L leaves.
ProcessTree random_tree(std::size_t leaves, Rng& rng);

struct Induction {
  DistanceSequence distances;
  ProcessTree tree;
  ProcessGraph graph;
};

// `gate_layer` is 1-based.
Induction induce(const ProcessLm& model, const ProcessDoc& doc, std::size_t gate_layer);

struct InducedRecord {
  std::string id;
  ProcessTree tree;
  std::vector<double> distances;
  std::vector<std::pair<int, int>> edges;  // 1-based sentence numbers

  bool operator==(const InducedRecord&) const;
};

InducedRecord make_record(const std::string& id, const Induction& induction);
void write_induced(std::ostream& out, const std::vector<InducedRecord>& records);
std::vector<InducedRecord> read_induced(std::istream& in);
// Graph of a record, labelled with the sentences of `doc`.
ProcessGraph record_graph(const InducedRecord& record, const ProcessDoc& doc);

// Scores every document that has gold structure; documents without gold are
// skipped. Throws when none has gold.
CorpusReport evaluate_graphs(const std::vector<ProcessDoc>& docs, const std::vector<ProcessGraph>& induced,
                             const EvalOptions& options);

// Mean corpus simged of uniformly random trees, averaged over `seeds` runs.
struct BaselineResult {
  std::vector<double> per_seed;
  double mean = 0.0;
};
BaselineResult random_baseline(const std::vector<ProcessDoc>& docs, std::size_t seeds, std::uint64_t seed,
                               const EvalOptions& options);

}  // namespace procstruct
