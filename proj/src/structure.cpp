#include "procstruct/structure.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>

#include "procstruct/error.hpp"
#include "procstruct/parallel.hpp"
#include "procstruct/process_lm.hpp"

namespace procstruct {

// ---------------------------------------------------------------------------
// Level distance

DistanceSequence level_distance(const std::vector<std::vector<double>>& master_forget, std::size_t d_model) {
  DistanceSequence d;
  d.d_model = d_model;
  for (std::size_t l = 0; l < master_forget.size(); ++l) {
    if (master_forget[l].size() != d_model) {
      throw DimensionError("master forget gate at step " + std::to_string(l) + " has " +
                           std::to_string(master_forget[l].size()) + " entries, expected " + std::to_string(d_model));
    }
    if (l == 0) continue;
    double mass = 0.0;
    for (double g : master_forget[l]) mass += g;
    d.values.push_back(std::clamp(static_cast<double>(d_model) - mass, 0.0, static_cast<double>(d_model)));
  }
  return d;
}

DistanceSequence level_distance(const Tape& tape, const OnLstmRun& run, std::size_t layer) {
  if (layer >= run.steps.size()) {
    throw ContractError("gate layer " + std::to_string(layer + 1) + " out of range (model has " +
                        std::to_string(run.steps.size()) + " layers)");
  }
  std::vector<std::vector<double>> gates;
  std::size_t d_model = 0;
  for (const auto& step : run.steps[layer]) {
    auto v = tape.value(step.master_forget);
    gates.emplace_back(v.begin(), v.end());
    d_model = v.size();
  }
  return level_distance(gates, d_model);
}

// ---------------------------------------------------------------------------
// Trees

ProcessTree ProcessTree::leaf_tree(int sentence) {
  ProcessTree t;
  t.set_root(t.add_leaf(sentence));
  return t;
}

int ProcessTree::add_leaf(int sentence) {
  Node n;
  n.leaf = sentence;
  nodes_.push_back(n);
  return static_cast<int>(nodes_.size()) - 1;
}

int ProcessTree::add_internal(int left, int right, double split) {
  Node n;
  n.left = left;
  n.right = right;
  n.split = split;
  nodes_.push_back(n);
  return static_cast<int>(nodes_.size()) - 1;
}

std::size_t ProcessTree::leaf_count() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.is_leaf(); }));
}

void ProcessTree::validate() const {
  if (root_ < 0 || static_cast<std::size_t>(root_) >= nodes_.size()) throw ContractError("tree has no root");
  std::vector<int> seen(nodes_.size(), 0);
  int next_leaf = 0;
  std::function<void(int)> walk = [&](int i) {
    if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size()) throw ContractError("tree child out of range");
    if (seen[static_cast<std::size_t>(i)]++) throw ContractError("tree node reached twice");
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.is_leaf()) {
      if (n.left >= 0 || n.right >= 0) throw ContractError("leaf with children");
      if (n.leaf != next_leaf) {
        throw ContractError("leaf " + std::to_string(n.leaf + 1) + " out of order, expected " +
                            std::to_string(next_leaf + 1));
      }
      ++next_leaf;
      return;
    }
    if (n.left < 0 || n.right < 0) throw ContractError("internal node without two children");
    walk(n.left);
    walk(n.right);
  };
  walk(root_);
  if (std::count(seen.begin(), seen.end(), 0) != 0) throw ContractError("tree has unreachable nodes");
}

std::string ProcessTree::to_string() const {
  std::string out;
  std::function<void(int)> emit = [&](int i) {
    const Node& n = node(i);
    if (n.is_leaf()) {
      out += std::to_string(n.leaf + 1);
      return;
    }
    out += '(';
    emit(n.left);
    out += ' ';
    emit(n.right);
    out += ')';
  };
  if (root_ >= 0) emit(root_);
  return out;
}

ProcessTree ProcessTree::parse(const std::string& text) {
  ProcessTree t;
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < text.size() && text[pos] == ' ') ++pos;
  };
  auto fail = [&](const std::string& what) -> ProcessTree {
    throw FormatError("tree '" + text + "': " + what + " at column " + std::to_string(pos + 1));
  };
  std::function<int()> parse_node = [&]() -> int {
    skip();
    if (pos >= text.size()) fail("unexpected end");
    if (text[pos] == '(') {
      ++pos;
      const int left = parse_node();
      skip();
      if (pos >= text.size() || text[pos] == ')') fail("internal node needs two children");
      const int right = parse_node();
      skip();
      if (pos >= text.size() || text[pos] != ')') fail("expected ')'");
      ++pos;
      return t.add_internal(left, right);
    }
    int value = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + text.size(), value);
    if (ec != std::errc() || value < 1) fail("expected a sentence number");
    pos = static_cast<std::size_t>(ptr - text.data());
    return t.add_leaf(value - 1);
  };
  t.set_root(parse_node());
  skip();
  if (pos != text.size()) fail("trailing characters");
  try {
    t.validate();
  } catch (const ContractError& e) {
    throw FormatError("tree '" + text + "': " + e.what());
  }
  return t;
}

bool ProcessTree::same_shape(const ProcessTree& other) const { return to_string() == other.to_string(); }

ProcessTree greedy_tree(const DistanceSequence& d) {
  const std::size_t L = d.values.size() + 1;
  ProcessTree t;
  // Span [a, b] of sentence indices; d.values[l - 1] separates l - 1 and l.
  std::function<int(std::size_t, std::size_t)> build = [&](std::size_t a, std::size_t b) -> int {
    if (a == b) return t.add_leaf(static_cast<int>(a));
    std::size_t best = a + 1;
    for (std::size_t l = a + 2; l <= b; ++l) {
      if (d.values[l - 1] > d.values[best - 1]) best = l;
    }
    const int left = build(a, best - 1);
    const int right = build(best, b);
    return t.add_internal(left, right, d.values[best - 1]);
  };
  t.set_root(build(0, L - 1));
  return t;
}

namespace {

int head_of(const ProcessTree& t, int i) {
  while (!t.node(i).is_leaf()) i = t.node(i).left;
  return t.node(i).leaf;
}

ProcessGraph sentence_nodes(const ProcessDoc& doc) {
  ProcessGraph g;
  for (std::size_t i = 0; i < doc.size(); ++i) g.add_node(static_cast<int>(i) + 1, doc.text(i));
  return g;
}

}  // namespace

ProcessGraph tree_to_graph(const ProcessTree& tree, const ProcessDoc& doc) {
  tree.validate();
  if (tree.leaf_count() != doc.size()) {
    throw ContractError("tree has " + std::to_string(tree.leaf_count()) + " leaves but process '" + doc.id + "' has " +
                        std::to_string(doc.size()) + " sentences");
  }
  ProcessGraph g = sentence_nodes(doc);
  for (std::size_t i = 0; i < tree.nodes().size(); ++i) {
    const auto& n = tree.nodes()[i];
    if (n.is_leaf()) continue;
    g.add_edge(static_cast<std::size_t>(head_of(tree, n.left)), static_cast<std::size_t>(head_of(tree, n.right)));
  }
  return g;
}

ProcessGraph gold_graph(const ProcessDoc& doc) {
  if (!doc.has_gold()) throw ContractError("process '" + doc.id + "' has no gold hierarchy");
  ProcessGraph g = sentence_nodes(doc);
  const auto parents = doc.parents();
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (parents[i] >= 0) g.add_edge(static_cast<std::size_t>(parents[i]), i);
  }
  return g;
}

ProcessTree gold_tree(const ProcessDoc& doc) {
  if (!doc.has_gold()) throw ContractError("process '" + doc.id + "' has no gold hierarchy");
  const auto parents = doc.parents();
  std::vector<std::vector<int>> children(parents.size());
  std::vector<int> roots;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    (parents[i] < 0 ? roots : children[static_cast<std::size_t>(parents[i])]).push_back(static_cast<int>(i));
  }
  ProcessTree t;
  std::function<int(int)> build = [&](int s) {
    int cur = t.add_leaf(s);
    for (int c : children[static_cast<std::size_t>(s)]) cur = t.add_internal(cur, build(c));
    return cur;
  };
  int cur = build(roots.front());
  for (std::size_t r = 1; r < roots.size(); ++r) cur = t.add_internal(cur, build(roots[r]));
  t.set_root(cur);
  return t;
}

ProcessTree random_tree(std::size_t leaves, Rng& rng) {
  if (leaves == 0) throw ContractError("a tree needs at least one leaf");
  // catalan[n] counts shapes with n + 1 leaves.
  std::vector<double> catalan(leaves, 1.0);
  for (std::size_t n = 1; n < leaves; ++n) {
    catalan[n] = 0.0;
    for (std::size_t k = 0; k < n; ++k) catalan[n] += catalan[k] * catalan[n - 1 - k];
  }
  ProcessTree t;
  std::function<int(std::size_t, std::size_t)> build = [&](std::size_t a, std::size_t n) -> int {
    if (n == 1) return t.add_leaf(static_cast<int>(a));
    double u = rng.uniform() * catalan[n - 1];
    std::size_t left = 1;
    for (; left < n - 1; ++left) {
      u -= catalan[left - 1] * catalan[n - left - 1];
      if (u < 0.0) break;
    }
    const int l = build(a, left);
    const int r = build(a + left, n - left);
    return t.add_internal(l, r);
  };
  t.set_root(build(0, leaves));
  return t;
}

// ---------------------------------------------------------------------------
// Induction

Induction induce(const ProcessLm& model, const ProcessDoc& doc, std::size_t gate_layer) {
  if (gate_layer < 1 || gate_layer > model.onlstm.size()) {
    throw ContractError("gate layer " + std::to_string(gate_layer) + " out of range 1.." +
                        std::to_string(model.onlstm.size()));
  }
  if (doc.size() == 0) throw ContractError("process '" + doc.id + "' is empty");
  Tape tape;
  const auto processed = context_inputs(tape, model, model.encode(doc));
  OnLstmOptions options;
  options.master_input = model.config.master_input;
  const OnLstmRun run = on_lstm_forward(tape, processed, model.onlstm, options);
  Induction out;
  out.distances = level_distance(tape, run, gate_layer - 1);
  out.tree = greedy_tree(out.distances);
  out.graph = tree_to_graph(out.tree, doc);
  return out;
}

bool InducedRecord::operator==(const InducedRecord& o) const {
  return id == o.id && tree.same_shape(o.tree) && distances == o.distances && edges == o.edges;
}

InducedRecord make_record(const std::string& id, const Induction& induction) {
  InducedRecord r{id, induction.tree, induction.distances.values, {}};
  for (const auto& e : induction.graph.edges()) {
    r.edges.emplace_back(induction.graph.nodes()[e.src].id, induction.graph.nodes()[e.dst].id);
  }
  return r;
}

void write_induced(std::ostream& out, const std::vector<InducedRecord>& records) {
  char buf[64];
  for (const auto& r : records) {
    out << "#process " << r.id << '\n';
    out << "tree " << r.tree.to_string() << '\n';
    out << "distances";
    for (double d : r.distances) {
      std::snprintf(buf, sizeof buf, " %.17g", d);
      out << buf;
    }
    out << '\n';
    for (const auto& [a, b] : r.edges) out << a << " -> " << b << '\n';
    out << '\n';
  }
}

std::vector<InducedRecord> read_induced(std::istream& in) {
  std::vector<InducedRecord> out;
  std::string line;
  std::size_t line_no = 0;
  enum class State { Between, Tree, Distances, Edges } state = State::Between;
  auto fail = [&](const std::string& what) { throw ParseError(line_no, what); };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    switch (state) {
      case State::Between:
        if (line.empty()) break;
        if (line.rfind("#process ", 0) != 0) fail("expected '#process <id>'");
        out.push_back({line.substr(9), {}, {}, {}});
        if (out.back().id.empty()) fail("empty process id");
        state = State::Tree;
        break;
      case State::Tree:
        if (line.rfind("tree ", 0) != 0) fail("expected 'tree <bracketed tree>'");
        try {
          out.back().tree = ProcessTree::parse(line.substr(5));
        } catch (const FormatError& e) {
          fail(e.what());
        }
        state = State::Distances;
        break;
      case State::Distances: {
        if (line.rfind("distances", 0) != 0) fail("expected 'distances ...'");
        std::istringstream ss(line.substr(9));
        std::string tok;
        while (ss >> tok) {
          char* end = nullptr;
          const double v = std::strtod(tok.c_str(), &end);
          if (end != tok.c_str() + tok.size() || !std::isfinite(v)) fail("bad distance '" + tok + "'");
          out.back().distances.push_back(v);
        }
        if (out.back().distances.size() + 1 != out.back().tree.leaf_count()) {
          fail("distance count does not match the tree");
        }
        state = State::Edges;
        break;
      }
      case State::Edges: {
        if (line.empty()) {
          if (out.back().edges.size() + 1 != out.back().tree.leaf_count()) fail("edge count does not match the tree");
          state = State::Between;
          break;
        }
        int a = 0, b = 0;
        char extra = 0;
        if (std::sscanf(line.c_str(), "%d -> %d %c", &a, &b, &extra) != 2) fail("expected '<from> -> <to>'");
        const int L = static_cast<int>(out.back().tree.leaf_count());
        if (a < 1 || b < 1 || a > L || b > L) fail("edge endpoint out of range");
        out.back().edges.emplace_back(a, b);
        break;
      }
    }
  }
  if (state == State::Edges) {
    if (out.back().edges.size() + 1 != out.back().tree.leaf_count()) fail("edge count does not match the tree");
  } else if (state != State::Between) {
    fail("truncated record");
  }
  return out;
}

ProcessGraph record_graph(const InducedRecord& record, const ProcessDoc& doc) {
  if (record.tree.leaf_count() != doc.size()) {
    throw ContractError("record '" + record.id + "' does not match process '" + doc.id + "'");
  }
  ProcessGraph g = sentence_nodes(doc);
  for (const auto& [a, b] : record.edges) g.add_edge(static_cast<std::size_t>(a - 1), static_cast<std::size_t>(b - 1));
  return g;
}

CorpusReport evaluate_graphs(const std::vector<ProcessDoc>& docs, const std::vector<ProcessGraph>& induced,
                             const EvalOptions& options) {
  if (docs.size() != induced.size()) throw ContractError("one induced graph per process is required");
  std::vector<std::size_t> scored;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (docs[i].has_gold()) scored.push_back(i);
  }
  if (scored.empty()) throw ContractError("no process has a gold hierarchy to evaluate against");
  std::vector<DocScore> scores(scored.size());
  parallel_for(scored.size(), [&](std::size_t k) {
    const auto i = scored[k];
    scores[k] = score_pair(docs[i].id, gold_graph(docs[i]), induced[i], options);
  });
  return aggregate(std::move(scores));
}

BaselineResult random_baseline(const std::vector<ProcessDoc>& docs, std::size_t seeds, std::uint64_t seed,
                               const EvalOptions& options) {
  if (seeds == 0) throw ContractError("baseline needs at least one seed");
  BaselineResult r;
  for (std::size_t s = 0; s < seeds; ++s) {
    Rng rng(mix_seed(seed, 0xba5e0000ULL + s));
    std::vector<ProcessGraph> graphs;
    graphs.reserve(docs.size());
    for (const auto& d : docs) graphs.push_back(tree_to_graph(random_tree(d.size(), rng), d));
    r.per_seed.push_back(evaluate_graphs(docs, graphs, options).mean_simged);
  }
  for (double v : r.per_seed) r.mean += v;
  r.mean /= static_cast<double>(seeds);
  return r;
}

}  // namespace procstruct
