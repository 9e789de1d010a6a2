#include "procstruct/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "procstruct/error.hpp"
#include "procstruct/rng.hpp"

namespace procstruct {

namespace {

std::vector<int> split_outline(std::string_view s) {
  std::vector<int> parts;
  if (s.empty()) throw ContractError("empty outline number");
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = s.find('.', start);
    const std::string_view piece = s.substr(start, dot == std::string_view::npos ? s.npos : dot - start);
    if (piece.empty() || piece.size() > 6 ||
        !std::all_of(piece.begin(), piece.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw ContractError("malformed outline number '" + std::string(s) + "'");
    }
    const int v = std::stoi(std::string(piece));
    if (v <= 0) throw ContractError("malformed outline number '" + std::string(s) + "'");
    parts.push_back(v);
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

std::string join_outline(const std::vector<int>& parts, std::size_t count) {
  std::string out;
  for (std::size_t i = 0; i < count; ++i) {
    if (i) out += '.';
    out += std::to_string(parts[i]);
  }
  return out;
}

// Incremental preorder check over outline numbers.
class OutlineChecker {
 public:
  void add(const std::string& outline) {
    const auto parts = split_outline(outline);
    const std::string parent = join_outline(parts, parts.size() - 1);
    if (parts.size() > 1 && !seen_.count(parent)) {
      throw ContractError("orphan outline number '" + outline + "': parent '" + parent + "' is missing");
    }
    if (seen_.count(outline)) throw ContractError("duplicate outline number '" + outline + "'");
    // The parent must be on the path to the previous sentence.
    if (parts.size() > 1) {
      const auto prev = previous_;
      const auto pp = split_outline(parent);
      const bool on_path = prev.size() >= pp.size() && std::equal(pp.begin(), pp.end(), prev.begin());
      if (!on_path) throw ContractError("outline number '" + outline + "' is out of document order");
    }
    int& last = last_child_[parent];
    if (parts.back() <= last) {
      throw ContractError("outline number '" + outline + "' does not follow its previous sibling");
    }
    last = parts.back();
    seen_.insert(outline);
    previous_ = parts;
  }

 private:
  std::set<std::string> seen_;
  std::map<std::string, int> last_child_;
  std::vector<int> previous_;
};

std::string join_tokens(const Sentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += s[i];
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::string ProcessDoc::text(std::size_t i) const { return join_tokens(sentences.at(i)); }

std::size_t ProcessDoc::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

std::vector<int> ProcessDoc::parents() const {
  std::vector<int> out(sentences.size(), -1);
  if (!has_gold()) return out;
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < outline.size(); ++i) {
    index[outline[i]] = static_cast<int>(i);
    const auto dot = outline[i].rfind('.');
    if (dot != std::string::npos) {
      auto it = index.find(outline[i].substr(0, dot));
      if (it == index.end()) throw ContractError("orphan outline number '" + outline[i] + "' in " + id);
      out[i] = it->second;
    }
  }
  return out;
}

std::size_t ProcessDoc::depth() const {
  if (!has_gold()) return 0;
  std::size_t d = 0;
  for (const auto& o : outline) {
    d = std::max<std::size_t>(d, static_cast<std::size_t>(std::count(o.begin(), o.end(), '.')) + 1);
  }
  return d;
}

Sentence tokenize(std::string_view text) {
  Sentence out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (u < 0x80 && std::ispunct(u)) {
      continue;
    } else {
      cur += static_cast<char>(u < 0x80 ? std::tolower(u) : u);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> outline_from_parents(const std::vector<int>& parents) {
  std::vector<std::string> out(parents.size());
  std::vector<int> child_count(parents.size(), 0);
  int top = 0;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    const int p = parents[i];
    if (p < 0) {
      out[i] = std::to_string(++top);
    } else {
      if (static_cast<std::size_t>(p) >= i) throw ContractError("parent must precede its child");
      out[i] = out[static_cast<std::size_t>(p)] + "." + std::to_string(++child_count[static_cast<std::size_t>(p)]);
    }
  }
  validate_outline(out);
  return out;
}

void validate_outline(const std::vector<std::string>& outline) {
  OutlineChecker checker;
  for (const auto& o : outline) checker.add(o);
}

std::vector<ProcessDoc> parse_corpus(std::istream& in) {
  std::vector<ProcessDoc> docs;
  std::string line;
  std::size_t line_no = 0;
  bool open = false;
  std::size_t header_line = 0;
  OutlineChecker checker;
  std::set<std::string> ids;

  auto close = [&]() {
    if (!open) return;
    if (docs.back().sentences.empty()) throw ParseError(header_line, "process '" + docs.back().id + "' has no sentences");
    open = false;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) {
      close();
      continue;
    }
    if (line.rfind("#process", 0) == 0 && (line.size() == 8 || std::isspace(static_cast<unsigned char>(line[8])))) {
      close();
      const std::string id = trim(std::string_view(line).substr(8));
      if (id.empty()) throw ParseError(line_no, "process header without an id");
      if (id.find_first_of(" \t") != std::string::npos) throw ParseError(line_no, "process id contains whitespace");
      if (!ids.insert(id).second) throw ParseError(line_no, "duplicate process id '" + id + "'");
      docs.push_back(ProcessDoc{id, {}, {}});
      open = true;
      header_line = line_no;
      checker = OutlineChecker();
      continue;
    }
    if (line[0] == '#') continue;
    if (!open) throw ParseError(line_no, "sentence outside of a #process block");

    const auto sp = line.find_first_of(" \t");
    const std::string number = line.substr(0, sp);
    const std::string text = sp == std::string::npos ? std::string() : line.substr(sp + 1);
    ProcessDoc& doc = docs.back();
    const bool gold = number != "-";
    if (!doc.sentences.empty() && gold != doc.has_gold()) {
      throw ParseError(line_no, "process mixes outline numbers and '-' markers");
    }
    if (gold) {
      try {
        checker.add(number);
      } catch (const ContractError& e) {
        throw ParseError(line_no, e.what());
      }
      doc.outline.push_back(number);
    }
    Sentence tokens = tokenize(text);
    if (tokens.empty()) throw ParseError(line_no, "empty sentence");
    doc.sentences.push_back(std::move(tokens));
  }
  close();
  return docs;
}

std::vector<ProcessDoc> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus file '" + path + "'");
  return parse_corpus(in);
}

void write_corpus(std::ostream& out, const std::vector<ProcessDoc>& docs) {
  for (const auto& doc : docs) {
    out << "#process " << doc.id << '\n';
    for (std::size_t i = 0; i < doc.size(); ++i) {
      out << (doc.has_gold() ? doc.outline[i] : std::string("-")) << ' ' << doc.text(i) << '\n';
    }
    out << '\n';
  }
}

void write_corpus(const std::string& path, const std::vector<ProcessDoc>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus file '" + path + "'");
  write_corpus(out, docs);
}

// ---------------------------------------------------------------------------
// Preprocessing

namespace {

struct FlatDoc {
  std::string id;
  std::vector<Sentence> sentences;
  std::vector<int> parents;
};

FlatDoc chunk_sentences(const ProcessDoc& doc, std::size_t max_words) {
  const auto parents = doc.parents();
  FlatDoc out{doc.id, {}, {}};
  std::vector<int> remap(doc.size(), -1);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& s = doc.sentences[i];
    const int head = static_cast<int>(out.sentences.size());
    remap[i] = head;
    const int parent = parents[i] < 0 ? -1 : remap[static_cast<std::size_t>(parents[i])];
    for (std::size_t begin = 0; begin < s.size(); begin += max_words) {
      const std::size_t end = std::min(s.size(), begin + max_words);
      out.sentences.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(begin),
                                 s.begin() + static_cast<std::ptrdiff_t>(end));
      out.parents.push_back(begin == 0 ? parent : head);
    }
  }
  return out;
}

// Cuts subtrees rooted at depth-`max_depth` sentences that have children.
void split_deep(FlatDoc doc, std::size_t max_depth, std::vector<FlatDoc>& out) {
  const std::size_t n = doc.sentences.size();
  std::vector<std::size_t> depth(n);
  std::vector<std::size_t> subtree_end(n);
  for (std::size_t i = 0; i < n; ++i) {
    depth[i] = doc.parents[i] < 0 ? 1 : depth[static_cast<std::size_t>(doc.parents[i])] + 1;
  }
  for (std::size_t i = n; i-- > 0;) {
    subtree_end[i] = i + 1;
    for (std::size_t j = i + 1; j < n && depth[j] > depth[i]; ++j) subtree_end[i] = j + 1;
  }

  FlatDoc kept{doc.id, {}, {}};
  std::vector<FlatDoc> cut;
  std::vector<int> remap(n, -1);
  for (std::size_t i = 0; i < n;) {
    if (depth[i] == max_depth && subtree_end[i] > i + 1) {
      FlatDoc piece{doc.id + "~" + std::to_string(cut.size() + 1), {}, {}};
      for (std::size_t j = i; j < subtree_end[i]; ++j) {
        const int p = doc.parents[j];
        piece.parents.push_back(j == i ? -1 : static_cast<int>(static_cast<std::size_t>(p) - i));
        piece.sentences.push_back(std::move(doc.sentences[j]));
      }
      cut.push_back(std::move(piece));
      i = subtree_end[i];
      continue;
    }
    remap[i] = static_cast<int>(kept.sentences.size());
    kept.parents.push_back(doc.parents[i] < 0 ? -1 : remap[static_cast<std::size_t>(doc.parents[i])]);
    kept.sentences.push_back(std::move(doc.sentences[i]));
    ++i;
  }
  out.push_back(std::move(kept));
  for (auto& piece : cut) split_deep(std::move(piece), max_depth, out);
}

}  // namespace

std::vector<ProcessDoc> preprocess(const std::vector<ProcessDoc>& docs, const PreprocessOptions& options) {
  if (options.max_words == 0 || options.max_depth == 0) throw ContractError("preprocess limits must be positive");
  std::vector<ProcessDoc> result;
  for (const auto& doc : docs) {
    FlatDoc flat = chunk_sentences(doc, options.max_words);
    if (!doc.has_gold()) {
      result.push_back(ProcessDoc{flat.id, std::move(flat.sentences), {}});
      continue;
    }
    std::vector<FlatDoc> pieces;
    split_deep(std::move(flat), options.max_depth, pieces);
    for (auto& p : pieces) {
      auto outline = outline_from_parents(p.parents);
      result.push_back(ProcessDoc{std::move(p.id), std::move(p.sentences), std::move(outline)});
    }
  }
  return result;
}

CorpusSplit split_corpus(const std::vector<ProcessDoc>& docs, std::uint64_t seed, double train_fraction) {
  if (docs.size() < 10) {
    throw ContractError("split needs at least 10 processes, got " + std::to_string(docs.size()));
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ContractError("train fraction must be in (0, 1)");
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5e11));
  rng.shuffle(order);
  const auto n = static_cast<double>(docs.size());
  auto n_test = static_cast<std::size_t>(std::ceil(n * (1.0 - train_fraction) - 1e-9));
  n_test = std::clamp<std::size_t>(n_test, 1, docs.size() - 1);
  CorpusSplit split;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < docs.size() - n_test ? split.train : split.test).push_back(docs[order[k]]);
  }
  return split;
}

CorpusStats corpus_stats(const std::vector<ProcessDoc>& docs) {
  if (docs.empty()) throw ContractError("statistics of an empty corpus");
  CorpusStats s;
  std::set<std::string> documents;
  for (const auto& d : docs) {
    documents.insert(d.id.substr(0, d.id.find('/')));
    ++s.processes;
    s.sentences += d.size();
    s.max_depth = std::max(s.max_depth, d.depth());
    for (const auto& sent : d.sentences) {
      s.tokens += sent.size();
      s.max_words_per_sentence = std::max(s.max_words_per_sentence, sent.size());
    }
  }
  s.documents = documents.size();
  s.avg_words_per_sentence = static_cast<double>(s.tokens) / static_cast<double>(s.sentences);
  s.avg_sentences_per_process = static_cast<double>(s.sentences) / static_cast<double>(s.processes);
  return s;
}

std::string format_stats(const CorpusStats& s) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(1);
  out << "Number of documents\t" << s.documents << '\n'
      << "Average words per sentence\t" << s.avg_words_per_sentence << '\n'
      << "Maximum words per sentence\t" << s.max_words_per_sentence << '\n'
      << "Average sentences per process\t" << s.avg_sentences_per_process << '\n'
      << "Number of processes\t" << s.processes << '\n'
      << "Maximum depth\t" << s.max_depth << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Synthetic corpus

void SyntheticParams::validate() const {
  auto fail = [](const std::string& m) { throw ContractError("synthetic corpus: " + m); };
  if (processes == 0) fail("processes must be positive");
  if (processes_per_document == 0) fail("processes per document must be positive");
  if (depth_min < 1 || depth_min > depth_max) fail("depth range is empty or starts below 1");
  if (depth_max > 6 && !allow_deep) fail("depth above 6 requires allow_deep");
  if (branching_min < 1 || branching_min > branching_max) fail("branching range is empty or starts below 1");
  if (sentence_min < 4 || sentence_min > sentence_max) fail("sentence length range must satisfy 4 <= min <= max");
  if (sentence_max > 15) fail("sentence length above 15 words");
  if (!(cue_strength >= 0.0 && cue_strength <= 1.0)) fail("cue strength must be in [0, 1]");
  if (vocab_size < 10 * depth_max + 20) fail("vocabulary too small for the depth range");
}

namespace {

struct SynthVocab {
  std::vector<std::string> cues;                      // one per depth
  std::vector<std::string> boundaries;                // levels closed since the previous sentence
  std::vector<std::vector<std::string>> depth_words;  // per depth
  std::vector<std::string> shared_words;              // union of depth_words
  std::vector<std::string> objects;
  std::vector<std::vector<std::size_t>> related;      // object -> candidate child objects
};

SynthVocab build_vocab(const SyntheticParams& p, Rng& rng) {
  SynthVocab v;
  const std::size_t depths = p.depth_max;
  for (std::size_t d = 1; d <= depths; ++d) v.cues.push_back("level" + std::to_string(d));
  for (std::size_t k = 0; k <= depths; ++k) v.boundaries.push_back("close" + std::to_string(k));
  const std::size_t remaining = p.vocab_size - v.cues.size() - v.boundaries.size();
  const std::size_t n_objects = remaining * 3 / 10;
  const std::size_t per_depth = (remaining - n_objects) / depths;
  for (std::size_t i = 0; i < n_objects; ++i) v.objects.push_back("item" + std::to_string(i));
  v.depth_words.resize(depths);
  for (std::size_t d = 0; d < depths; ++d) {
    for (std::size_t j = 0; j < per_depth; ++j) {
      v.depth_words[d].push_back("w" + std::to_string(d + 1) + "x" + std::to_string(j));
      v.shared_words.push_back(v.depth_words[d].back());
    }
  }
  v.related.resize(n_objects);
  for (auto& r : v.related) {
    for (int k = 0; k < 4; ++k) r.push_back(static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(n_objects) - 1)));
  }
  return v;
}

template <class T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  return items[static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(items.size()) - 1))];
}

}  // namespace

std::vector<ProcessDoc> generate_synthetic(const SyntheticParams& p) {
  p.validate();
  Rng rng(mix_seed(p.seed, 0x5717));
  const SynthVocab vocab = build_vocab(p, rng);

  // `closed` is the number of levels closed since the previous sentence
  // (0 for a first child), or -1 for the first sentence of a process.
  auto make_sentence = [&](std::size_t depth, std::size_t object, int parent_object, int closed) {
    const bool cued = rng.bernoulli(p.cue_strength);
    const auto& words = cued ? vocab.depth_words[depth - 1] : vocab.shared_words;
    Sentence s;
    const auto length = static_cast<std::size_t>(
        rng.range(static_cast<std::int64_t>(p.sentence_min), static_cast<std::int64_t>(p.sentence_max)));
    if (cued && closed >= 0) s.push_back(vocab.boundaries[static_cast<std::size_t>(closed)]);
    if (cued) s.push_back(vocab.cues[depth - 1]);
    s.push_back(pick(words, rng));
    s.push_back(vocab.objects[object]);
    if (parent_object >= 0) s.push_back(vocab.objects[static_cast<std::size_t>(parent_object)]);
    while (s.size() < length) s.push_back(pick(words, rng));
    return s;
  };

  std::vector<ProcessDoc> docs;
  for (std::size_t n = 0; n < p.processes; ++n) {
    ProcessDoc doc;
    char id[64];
    std::snprintf(id, sizeof id, "doc%03zu/p%03zu", n / p.processes_per_document, n % p.processes_per_document);
    doc.id = id;
    const auto target = static_cast<std::size_t>(
        rng.range(static_cast<std::int64_t>(p.depth_min), static_cast<std::int64_t>(p.depth_max)));

    std::vector<int> parents;
    std::size_t prev_depth = 0;
    // Preorder expansion; `spine` nodes guarantee the target depth is reached.
    struct Frame {
      int parent;
      std::size_t depth;
      std::size_t object;
      int parent_object;
      bool spine;
    };
    std::vector<Frame> stack{{-1, 1, static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(vocab.objects.size()) - 1)), -1, true}};
    while (!stack.empty()) {
      Frame f = stack.back();
      stack.pop_back();
      const int self = static_cast<int>(parents.size());
      parents.push_back(f.parent);
      const int closed = self == 0 ? -1 : static_cast<int>(prev_depth + 1) - static_cast<int>(f.depth);
      doc.sentences.push_back(make_sentence(f.depth, f.object, f.parent_object, closed));
      prev_depth = f.depth;
      if (f.depth >= target) continue;
      if (!f.spine && !rng.bernoulli(0.6)) continue;
      const auto kids = static_cast<std::size_t>(
          rng.range(static_cast<std::int64_t>(p.branching_min), static_cast<std::int64_t>(p.branching_max)));
      const auto spine_kid = f.spine ? static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(kids) - 1)) : kids;
      std::vector<Frame> children;
      for (std::size_t k = 0; k < kids; ++k) {
        children.push_back({self, f.depth + 1, pick(vocab.related[f.object], rng), static_cast<int>(f.object),
                            k == spine_kid});
      }
      for (auto it = children.rbegin(); it != children.rend(); ++it) stack.push_back(*it);
    }
    doc.outline = outline_from_parents(parents);
    docs.push_back(std::move(doc));
  }
  return docs;
}

}  // namespace procstruct
