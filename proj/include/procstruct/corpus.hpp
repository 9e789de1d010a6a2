#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace procstruct {

using Sentence = std::vector<std::string>;

// One process description: ordered sentences plus, optionally, the gold
// hierarchy as outline numbers ("1", "1.2", "1.2.1"), one per sentence.
struct ProcessDoc {
  std::string id;
  std::vector<Sentence> sentences;
  std::vector<std::string> outline;  // empty when there is no gold hierarchy

  std::size_t size() const { return sentences.size(); }
  bool has_gold() const { return !outline.empty(); }
  std::string text(std::size_t i) const;
  std::size_t token_count() const;

  // Gold parent index per sentence, -1 for top-level sentences.
  std::vector<int> parents() const;
  // Depth of the deepest sentence (top level = 1); 0 without gold.
  std::size_t depth() const;

  bool operator==(const ProcessDoc&) const = default;
};

// Lowercase, drop ASCII punctuation, split on whitespace.
Sentence tokenize(std::string_view text);

// Outline numbers for a preorder parent array (-1 = top level). Throws if a
// parent does not precede its child or the array is not in preorder.
std::vector<std::string> outline_from_parents(const std::vector<int>& parents);

// Checks outline well-formedness; throws ContractError describing the first
// violation. Used by parse_corpus (which reports line numbers) and callers
// that build documents by hand.
void validate_outline(const std::vector<std::string>& outline);

std::vector<ProcessDoc> parse_corpus(std::istream& in);
std::vector<ProcessDoc> read_corpus(const std::string& path);
void write_corpus(std::ostream& out, const std::vector<ProcessDoc>& docs);
void write_corpus(const std::string& path, const std::vector<ProcessDoc>& docs);

struct PreprocessOptions {
  std::size_t max_words = 15;
  std::size_t max_depth = 6;
};

// Splits over-long sentences into consecutive chunks (later chunks become
// children of the first) and cuts processes deeper than max_depth into
// separate processes. Total token count is preserved.
std::vector<ProcessDoc> preprocess(const std::vector<ProcessDoc>& docs, const PreprocessOptions& options = {});

struct CorpusSplit {
  std::vector<ProcessDoc> train;
  std::vector<ProcessDoc> test;
};

// Seeded shuffle, then the first `train_fraction` share (test size rounded
// up) becomes the training split. Needs at least 10 documents.
CorpusSplit split_corpus(const std::vector<ProcessDoc>& docs, std::uint64_t seed, double train_fraction = 0.9);

struct CorpusStats {
  std::size_t documents = 0;  // distinct id prefixes before '/'
  std::size_t processes = 0;
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  double avg_words_per_sentence = 0.0;
  std::size_t max_words_per_sentence = 0;
  double avg_sentences_per_process = 0.0;
  std::size_t max_depth = 0;
};

CorpusStats corpus_stats(const std::vector<ProcessDoc>& docs);
std::string format_stats(const CorpusStats& stats);

struct SyntheticParams {
  std::size_t processes = 500;
  std::size_t processes_per_document = 20;
  std::size_t vocab_size = 200;
  std::size_t depth_min = 2;
  std::size_t depth_max = 4;
  std::size_t branching_min = 1;
  std::size_t branching_max = 3;
  std::size_t sentence_min = 5;
  std::size_t sentence_max = 12;
  // 0 = no surface cue of depth, 1 = every sentence carries its depth cue and
  // draws its words from a depth-specific sub-vocabulary.
  double cue_strength = 0.9;
  bool allow_deep = false;
  std::uint64_t seed = 1;

  void validate() const;
};

// Outline-numbered processes whose wording depends on depth and on the
// parent sentence, so the hierarchy can be recovered statistically.
std::vector<ProcessDoc> generate_synthetic(const SyntheticParams& params);

}  // namespace procstruct
