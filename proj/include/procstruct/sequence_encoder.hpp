#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "procstruct/rng.hpp"
#include "procstruct/tape.hpp"
#include "procstruct/vocabulary.hpp"

namespace procstruct {

// Training-time dropout. A default-constructed value is inactive.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
  Var apply(Tape& tape, Var x) const;
};

// One LSTM direction. `weight` is [4h x (in + h)] acting on [x_t ; h_{t-1}],
// rows grouped as input, forget, output, candidate gates.
struct LstmParams {
  Tensor weight;
  Tensor bias;

  std::size_t hidden_size() const { return bias.size() / 4; }
  std::size_t input_size() const { return weight.cols() - hidden_size(); }

  static LstmParams zeros(std::size_t input, std::size_t hidden);
  // Uniform in [-1/sqrt(h), 1/sqrt(h)].
  static LstmParams random(std::size_t input, std::size_t hidden, Rng& rng);

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".weight", self.weight);
    f(prefix + ".bias", self.bias);
  }
};

struct LstmState {
  Var h;
  Var c;
};

// Standard LSTM cell:
//   i, f, o = sigmoid(W [x; h] + b),  g = tanh(W [x; h] + b)
//   c_t = f * c_{t-1} + i * g,  h_t = o * tanh(c_t)
LstmState lstm_step(Tape& tape, Var x, Var h_prev, Var c_prev, const LstmParams& params);

struct BiLstmLayer {
  LstmParams forward;
  LstmParams backward;
};

struct BiLstmRun {
  // Top-layer [forward ; backward] state per position.
  std::vector<Var> outputs;
  // Top layer, forward direction, last position.
  Var forward_final;
  // Top layer, backward direction, after reading back to position 0.
  Var backward_final;
};

// Stacked bidirectional LSTM; layer k reads layer k-1's concatenated outputs.
struct StackedBiLstm {
  std::vector<BiLstmLayer> layers;

  std::size_t hidden_size() const { return layers.at(0).forward.hidden_size(); }
  std::size_t input_size() const { return layers.at(0).forward.input_size(); }
  std::size_t output_size() const { return 2 * hidden_size(); }

  static StackedBiLstm zeros(std::size_t input, std::size_t hidden, std::size_t layers);
  static StackedBiLstm random(std::size_t input, std::size_t hidden, std::size_t layers, Rng& rng);

  // With `forward_only` the backward states are zero at every layer, so the
  // output at position t depends on inputs 0..t only.
  BiLstmRun run(Tape& tape, std::span<const Var> inputs, const Dropout& dropout = {},
                bool forward_only = false) const;

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    for (std::size_t k = 0; k < self.layers.size(); ++k) {
      const std::string p = prefix + ".layer" + std::to_string(k);
      LstmParams::visit(self.layers[k].forward, p + ".fwd", f);
      LstmParams::visit(self.layers[k].backward, p + ".bwd", f);
    }
  }
};

// Embedding matrix [V x d]. Rows of tokens without a pretrained vector are
// drawn uniformly from [-0.1, 0.1] by a generator seeded from the token text,
// so a row does not depend on vocabulary order.
Tensor hashed_embeddings(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed);

struct EmbeddingLoad {
  Tensor matrix;
  std::size_t covered = 0;
};

// Reads the whitespace-separated text format "token v1 ... vd", one token per
// line. When `dim` is 0 the dimension is taken from the first line and later
// lines that disagree are a FormatError; with a fixed `dim` a wrong field
// count is a ParseError on that line.
EmbeddingLoad load_embeddings(std::istream& in, const Vocabulary& vocab, std::size_t dim,
                              std::uint64_t seed);
EmbeddingLoad load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                              std::uint64_t seed);

struct SentenceEncoding {
  Var summary;             // [forward_final ; backward_final], size 2h
  std::vector<Var> words;  // per-word top-layer states
};

SentenceEncoding encode_sentence(Tape& tape, std::span<const std::size_t> tokens, const Tensor& embedding,
                                 const StackedBiLstm& encoder, const Dropout& dropout = {});

// Sentence summaries fed through the process-level BiLSTM; returns one
// [forward ; backward] vector per sentence. `causal` runs the process level
// forward only (backward halves are zero).
std::vector<Var> encode_process(Tape& tape, const std::vector<std::vector<std::size_t>>& sentences,
                                const Tensor& embedding, const StackedBiLstm& sentence_encoder,
                                const StackedBiLstm& process_encoder, const Dropout& dropout = {},
                                bool causal = false);

}  // namespace procstruct
