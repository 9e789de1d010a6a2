#include "procstruct/sequence_encoder.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "procstruct/error.hpp"

namespace procstruct {

Var Dropout::apply(Tape& tape, Var x) const {
  if (!active()) return x;
  const Shape& s = tape.shape(x);
  Tensor mask(s);
  const double keep = 1.0 - rate;
  for (auto& m : mask.values) m = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, tape.constant(std::move(mask)));
}

LstmParams LstmParams::zeros(std::size_t input, std::size_t hidden) {
  return {Tensor(Shape{4 * hidden, input + hidden}), Tensor(Shape{4 * hidden})};
}

LstmParams LstmParams::random(std::size_t input, std::size_t hidden, Rng& rng) {
  LstmParams p = zeros(input, hidden);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (auto& v : p.weight.values) v = rng.uniform(-k, k);
  for (auto& v : p.bias.values) v = rng.uniform(-k, k);
  return p;
}

LstmState lstm_step(Tape& tape, Var x, Var h_prev, Var c_prev, const LstmParams& params) {
  const std::size_t h = params.hidden_size();
  if (tape.shape(x) != Shape{params.input_size()} || tape.shape(h_prev) != Shape{h} ||
      tape.shape(c_prev) != Shape{h}) {
    throw DimensionError("lstm_step: x " + shape_string(tape.shape(x)) + ", h " +
                         shape_string(tape.shape(h_prev)) + ", c " + shape_string(tape.shape(c_prev)) +
                         " do not fit parameters " + shape_string(params.weight.shape));
  }
  Var z = add(matmul(tape.param(params.weight), concat({x, h_prev})), tape.param(params.bias));
  Var i = sigmoid(slice(z, 0, h));
  Var f = sigmoid(slice(z, h, h));
  Var o = sigmoid(slice(z, 2 * h, h));
  Var g = tanh(slice(z, 3 * h, h));
  Var c = add(mul(f, c_prev), mul(i, g));
  return {mul(o, tanh(c)), c};
}

StackedBiLstm StackedBiLstm::zeros(std::size_t input, std::size_t hidden, std::size_t layers) {
  StackedBiLstm s;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t in = k == 0 ? input : 2 * hidden;
    s.layers.push_back({LstmParams::zeros(in, hidden), LstmParams::zeros(in, hidden)});
  }
  return s;
}

StackedBiLstm StackedBiLstm::random(std::size_t input, std::size_t hidden, std::size_t layers, Rng& rng) {
  StackedBiLstm s;
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t in = k == 0 ? input : 2 * hidden;
    auto fwd = LstmParams::random(in, hidden, rng);
    auto bwd = LstmParams::random(in, hidden, rng);
    s.layers.push_back({std::move(fwd), std::move(bwd)});
  }
  return s;
}

BiLstmRun StackedBiLstm::run(Tape& tape, std::span<const Var> inputs, const Dropout& dropout,
                              bool forward_only) const {
  if (inputs.empty()) throw ContractError("BiLSTM over an empty sequence");
  if (layers.empty()) throw ContractError("BiLSTM without layers");
  const std::size_t n = inputs.size();
  std::vector<Var> current(inputs.begin(), inputs.end());
  BiLstmRun out;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (k > 0) {
      for (auto& v : current) v = dropout.apply(tape, v);
    }
    const auto& layer = layers[k];
    const std::size_t h = layer.forward.hidden_size();
    std::vector<Var> fwd(n), bwd(n);
    LstmState s{tape.constant(Tensor(Shape{h})), tape.constant(Tensor(Shape{h}))};
    for (std::size_t t = 0; t < n; ++t) {
      s = lstm_step(tape, current[t], s.h, s.c, layer.forward);
      fwd[t] = s.h;
    }
    s = {tape.constant(Tensor(Shape{h})), tape.constant(Tensor(Shape{h}))};
    for (std::size_t t = n; t-- > 0;) {
      if (forward_only) {
        bwd[t] = s.h;
        continue;
      }
      s = lstm_step(tape, current[t], s.h, s.c, layer.backward);
      bwd[t] = s.h;
    }
    for (std::size_t t = 0; t < n; ++t) current[t] = concat({fwd[t], bwd[t]});
    out.forward_final = fwd[n - 1];
    out.backward_final = bwd[0];
  }
  out.outputs = std::move(current);
  return out;
}

Tensor hashed_embeddings(const Vocabulary& vocab, std::size_t dim, std::uint64_t seed) {
  Tensor m(Shape{vocab.size(), dim});
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    Rng rng(mix_seed(hash_string(vocab.token(r)), seed));
    for (std::size_t c = 0; c < dim; ++c) m.at(r, c) = rng.uniform(-0.1, 0.1);
  }
  return m;
}

EmbeddingLoad load_embeddings(std::istream& in, const Vocabulary& vocab, std::size_t dim,
                              std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::vector<double>>> rows;
  std::size_t expected = dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    std::vector<double> values;
    std::string field;
    while (fields >> field) {
      errno = 0;
      char* end = nullptr;
      const double v = std::strtod(field.c_str(), &end);
      if (end != field.c_str() + field.size() || errno == ERANGE || !std::isfinite(v)) {
        throw ParseError(line_no, "embedding value '" + field + "' is not a finite number");
      }
      values.push_back(v);
    }
    if (values.empty()) throw ParseError(line_no, "embedding line has no values");
    if (expected == 0) {
      expected = values.size();
    } else if (values.size() != expected) {
      if (dim != 0) {
        throw ParseError(line_no, "expected " + std::to_string(dim + 1) + " fields, found " +
                                      std::to_string(values.size() + 1));
      }
      throw FormatError("embedding dimension " + std::to_string(values.size()) + " on line " +
                        std::to_string(line_no) + " differs from " + std::to_string(expected));
    }
    if (vocab.contains(token)) rows.emplace_back(vocab.index(token), std::move(values));
  }
  if (expected == 0) throw FormatError("embedding file is empty and no dimension was given");

  EmbeddingLoad out{hashed_embeddings(vocab, expected, seed), 0};
  std::vector<bool> seen(vocab.size(), false);
  for (auto& [row, values] : rows) {
    if (!seen[row]) ++out.covered;
    seen[row] = true;
    std::copy(values.begin(), values.end(), out.matrix.values.begin() + static_cast<std::ptrdiff_t>(row * expected));
  }
  return out;
}

EmbeddingLoad load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                              std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file '" + path + "'");
  return load_embeddings(in, vocab, dim, seed);
}

SentenceEncoding encode_sentence(Tape& tape, std::span<const std::size_t> tokens, const Tensor& embedding,
                                 const StackedBiLstm& encoder, const Dropout& dropout) {
  if (tokens.empty()) throw ContractError("cannot encode an empty sentence");
  if (embedding.rank() != 2 || embedding.cols() != encoder.input_size()) {
    throw DimensionError("embedding " + shape_string(embedding.shape) + " does not feed an encoder with input " +
                         std::to_string(encoder.input_size()));
  }
  Var table = tape.param(embedding);
  std::vector<Var> inputs;
  inputs.reserve(tokens.size());
  for (auto tok : tokens) inputs.push_back(dropout.apply(tape, gather_row(table, tok)));
  BiLstmRun run = encoder.run(tape, inputs, dropout);
  return {concat({run.forward_final, run.backward_final}), std::move(run.outputs)};
}

std::vector<Var> encode_process(Tape& tape, const std::vector<std::vector<std::size_t>>& sentences,
                                const Tensor& embedding, const StackedBiLstm& sentence_encoder,
                                const StackedBiLstm& process_encoder, const Dropout& dropout, bool causal) {
  if (sentences.empty()) throw ContractError("cannot encode an empty process");
  std::vector<Var> summaries;
  summaries.reserve(sentences.size());
  for (const auto& s : sentences) {
    summaries.push_back(encode_sentence(tape, s, embedding, sentence_encoder, dropout).summary);
  }
  return process_encoder.run(tape, summaries, dropout, causal).outputs;
}

}  // namespace procstruct
