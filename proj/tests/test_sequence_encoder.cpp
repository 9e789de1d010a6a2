#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "procstruct/error.hpp"
#include "procstruct/gradcheck.hpp"
#include "procstruct/sequence_encoder.hpp"

using namespace procstruct;

namespace {

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Straight-line LSTM step written against the documented weight layout.
void reference_lstm(const LstmParams& p, const std::vector<double>& x, const std::vector<double>& h,
                    const std::vector<double>& c, std::vector<double>& h_out, std::vector<double>& c_out) {
  const std::size_t n = h.size(), in = x.size();
  auto pre = [&](std::size_t row) {
    double z = p.bias.values[row];
    for (std::size_t j = 0; j < in; ++j) z += p.weight.at(row, j) * x[j];
    for (std::size_t j = 0; j < n; ++j) z += p.weight.at(row, in + j) * h[j];
    return z;
  };
  h_out.assign(n, 0.0);
  c_out.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double i = sigm(pre(k)), f = sigm(pre(n + k)), o = sigm(pre(2 * n + k)), g = std::tanh(pre(3 * n + k));
    c_out[k] = f * c[k] + i * g;
    h_out[k] = o * std::tanh(c_out[k]);
  }
}

std::vector<double> values(const Tape& t, Var v) {
  auto s = t.value(v);
  return {s.begin(), s.end()};
}

}  // namespace

TEST_SUITE("sequence_encoder") {

TEST_CASE("vocabulary reserves special tokens") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token(Vocabulary::kBos) == "<bos>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  const auto a = v.add("apple");
  CHECK(a == 4);
  CHECK(v.add("apple") == a);
  CHECK(v.index("pear") == Vocabulary::kUnk);
  CHECK(Vocabulary::from_tokens(v.tokens()) == v);
}

TEST_CASE("embedding file rows and hashed fallback") {
  Vocabulary v;
  v.add("ab");
  v.add("cd");
  std::istringstream in("ab 1.0 2.0\nzz 3 4\n");
  EmbeddingLoad load = load_embeddings(in, v, 2, 9);
  CHECK(load.covered == 1);
  const auto ab = v.index("ab"), cd = v.index("cd");
  CHECK(load.matrix.at(ab, 0) == 1.0);
  CHECK(load.matrix.at(ab, 1) == 2.0);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(std::abs(load.matrix.at(cd, c)) <= 0.1);
  }
  // The fallback row depends on the token text, not on vocabulary order.
  Vocabulary w;
  w.add("cd");
  Tensor hashed = hashed_embeddings(w, 2, 9);
  CHECK(hashed.at(w.index("cd"), 0) == load.matrix.at(cd, 0));
}

TEST_CASE("embedding file errors") {
  Vocabulary v;
  std::istringstream short_line("x 1.0 2.0\nab 1.0\n");
  try {
    load_embeddings(short_line, v, 2, 1);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream inconsistent("x 1 2 3\ny 1 2\n");
  CHECK_THROWS_AS(load_embeddings(inconsistent, v, 0, 1), FormatError);
  std::istringstream bad_number("x 1 two\n");
  CHECK_THROWS_AS(load_embeddings(bad_number, v, 2, 1), ParseError);
}

TEST_CASE("lstm step with zero parameters outputs zeros") {
  LstmParams p = LstmParams::zeros(3, 4);
  Tape t;
  LstmState s = lstm_step(t, t.constant(Tensor::vector({1, -2, 3})), t.constant(Tensor(Shape{4})),
                          t.constant(Tensor(Shape{4})), p);
  for (double v : t.value(s.h)) CHECK(v == 0.0);
  for (double v : t.value(s.c)) CHECK(v == 0.0);
}

TEST_CASE("saturated forget gate with empty cell keeps only the new write") {
  Rng rng(2);
  LstmParams p = LstmParams::random(2, 3, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    p.bias.values[3 + k] = 20.0;
    for (std::size_t j = 0; j < 5; ++j) p.weight.at(3 + k, j) = 0.0;
  }
  std::vector<double> x{0.3, -0.4}, h{0.1, 0.2, -0.1}, c(3, 0.0), h_ref, c_ref;
  reference_lstm(p, x, h, c, h_ref, c_ref);
  Tape t;
  LstmState s = lstm_step(t, t.constant(Tensor::vector(x)), t.constant(Tensor::vector(h)),
                          t.constant(Tensor::vector(c)), p);
  // c = f*0 + i*g: the write alone.
  const auto cv = values(t, s.c);
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(cv[k] - c_ref[k]) < 1e-12);
}

TEST_CASE("lstm step matches a straight-line evaluation") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    LstmParams p = LstmParams::random(4, 5, rng);
    for (auto& v : p.weight.values) v *= 3.0;
    std::vector<double> x(4), h(5), c(5), h_ref, c_ref;
    for (auto* vec : {&x, &h, &c}) {
      for (auto& v : *vec) v = rng.uniform(-1, 1);
    }
    reference_lstm(p, x, h, c, h_ref, c_ref);
    Tape t;
    LstmState s = lstm_step(t, t.constant(Tensor::vector(x)), t.constant(Tensor::vector(h)),
                            t.constant(Tensor::vector(c)), p);
    const auto hv = values(t, s.h), cv = values(t, s.c);
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(std::abs(hv[k] - h_ref[k]) < 1e-12);
      CHECK(std::abs(cv[k] - c_ref[k]) < 1e-12);
    }
  }
}

TEST_CASE("lstm step rejects mismatched inputs") {
  LstmParams p = LstmParams::zeros(3, 4);
  Tape t;
  CHECK_THROWS_AS(lstm_step(t, t.constant(Tensor(Shape{2})), t.constant(Tensor(Shape{4})),
                            t.constant(Tensor(Shape{4})), p),
                  DimensionError);
}

TEST_CASE("sentence encoding") {
  Rng rng(3);
  Tensor emb(Shape{6, 3});
  for (auto& v : emb.values) v = rng.uniform(-1, 1);

  SUBCASE("zero parameters give a zero summary") {
    StackedBiLstm enc = StackedBiLstm::zeros(3, 4, 2);
    Tape t;
    SentenceEncoding s = encode_sentence(t, std::vector<std::size_t>{1, 2, 3}, emb, enc);
    CHECK(t.shape(s.summary) == Shape{8});
    for (double v : t.value(s.summary)) CHECK(v == 0.0);
  }

  SUBCASE("one token: both directions read the same single step") {
    StackedBiLstm enc = StackedBiLstm::random(3, 4, 1, rng);
    enc.layers[0].backward = enc.layers[0].forward;
    Tape t;
    SentenceEncoding s = encode_sentence(t, std::vector<std::size_t>{5}, emb, enc);
    const auto v = values(t, s.summary);
    for (std::size_t k = 0; k < 4; ++k) CHECK(v[k] == v[4 + k]);
    CHECK(s.words.size() == 1);
  }

  SUBCASE("reversal swaps the halves when both directions share parameters") {
    StackedBiLstm enc = StackedBiLstm::random(3, 4, 1, rng);
    enc.layers[0].backward = enc.layers[0].forward;
    std::vector<std::size_t> tokens{1, 4, 2, 5};
    std::vector<std::size_t> reversed(tokens.rbegin(), tokens.rend());
    Tape t;
    const auto a = values(t, encode_sentence(t, tokens, emb, enc).summary);
    const auto b = values(t, encode_sentence(t, reversed, emb, enc).summary);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(a[k] == doctest::Approx(b[4 + k]).epsilon(1e-14));
      CHECK(a[4 + k] == doctest::Approx(b[k]).epsilon(1e-14));
    }
  }

  SUBCASE("empty sentence") {
    StackedBiLstm enc = StackedBiLstm::zeros(3, 4, 1);
    Tape t;
    CHECK_THROWS_AS(encode_sentence(t, std::vector<std::size_t>{}, emb, enc), ContractError);
  }
}

TEST_CASE("process encoding") {
  Rng rng(4);
  Tensor emb(Shape{8, 3});
  for (auto& v : emb.values) v = rng.uniform(-1, 1);
  std::vector<std::vector<std::size_t>> doc{{1, 2}, {3}, {4, 5, 6}, {7, 1}};

  SUBCASE("single sentence") {
    StackedBiLstm se = StackedBiLstm::random(3, 4, 2, rng), pe = StackedBiLstm::random(8, 4, 2, rng);
    Tape t;
    auto out = encode_process(t, {{1, 2}}, emb, se, pe);
    CHECK(out.size() == 1);
    CHECK(t.shape(out[0]) == Shape{8});
  }

  SUBCASE("zero parameters") {
    StackedBiLstm se = StackedBiLstm::zeros(3, 4, 2), pe = StackedBiLstm::zeros(8, 4, 2);
    Tape t;
    for (Var v : encode_process(t, doc, emb, se, pe)) {
      for (double x : t.value(v)) CHECK(x == 0.0);
    }
  }

  SUBCASE("causal encoding depends only on the prefix") {
    StackedBiLstm se = StackedBiLstm::random(3, 4, 2, rng), pe = StackedBiLstm::random(8, 4, 2, rng);
    Tape t;
    auto full = encode_process(t, doc, emb, se, pe, {}, true);
    for (std::size_t l = 1; l <= doc.size(); ++l) {
      std::vector<std::vector<std::size_t>> prefix(doc.begin(), doc.begin() + static_cast<std::ptrdiff_t>(l));
      auto part = encode_process(t, prefix, emb, se, pe, {}, true);
      const auto a = values(t, full[l - 1]), b = values(t, part[l - 1]);
      for (std::size_t k = 0; k < 8; ++k) CHECK(a[k] == b[k]);
      for (std::size_t k = 4; k < 8; ++k) CHECK(a[k] == 0.0);
    }
    // A stacked bidirectional run lets the future reach the upper forward half.
    auto bi_full = encode_process(t, doc, emb, se, pe);
    std::vector<std::vector<std::size_t>> first(doc.begin(), doc.begin() + 1);
    auto bi_part = encode_process(t, first, emb, se, pe);
    CHECK(values(t, bi_full[0])[0] != values(t, bi_part[0])[0]);
  }

  SUBCASE("empty process") {
    StackedBiLstm se = StackedBiLstm::zeros(3, 4, 1), pe = StackedBiLstm::zeros(8, 4, 1);
    Tape t;
    CHECK_THROWS_AS(encode_process(t, {}, emb, se, pe), ContractError);
  }
}

TEST_CASE("encoder outputs are deterministic") {
  Rng rng(6);
  Tensor emb(Shape{5, 3});
  for (auto& v : emb.values) v = rng.uniform(-1, 1);
  StackedBiLstm se = StackedBiLstm::random(3, 4, 2, rng), pe = StackedBiLstm::random(8, 4, 1, rng);
  std::vector<std::vector<std::size_t>> doc{{1, 2}, {3, 4}};
  Tape a, b;
  auto x = encode_process(a, doc, emb, se, pe);
  auto y = encode_process(b, doc, emb, se, pe);
  for (std::size_t l = 0; l < 2; ++l) CHECK(values(a, x[l]) == values(b, y[l]));
}

TEST_CASE("sentence summary gradients pass finite differences") {
  Rng rng(7);
  Tensor emb(Shape{5, 3});
  for (auto& v : emb.values) v = rng.uniform(-1, 1);
  StackedBiLstm enc = StackedBiLstm::random(3, 3, 2, rng);
  std::vector<NamedTensor> params{{"embedding", &emb}};
  StackedBiLstm::visit(enc, "enc", [&](const std::string& n, Tensor& t) { params.push_back({n, &t}); });
  Tensor w(Shape{6});
  for (auto& v : w.values) v = rng.uniform(-1, 1);
  const auto r = check_gradients(params, [&](Tape& t) {
    Var s = encode_sentence(t, std::vector<std::size_t>{1, 3, 2, 1}, emb, enc).summary;
    return sum(mul(s, t.constant(w)));
  });
  CHECK(r.max_rel_error < 1e-4);
}

}  // TEST_SUITE
