#include <string>

#include "procstruct/gradcheck.hpp"
#include "procstruct/on_lstm.hpp"
#include "procstruct/process_lm.hpp"
#include "procstruct/rng.hpp"

namespace procstruct {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

// Projects an arbitrary output onto fixed random weights so that every
// output entry carries a distinct gradient (plain sum() hides softmax errors).
Var project(Tape& tape, Var out, Rng& rng) {
  Tensor w(tape.shape(out));
  for (auto& v : w.values) v = rng.uniform(-1.0, 1.0);
  return sum(mul(out, tape.constant(std::move(w))));
}

// Checks f over `inputs`, each bound as a parameter.
GradCheckResult check(std::vector<Tensor> inputs, std::uint64_t seed, const GradCheckOptions& options,
                      const std::function<Var(Tape&, std::vector<Var>&)>& f) {
  std::vector<NamedTensor> params;
  for (std::size_t k = 0; k < inputs.size(); ++k) params.push_back({"x" + std::to_string(k), &inputs[k]});
  return check_gradients(
      params,
      [&](Tape& tape) {
        std::vector<Var> vars;
        for (auto& t : inputs) vars.push_back(tape.param(t));
        Rng proj(mix_seed(seed, 0x9a));
        return project(tape, f(tape, vars), proj);
      },
      options);
}

using Unary = Var (*)(Var);

OpCheck unary_check(const char* name, Unary op) {
  return {name, [op](std::uint64_t seed, const GradCheckOptions& o) {
            Rng rng(seed);
            return check({random_tensor({6}, rng, -2.0, 2.0)}, seed, o,
                         [op](Tape&, std::vector<Var>& v) { return op(v[0]); });
          }};
}

std::vector<std::vector<std::string>> toy_sentences() {
  return {{"w0", "w1", "w2", "w3"}, {"w4", "w5", "w6"}, {"w7", "w8", "w9", "w10", "w11"}, {"w12", "w13", "w14", "w15"}};
}

std::vector<OpCheck> build() {
  std::vector<OpCheck> checks;
  checks.push_back({"matmul", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); });
                    }});
  checks.push_back({"matvec", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({3, 4}, rng), random_tensor({4}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); });
                    }});
  for (auto [name, kind] : {std::pair{"add", 0}, {"sub", 1}, {"mul", 2}}) {
    checks.push_back({name, [kind](std::uint64_t seed, const GradCheckOptions& o) {
                        Rng rng(seed);
                        return check({random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, seed, o,
                                     [kind](Tape&, std::vector<Var>& v) {
                                       return kind == 0 ? add(v[0], v[1]) : kind == 1 ? sub(v[0], v[1]) : mul(v[0], v[1]);
                                     });
                      }});
  }
  checks.push_back({"scale_shift", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({5}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return scale_shift(v[0], -1.7, 0.3); });
                    }});
  checks.push_back(unary_check("sigmoid", &sigmoid));
  checks.push_back(unary_check("tanh", &tanh));
  checks.push_back(unary_check("softmax", &softmax));
  checks.push_back(unary_check("cumsum", &cumsum));
  checks.push_back(unary_check("cumax", &cumax));
  checks.push_back({"concat", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({3}, rng), random_tensor({4}, rng), random_tensor({2}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return concat({v[0], v[1], v[2]}); });
                    }});
  checks.push_back({"concat_rows", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({2, 3}, rng), random_tensor({1, 3}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return concat({v[0], v[1]}, 0); });
                    }});
  checks.push_back({"concat_cols", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({2, 3}, rng), random_tensor({2, 2}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return concat({v[0], v[1]}, 1); });
                    }});
  checks.push_back({"slice", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({7}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return slice(v[0], 2, 3); });
                    }});
  checks.push_back({"gather_row", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({4, 3}, rng)}, seed, o, [](Tape&, std::vector<Var>& v) {
                        // The same row twice: gradients must accumulate.
                        return concat({gather_row(v[0], 1), gather_row(v[0], 3), gather_row(v[0], 1)});
                      });
                    }});
  checks.push_back({"repeat_each", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({3}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return repeat_each(v[0], 4); });
                    }});
  checks.push_back({"sum", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      return check({random_tensor({2, 3}, rng)}, seed, o,
                                   [](Tape&, std::vector<Var>& v) { return sum(v[0]); });
                    }});
  checks.push_back({"cross_entropy", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      const auto target = static_cast<std::size_t>(rng.range(0, 5));
                      return check({random_tensor({6}, rng, -3.0, 3.0)}, seed, o,
                                   [target](Tape&, std::vector<Var>& v) { return cross_entropy(v[0], target); });
                    }});
  checks.push_back({"lstm_step", [](std::uint64_t seed, const GradCheckOptions& o) {
                      Rng rng(seed);
                      LstmParams p = LstmParams::random(3, 4, rng);
                      Tensor x = random_tensor({3}, rng), h = random_tensor({4}, rng), c = random_tensor({4}, rng);
                      std::vector<NamedTensor> params{
                          {"weight", &p.weight}, {"bias", &p.bias}, {"x", &x}, {"h", &h}, {"c", &c}};
                      return check_gradients(
                          params,
                          [&](Tape& tape) {
                            LstmState s = lstm_step(tape, tape.param(x), tape.param(h), tape.param(c), p);
                            Rng proj(mix_seed(seed, 0x9a));
                            return project(tape, concat({s.h, s.c}), proj);
                          },
                          o);
                    }});
  checks.push_back({"on_lstm", [](std::uint64_t seed, const GradCheckOptions& o) {
                      // D=8, three steps, two layers, chunked master gates.
                      Rng rng(seed);
                      std::vector<OnLstmCellParams> layers{OnLstmCellParams::random(4, 8, 2, rng),
                                                           OnLstmCellParams::random(8, 8, 2, rng)};
                      std::vector<Tensor> xs{random_tensor({4}, rng), random_tensor({4}, rng),
                                             random_tensor({4}, rng)};
                      std::vector<NamedTensor> params;
                      for (std::size_t k = 0; k < layers.size(); ++k) {
                        OnLstmCellParams::visit(layers[k], "layer" + std::to_string(k),
                                                [&](const std::string& n, Tensor& t) { params.push_back({n, &t}); });
                      }
                      for (std::size_t k = 0; k < xs.size(); ++k) params.push_back({"x" + std::to_string(k), &xs[k]});
                      return check_gradients(
                          params,
                          [&](Tape& tape) {
                            std::vector<Var> in;
                            for (auto& x : xs) in.push_back(tape.param(x));
                            OnLstmRun run = on_lstm_forward(tape, in, layers);
                            Rng proj(mix_seed(seed, 0x9a));
                            return project(tape, concat(run.outputs), proj);
                          },
                          o);
                    }});
  checks.push_back({"lm_loss", [](std::uint64_t seed, const GradCheckOptions& o) {
                      // 16 words plus the 4 reserved tokens: V=20.
                      ProcessDoc vocab_doc;
                      vocab_doc.sentences = toy_sentences();
                      Rng rng(seed);
                      ProcessDoc doc;
                      for (int s = 0; s < 3; ++s) {
                        Sentence sentence;
                        const auto n = rng.range(1, 5);
                        for (std::int64_t w = 0; w < n; ++w) sentence.push_back("w" + std::to_string(rng.range(0, 15)));
                        doc.sentences.push_back(sentence);
                      }
                      LmConfig c;
                      c.emb_dim = 8;
                      c.hidden = 8;
                      c.d_model = 8;
                      c.chunk = 1;
                      c.seed = seed;
                      ProcessLm m = ProcessLm::create(c, build_vocabulary({vocab_doc}));
                      const auto encoded = m.encode(doc);
                      return check_gradients(
                          m.named_params(), [&](Tape& tape) { return forward_doc(tape, m, encoded).total; }, o);
                    }});
  return checks;
}

}  // namespace

const std::vector<OpCheck>& registered_checks() {
  static const std::vector<OpCheck> checks = build();
  return checks;
}

}  // namespace procstruct
