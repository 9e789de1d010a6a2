#include <doctest.h>

#include <cmath>

#include "procstruct/error.hpp"
#include "procstruct/on_lstm.hpp"

using namespace procstruct;

namespace {

std::vector<double> values(const Tape& t, Var v) {
  auto s = t.value(v);
  return {s.begin(), s.end()};
}

std::vector<double> cumax_oracle(const std::vector<double>& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  std::vector<double> e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (e[i] = std::exp(x[i] - mx));
  double run = 0.0;
  for (auto& v : e) v = (run += v / z);
  return e;
}

std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST_SUITE("ordered_neurons") {

TEST_CASE("cumax examples") {
  Tape t;
  const auto u = values(t, cumax(t.constant(Tensor::vector({0, 0, 0}))));
  CHECK(u[0] == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(u[2] == 1.0);
  const auto s = values(t, cumax(t.constant(Tensor::vector({20, 0, 0}))));
  for (double v : s) CHECK(v == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("cumax matches softmax then prefix sum") {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.range(2, 64));
    const auto x = random_vector(n, rng, 10.0);
    Tape t;
    const auto got = values(t, cumax(t.constant(Tensor::vector(x))));
    const auto want = cumax_oracle(x);
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(std::abs(got[i] - want[i]) <= 1e-12);
      REQUIRE(got[i] >= 0.0);
      REQUIRE(got[i] <= 1.0 + 1e-12);
      if (i) REQUIRE(got[i] >= got[i - 1]);
    }
    REQUIRE(std::abs(got.back() - 1.0) <= 1e-9);
  }
}

TEST_CASE("forced open master gates reduce to a plain LSTM step") {
  Rng rng(5);
  OnLstmCellParams p = OnLstmCellParams::random(3, 8, 2, rng);
  OnLstmOptions o;
  o.override_gates.forget = 1.0;
  o.override_gates.input = 1.0;
  Tape t;
  Var x = t.constant(Tensor::vector(random_vector(3, rng)));
  Var h = t.constant(Tensor::vector(random_vector(8, rng)));
  Var c = t.constant(Tensor::vector(random_vector(8, rng)));
  OnLstmStep s = on_lstm_step(t, x, h, c, p, o);
  LstmState ref = lstm_step(t, x, h, c, p.gates);
  const auto ef = values(t, s.eff_forget), f = values(t, s.forget_gate);
  const auto ei = values(t, s.eff_input), i = values(t, s.input_gate);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(std::abs(ef[k] - f[k]) <= 1e-15);
    CHECK(std::abs(ei[k] - i[k]) <= 1e-15);
  }
  const auto a = values(t, s.hidden), b = values(t, ref.h);
  for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(a[k] - b[k]) <= 1e-9);
}

TEST_CASE("closed master forget gate erases history") {
  Rng rng(6);
  OnLstmCellParams p = OnLstmCellParams::random(3, 4, 1, rng);
  OnLstmOptions o;
  o.override_gates.forget = 0.0;
  Tape t;
  OnLstmStep s = on_lstm_step(t, t.constant(Tensor::vector(random_vector(3, rng))),
                              t.constant(Tensor::vector(random_vector(4, rng))),
                              t.constant(Tensor::vector(random_vector(4, rng))), p, o);
  const auto w = values(t, s.overlap), ef = values(t, s.eff_forget), ei = values(t, s.eff_input);
  const auto mi = values(t, s.master_input), g = values(t, s.candidate), c = values(t, s.cell);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(w[k] == 0.0);
    CHECK(ef[k] == 0.0);
    CHECK(ei[k] == mi[k]);
    CHECK(std::abs(c[k] - mi[k] * g[k]) < 1e-15);
  }
}

TEST_CASE("gate identities and bounds on random steps") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t chunk = trial % 2 ? 2 : 1;
    OnLstmCellParams p = OnLstmCellParams::random(3, 6, chunk, rng);
    for (auto* w : {&p.master_forget_w, &p.master_input_w, &p.gates.weight}) {
      for (auto& v : w->values) v *= 4.0;
    }
    Tape t;
    OnLstmStep s = on_lstm_step(t, t.constant(Tensor::vector(random_vector(3, rng, 2.0))),
                                t.constant(Tensor::vector(random_vector(6, rng))),
                                t.constant(Tensor::vector(random_vector(6, rng, 2.0))), p);
    const auto f = values(t, s.forget_gate), i = values(t, s.input_gate);
    const auto mf = values(t, s.master_forget), mi = values(t, s.master_input), w = values(t, s.overlap);
    const auto ef = values(t, s.eff_forget), ei = values(t, s.eff_input);
    for (std::size_t k = 0; k < 6; ++k) {
      REQUIRE(w[k] == mf[k] * mi[k]);
      REQUIRE(std::abs(ef[k] - (f[k] * w[k] + (mf[k] - w[k]))) <= 1e-15);
      REQUIRE(std::abs(ei[k] - (i[k] * w[k] + (mi[k] - w[k]))) <= 1e-15);
      REQUIRE(ef[k] >= 0.0);
      REQUIRE(ef[k] <= mf[k]);
      REQUIRE(ei[k] >= 0.0);
      REQUIRE(ei[k] <= mi[k]);
      if (k) {
        REQUIRE(mf[k] >= mf[k - 1]);
        REQUIRE(mi[k] <= mi[k - 1]);
      }
    }
  }
}

TEST_CASE("chunked master gates repeat each entry") {
  Rng rng(8);
  OnLstmCellParams p = OnLstmCellParams::random(2, 6, 3, rng);
  Tape t;
  OnLstmStep s = on_lstm_step(t, t.constant(Tensor::vector({0.5, -0.5})), t.constant(Tensor(Shape{6})),
                              t.constant(Tensor(Shape{6})), p);
  const auto mf = values(t, s.master_forget);
  CHECK(mf[0] == mf[1]);
  CHECK(mf[1] == mf[2]);
  CHECK(mf[3] == mf[5]);
  CHECK(mf[5] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("shared-forget mode ties the master input to the forget ladder") {
  Rng rng(9);
  OnLstmCellParams p = OnLstmCellParams::random(2, 4, 1, rng);
  OnLstmOptions o;
  o.master_input = MasterInputMode::SharedForget;
  Tape t;
  OnLstmStep s = on_lstm_step(t, t.constant(Tensor::vector({0.5, -0.5})), t.constant(Tensor(Shape{4})),
                              t.constant(Tensor(Shape{4})), p, o);
  const auto mf = values(t, s.master_forget), mi = values(t, s.master_input);
  for (std::size_t k = 0; k < 4; ++k) CHECK(mi[k] == 1.0 - mf[k]);
}

TEST_CASE("chunk must divide the hidden size") {
  CHECK_THROWS_AS(OnLstmCellParams::zeros(2, 6, 4), DimensionError);
}

TEST_CASE("one layer, one step equals the single step") {
  Rng rng(10);
  std::vector<OnLstmCellParams> layers{OnLstmCellParams::random(3, 4, 2, rng)};
  Tape t;
  Var x = t.constant(Tensor::vector(random_vector(3, rng)));
  OnLstmRun run = on_lstm_forward(t, std::vector<Var>{x}, layers);
  OnLstmStep s = on_lstm_step(t, x, t.constant(Tensor(Shape{4})), t.constant(Tensor(Shape{4})), layers[0]);
  CHECK(values(t, run.outputs[0]) == values(t, s.hidden));
  CHECK(values(t, run.steps[0][0].master_forget) == values(t, s.master_forget));
}

TEST_CASE("zero parameters give the uniform ladder") {
  std::vector<OnLstmCellParams> layers{OnLstmCellParams::zeros(3, 4, 1), OnLstmCellParams::zeros(4, 4, 1)};
  Rng rng(11);
  Tape t;
  std::vector<Var> xs;
  for (int k = 0; k < 3; ++k) xs.push_back(t.constant(Tensor::vector(random_vector(3, rng))));
  OnLstmRun run = on_lstm_forward(t, xs, layers);
  CHECK(run.steps.size() == 2);
  for (const auto& layer : run.steps) {
    for (const auto& step : layer) {
      const auto mf = values(t, step.master_forget);
      for (std::size_t k = 0; k < 4; ++k) CHECK(mf[k] == doctest::Approx((k + 1) / 4.0).epsilon(1e-15));
      for (double h : values(t, step.hidden)) CHECK(std::isfinite(h));
    }
  }
}

TEST_CASE("forward rejects empty input and broken layer chains") {
  std::vector<OnLstmCellParams> layers{OnLstmCellParams::zeros(3, 4, 1), OnLstmCellParams::zeros(5, 4, 1)};
  Tape t;
  CHECK_THROWS_AS(on_lstm_forward(t, std::vector<Var>{}, layers), ContractError);
  CHECK_THROWS_AS(on_lstm_forward(t, std::vector<Var>{t.constant(Tensor(Shape{3}))}, layers), DimensionError);
}

}  // TEST_SUITE
