#include "procstruct/on_lstm.hpp"

#include <cmath>

#include "procstruct/error.hpp"

namespace procstruct {

OnLstmCellParams OnLstmCellParams::zeros(std::size_t input, std::size_t hidden, std::size_t chunk) {
  if (chunk == 0 || hidden % chunk != 0) {
    throw DimensionError("chunk factor " + std::to_string(chunk) + " does not divide hidden size " +
                         std::to_string(hidden));
  }
  const std::size_t m = hidden / chunk;
  OnLstmCellParams p;
  p.gates = LstmParams::zeros(input, hidden);
  p.master_forget_w = Tensor(Shape{m, input + hidden});
  p.master_forget_b = Tensor(Shape{m});
  p.master_input_w = Tensor(Shape{m, input + hidden});
  p.master_input_b = Tensor(Shape{m});
  p.chunk = chunk;
  return p;
}

OnLstmCellParams OnLstmCellParams::random(std::size_t input, std::size_t hidden, std::size_t chunk, Rng& rng) {
  OnLstmCellParams p = zeros(input, hidden, chunk);
  p.gates = LstmParams::random(input, hidden, rng);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Tensor* t : {&p.master_forget_w, &p.master_forget_b, &p.master_input_w, &p.master_input_b}) {
    for (auto& v : t->values) v = rng.uniform(-k, k);
  }
  return p;
}

OnLstmStep on_lstm_step(Tape& tape, Var x, Var h_prev, Var c_prev, const OnLstmCellParams& params,
                        const OnLstmOptions& options) {
  const std::size_t d = params.hidden_size();
  const std::size_t chunk = params.chunk;
  if (chunk == 0 || d % chunk != 0 || params.master_size() * chunk != d) {
    throw DimensionError("ON-LSTM: chunk factor " + std::to_string(chunk) + " inconsistent with hidden size " +
                         std::to_string(d) + " and master size " + std::to_string(params.master_size()));
  }
  if (tape.shape(x) != Shape{params.input_size()} || tape.shape(h_prev) != Shape{d} ||
      tape.shape(c_prev) != Shape{d}) {
    throw DimensionError("ON-LSTM step: x " + shape_string(tape.shape(x)) + ", h " +
                         shape_string(tape.shape(h_prev)) + ", c " + shape_string(tape.shape(c_prev)) +
                         " do not fit parameters " + shape_string(params.gates.weight.shape));
  }

  Var xh = concat({x, h_prev});
  Var z = add(matmul(tape.param(params.gates.weight), xh), tape.param(params.gates.bias));

  OnLstmStep s;
  s.input_gate = sigmoid(slice(z, 0, d));
  s.forget_gate = sigmoid(slice(z, d, d));
  s.output_gate = sigmoid(slice(z, 2 * d, d));
  s.candidate = tanh(slice(z, 3 * d, d));

  auto master = [&](const Tensor& w, const Tensor& b) {
    return cumax(add(matmul(tape.param(w), xh), tape.param(b)));
  };

  std::optional<Var> forget_ladder;
  if (!options.override_gates.forget || options.master_input == MasterInputMode::SharedForget) {
    forget_ladder = repeat_each(master(params.master_forget_w, params.master_forget_b), chunk);
  }
  s.master_forget = options.override_gates.forget
                        ? tape.constant(Tensor(Shape{d}, *options.override_gates.forget))
                        : *forget_ladder;
  if (options.override_gates.input) {
    s.master_input = tape.constant(Tensor(Shape{d}, *options.override_gates.input));
  } else if (options.master_input == MasterInputMode::SharedForget) {
    s.master_input = one_minus(*forget_ladder);
  } else {
    s.master_input = one_minus(repeat_each(master(params.master_input_w, params.master_input_b), chunk));
  }

  s.overlap = mul(s.master_forget, s.master_input);
  // f * w + (mf - w) written as mf - w * (1 - f), which keeps 0 <= f^ <= mf
  // exact under rounding; likewise for the input side.
  s.eff_forget = sub(s.master_forget, mul(s.overlap, one_minus(s.forget_gate)));
  s.eff_input = sub(s.master_input, mul(s.overlap, one_minus(s.input_gate)));
  s.cell = add(mul(s.eff_forget, c_prev), mul(s.eff_input, s.candidate));
  s.hidden = mul(s.output_gate, tanh(s.cell));
  return s;
}

OnLstmRun on_lstm_forward(Tape& tape, std::span<const Var> inputs, std::span<const OnLstmCellParams> layers,
                          const OnLstmOptions& options, const Dropout& dropout) {
  if (inputs.empty()) throw ContractError("ON-LSTM over an empty sequence");
  if (layers.empty()) throw ContractError("ON-LSTM without layers");
  for (std::size_t k = 1; k < layers.size(); ++k) {
    if (layers[k].input_size() != layers[k - 1].hidden_size()) {
      throw DimensionError("ON-LSTM layer " + std::to_string(k) + " expects input " +
                           std::to_string(layers[k].input_size()) + " but layer below has hidden size " +
                           std::to_string(layers[k - 1].hidden_size()));
    }
  }
  OnLstmRun run;
  std::vector<Var> current(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (k > 0) {
      for (auto& v : current) v = dropout.apply(tape, v);
    }
    const std::size_t d = layers[k].hidden_size();
    Var h = tape.constant(Tensor(Shape{d}));
    Var c = tape.constant(Tensor(Shape{d}));
    std::vector<OnLstmStep> steps;
    steps.reserve(current.size());
    for (auto& x : current) {
      OnLstmStep s = on_lstm_step(tape, x, h, c, layers[k], options);
      h = s.hidden;
      c = s.cell;
      x = h;
      steps.push_back(s);
    }
    run.steps.push_back(std::move(steps));
  }
  run.outputs = std::move(current);
  return run;
}

}  // namespace procstruct
