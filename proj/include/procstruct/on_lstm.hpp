#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "procstruct/sequence_encoder.hpp"

namespace procstruct {

// How the master input gate is produced.
enum class MasterInputMode {
  // 1 - cumax over its own parameters (the usual ON-LSTM definition).
  Independent,
  // 1 - cumax over the master *forget* parameters, i.e. the two master gates
  // share one split point. Kept for comparison runs.
  SharedForget,
};

// Replaces master gate values with constants. Used by ablations and by the
// tests that reduce the cell to a plain LSTM; cumax itself can never produce
// an all-ones master input gate because its last entry is always 1.
struct MasterGateOverride {
  std::optional<double> forget;
  std::optional<double> input;
};

struct OnLstmCellParams {
  LstmParams gates;       // i, f, o, candidate over [x ; h]
  Tensor master_forget_w;  // [D/C x (in + D)]
  Tensor master_forget_b;  // [D/C]
  Tensor master_input_w;
  Tensor master_input_b;
  std::size_t chunk = 1;

  std::size_t hidden_size() const { return gates.hidden_size(); }
  std::size_t input_size() const { return gates.input_size(); }
  std::size_t master_size() const { return master_forget_b.size(); }

  static OnLstmCellParams zeros(std::size_t input, std::size_t hidden, std::size_t chunk);
  static OnLstmCellParams random(std::size_t input, std::size_t hidden, std::size_t chunk, Rng& rng);

  template <class Self, class F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    LstmParams::visit(self.gates, prefix + ".gates", f);
    f(prefix + ".master_forget.weight", self.master_forget_w);
    f(prefix + ".master_forget.bias", self.master_forget_b);
    f(prefix + ".master_input.weight", self.master_input_w);
    f(prefix + ".master_input.bias", self.master_input_b);
  }
};

struct OnLstmOptions {
  MasterInputMode master_input = MasterInputMode::Independent;
  MasterGateOverride override_gates;
};

// One time step. Master gates are stored expanded to the full hidden size.
struct OnLstmStep {
  Var input_gate;     // i
  Var forget_gate;    // f
  Var output_gate;    // o
  Var candidate;      // c-hat (the tanh candidate)
  Var master_forget;  // f-tilde
  Var master_input;   // i-tilde
  Var overlap;        // w = f-tilde * i-tilde
  Var eff_forget;     // f-hat = f * w + (f-tilde - w)
  Var eff_input;      // i-hat = i * w + (i-tilde - w)
  Var cell;
  Var hidden;
};


OnLstmStep on_lstm_step(Tape& tape, Var x, Var h_prev, Var c_prev, const OnLstmCellParams& params,
                        const OnLstmOptions& options = {});

struct OnLstmRun {
  std::vector<Var> outputs;                  // top-layer hidden state per step
  std::vector<std::vector<OnLstmStep>> steps;  // [layer][step]
};

// Stacked ON-LSTM from zero initial state; layer k reads layer k-1's hidden
// sequence.
OnLstmRun on_lstm_forward(Tape& tape, std::span<const Var> inputs, std::span<const OnLstmCellParams> layers,
                          const OnLstmOptions& options = {}, const Dropout& dropout = {});

}  // namespace procstruct
