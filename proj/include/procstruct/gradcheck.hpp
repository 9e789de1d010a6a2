#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "procstruct/tape.hpp"

namespace procstruct {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct GradCheckOptions {
  double step = 1e-4;
  // Gradients smaller than this in magnitude are compared absolutely. Central
  // differences of a loss near 50 carry about 1e-10 of rounding noise at
  // step 1e-4, so a lower floor turns that noise into relative error.
  double floor = 1e-5;
  // Multiply one analytic gradient entry by this factor before comparing.
  // Anything but 1.0 is a negative control for the checker itself.
  double corrupt_factor = 1.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst_entry;
};

// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

// Builds the scalar loss on a fresh tape (parameters bound with Tape::param)
// and compares reverse-mode gradients against central differences for every
// entry of every listed tensor.
GradCheckResult check_gradients(const std::vector<NamedTensor>& params,
                                const std::function<Var(Tape&)>& loss,
                                const GradCheckOptions& options = {});

// A named finite-difference check over freshly drawn inputs.
struct OpCheck {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed, const GradCheckOptions& options)> run;
};

// One check per differentiable primitive, then the composite cells and the
// full language-model loss at toy size (V=20, d_emb=8, h=8, D=8, C=1).
const std::vector<OpCheck>& registered_checks();

}  // namespace procstruct
