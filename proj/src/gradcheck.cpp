#include "procstruct/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace procstruct {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult check_gradients(const std::vector<NamedTensor>& params,
                                const std::function<Var(Tape&)>& loss,
                                const GradCheckOptions& options) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Var l = loss(tape);
    tape.backward(l);
    for (const auto& p : params) {
      auto g = tape.gradient_of(*p.tensor);
      std::vector<double> dense(p.tensor->size(), 0.0);
      if (g && !g->empty()) std::copy(g->begin(), g->end(), dense.begin());
      analytic.push_back(std::move(dense));
    }
  }
  if (options.corrupt_factor != 1.0 && !analytic.empty() && !analytic[0].empty()) {
    analytic[0][0] = analytic[0][0] * options.corrupt_factor + (options.corrupt_factor - 1.0);
  }

  auto evaluate = [&]() {
    Tape tape;
    return tape.scalar(loss(tape));
  };

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].tensor->values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = evaluate();
      values[i] = saved - options.step;
      const double minus = evaluate();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double err = relative_error(analytic[k][i], numeric, options.floor);
      ++result.entries;
      if (err > result.max_rel_error || result.worst_entry.empty()) {
        result.max_rel_error = std::max(err, result.max_rel_error);
        if (err >= result.max_rel_error) {
          result.worst_entry = params[k].name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return result;
}

}  // namespace procstruct
