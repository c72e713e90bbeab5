#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace ef {

struct GradCheckEntry {
  std::string where;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  GradCheckEntry worst;
  bool passed(double tolerance) const { return max_rel_err < tolerance; }
};

// Builds a scalar-valued graph from an input leaf. Must be pure: the same
// input vector always yields the same loss.
using ScalarGraphFn = std::function<Tensor(Tape&, Tensor)>;

// Central-difference check of the analytic gradient of `op` at `input`.
// rel_err = |a - n| / max(|a|, |n|), taken as 0 when both magnitudes sit
// under `floor`: a structurally zero gradient against quotient noise is
// agreement, not error.
GradCheckReport finite_difference_check(const ScalarGraphFn& op,
                                        const Shape& shape,
                                        const std::vector<double>& input,
                                        double h = 1e-5,
                                        double floor = 1e-6);

// Same check against the gradients of a set of parameters. `loss` re-runs
// the forward pass with the parameters' current values; `populate_grads`
// runs forward+backward once so p->grad holds the analytic gradient.
// Checks `samples` coordinates per parameter (all, if samples == 0).
GradCheckReport finite_difference_check_params(
    const std::function<double()>& loss,
    const std::function<void()>& populate_grads,
    const std::vector<Parameter*>& params, std::size_t samples, Rng& rng,
    double h = 1e-5, double floor = 1e-6);

}  // namespace ef
