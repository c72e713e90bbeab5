#include "gradcheck.hpp"

#include <cmath>

namespace ef {

namespace {

void record(GradCheckReport& rep, const std::string& where, std::size_t i,
            double analytic, double numeric, double floor) {
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  // both sides under the floor: agreement within difference-quotient noise
  const double rel =
      scale < floor ? 0.0 : std::fabs(analytic - numeric) / scale;
  ++rep.checked;
  if (rel > rep.max_rel_err) {
    rep.max_rel_err = rel;
    rep.worst = {where, i, analytic, numeric, rel};
  }
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarGraphFn& op,
                                        const Shape& shape,
                                        const std::vector<double>& input,
                                        double h, double floor) {
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor x = tape.input(shape, input);
    Tensor loss = op(tape, x);
    tape.backward(loss);
    analytic = x.grad();
    if (analytic.empty()) analytic.assign(input.size(), 0.0);
  }
  auto eval = [&](const std::vector<double>& v) {
    Tape tape;
    Tensor x = tape.input(shape, v);
    return op(tape, x).scalar();
  };
  GradCheckReport rep;
  std::vector<double> probe = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    probe[i] = input[i] + h;
    const double fp = eval(probe);
    probe[i] = input[i] - h;
    const double fm = eval(probe);
    probe[i] = input[i];
    record(rep, "input", i, analytic[i], (fp - fm) / (2.0 * h), floor);
  }
  return rep;
}

GradCheckReport finite_difference_check_params(
    const std::function<double()>& loss,
    const std::function<void()>& populate_grads,
    const std::vector<Parameter*>& params, std::size_t samples, Rng& rng,
    double h, double floor) {
  for (Parameter* p : params) p->zero_grad();
  populate_grads();
  GradCheckReport rep;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    std::vector<std::size_t> coords;
    if (samples == 0 || samples >= p->size()) {
      coords.resize(p->size());
      for (std::size_t i = 0; i < p->size(); ++i) coords[i] = i;
    } else {
      for (std::size_t s = 0; s < samples; ++s)
        coords.push_back(rng.index(p->size()));
    }
    const std::vector<double> analytic =
        p->grad.empty() ? std::vector<double>(p->size(), 0.0) : p->grad;
    for (std::size_t i : coords) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double fp = loss();
      p->value[i] = keep - h;
      const double fm = loss();
      p->value[i] = keep;
      record(rep, p->name, i, analytic[i], (fp - fm) / (2.0 * h), floor);
    }
  }
  return rep;
}

}  // namespace ef
