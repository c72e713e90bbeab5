#include "adam.hpp"

#include <cmath>
#include <stdexcept>

namespace ef {

void Adam::step(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    if (!p->grad_live || p->grad.size() != p->value.size())
      throw std::invalid_argument("adam: missing gradient for parameter " +
                                  p->name);
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    Moments& mo = moments_[p->name];
    if (mo.m.empty()) {
      mo.m.assign(p->size(), 0.0);
      mo.v.assign(p->size(), 0.0);
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      p->value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      if (!std::isfinite(p->value[i]))
        throw NumericError("adam: non-finite update for parameter " + p->name);
    }
    p->zero_grad();
  }
}

}  // namespace ef
