#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace ef {

struct AdamConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. Moment buffers are keyed by parameter name; the step
// counter is shared so every call advances the schedule by exactly one.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return step_; }

  // Applies one update to every trainable parameter and zeroes its gradient.
  // A parameter that never received a gradient since the last step is an
  // error: it means the training loop passed the wrong parameter set.
  void step(const std::vector<Parameter*>& params);

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace ef
