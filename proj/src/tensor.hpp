#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace ef {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Raised when a forward value or a gradient stops being finite.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A named, persistent weight buffer. Gradients accumulate across backward
// passes until an optimizer step consumes them.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first backward pass touches it
  bool trainable = true;
  bool grad_live = false;

  std::size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
  void zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
    grad_live = false;
  }
};

class Tape;

// Handle to a node in a Tape. Cheap to copy; valid while the tape lives.
class Tensor {
 public:
  Tensor() = default;
  const Shape& shape() const;
  std::size_t size() const;
  const std::vector<double>& value() const;
  const std::vector<double>& grad() const;
  double scalar() const;  // value of a single-element tensor
  std::size_t id() const { return id_; }
  bool defined() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

enum class NormKind { kScaleOnly, kStandard };

// Single-threaded computation tape for reverse-mode differentiation.
// Nodes are appended in topological order; backward walks ids in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t node_count() const { return nodes_.size(); }

  // Leaves.
  Tensor input(Shape shape, std::vector<double> data);
  Tensor scalar_input(double v) { return input({1}, {v}); }
  // Binds a parameter; repeated calls for the same parameter return the
  // same node so gradients accumulate in one place.
  Tensor param(Parameter& p);

  // Shape ops.
  Tensor reshape(Tensor a, Shape shape);
  Tensor transpose(Tensor a);
  Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
  Tensor slice_cols(Tensor a, std::size_t start, std::size_t count);
  Tensor row(Tensor a, std::size_t index);

  // Arithmetic.
  Tensor add(Tensor a, Tensor b);
  Tensor add_row(Tensor m, Tensor v);  // broadcast v over every row of m
  Tensor mul(Tensor a, Tensor b);
  Tensor scale(Tensor a, double s);
  Tensor weighted_sum(const std::vector<std::pair<double, Tensor>>& terms);
  Tensor matmul(Tensor a, Tensor b);

  // Reductions.
  Tensor mean(Tensor a, std::size_t axis);
  Tensor mean_all(Tensor a);
  Tensor sum_all(Tensor a);

  // Lookups and nonlinearities.
  Tensor embedding(Tensor table, const std::vector<int>& ids);
  Tensor tanh_op(Tensor a);
  Tensor relu(Tensor a);
  Tensor softmax(Tensor a, std::size_t axis);
  Tensor log_softmax(Tensor a, std::size_t axis);
  Tensor layer_norm(Tensor x, Tensor gamma, Tensor beta, NormKind kind,
                    double eps = 1e-6);  // beta ignored for kScaleOnly
  Tensor masked_fill(Tensor a, const std::vector<std::uint8_t>& keep,
                     double fill);

  // Losses.
  Tensor cross_entropy(Tensor logits, const std::vector<int>& targets,
                       int ignore_index = -1);
  Tensor mse(Tensor pred, double target);

  // Populates gradients of everything `loss` depends on; bound parameters
  // receive (and accumulate) their gradients scaled by `seed`.
  void backward(Tensor loss, double seed = 1.0);

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated on demand during backward
    std::function<void(Tape&, Node&)> backfn;
    Parameter* bound = nullptr;
    const char* op = "input";
  };

  Node& node(std::size_t id) { return *nodes_[id]; }
  const Node& node(std::size_t id) const { return *nodes_[id]; }
  Tensor make(const char* op, Shape shape, std::vector<double> val);
  std::vector<double>& grad_of(std::size_t id);
  void check_finite(const Node& n, const char* op) const;
  static void require(bool cond, const std::string& msg);

  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<std::pair<Parameter*, std::size_t>> bound_;
  bool backward_done_ = false;

  friend class Tensor;
};

// Uniform init in +-1/sqrt(fan_in); fan_in is rows for weight matrices and
// the embedding width for lookup tables.
void init_uniform_fan_in(Parameter& p, std::size_t fan_in, Rng& rng);

}  // namespace ef
