#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "gradcheck.hpp"
#include "rng.hpp"
#include "tensor.hpp"

using namespace ef;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -2.0,
                               double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Projects an op output to a scalar with fixed random weights so the
// upstream gradient in the check is nontrivial.
ScalarGraphFn project(std::function<Tensor(Tape&, Tensor)> op,
                      std::vector<double> weights) {
  return [op = std::move(op), weights](Tape& t, Tensor x) {
    Tensor y = op(t, x);
    Tensor w = t.input(y.shape(), weights);
    return t.sum_all(t.mul(y, w));
  };
}

}  // namespace

TEST_CASE("softmax values") {
  Tape t;
  SUBCASE("symmetry") {
    Tensor y = t.softmax(t.input({3}, {0, 0, 0}), 0);
    for (double v : y.value()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
  SUBCASE("stability at large magnitude") {
    Tensor y = t.softmax(t.input({2}, {1000, 0}), 0);
    CHECK(y.value()[0] == doctest::Approx(1.0));
    CHECK(y.value()[1] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("direct evaluation") {
    // oracle: e^{x_i} / sum_j e^{x_j} computed without max subtraction
    const std::vector<double> x = {1, 2, 3};
    double z = 0;
    for (double v : x) z += std::exp(v);
    Tensor y = t.softmax(t.input({3}, x), 0);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(y.value()[i] == doctest::Approx(std::exp(x[i]) / z).epsilon(1e-12));
    CHECK(y.value()[0] == doctest::Approx(0.09003).epsilon(1e-4));
    CHECK(y.value()[1] == doctest::Approx(0.24473).epsilon(1e-4));
    CHECK(y.value()[2] == doctest::Approx(0.66524).epsilon(1e-4));
  }
  SUBCASE("rows sum to one under extreme inputs") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
      Tape tape;
      Tensor y = tape.softmax(tape.input({4, 6}, random_vec(24, rng, -1e3, 1e3)), 1);
      for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 6; ++j) s += y.value()[i * 6 + j];
        CHECK(std::fabs(s - 1.0) < 1e-9);
      }
    }
  }
  SUBCASE("invalid axis rejected") {
    CHECK_THROWS_AS(t.softmax(t.input({3}, {1, 2, 3}), 1), std::invalid_argument);
  }
}

TEST_CASE("cross entropy values") {
  SUBCASE("huge-margin one hot is near zero") {
    Tape t;
    Tensor logits = t.input({1, 4}, {100, 0, 0, 0});
    CHECK(t.cross_entropy(logits, {0}).scalar() == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("uniform logits give log(V)") {
    Tape t;
    Tensor logits = t.input({2, 100}, std::vector<double>(200, 0.0));
    CHECK(t.cross_entropy(logits, {5, 17}).scalar() ==
          doctest::Approx(std::log(100.0)).epsilon(1e-12));
  }
  SUBCASE("direct evaluation") {
    Tape t;
    Tensor logits = t.input({1, 3}, {1, 2, 3});
    // oracle: -log(e^3 / (e^1+e^2+e^3))
    const double want = -std::log(std::exp(3.0) / (std::exp(1) + std::exp(2) + std::exp(3)));
    CHECK(t.cross_entropy(logits, {2}).scalar() == doctest::Approx(want).epsilon(1e-12));
    CHECK(t.cross_entropy(logits, {2}).scalar() == doctest::Approx(0.40761).epsilon(1e-4));
  }
  SUBCASE("ignore index and empty loss") {
    Tape t;
    Tensor logits = t.input({2, 3}, {1, 2, 3, 1, 2, 3});
    Tensor partial = t.cross_entropy(logits, {-1, 2}, -1);
    Tensor full = t.cross_entropy(logits, {2, 2}, -1);
    CHECK(partial.scalar() == doctest::Approx(full.scalar()));
    CHECK_THROWS_WITH_AS(t.cross_entropy(logits, {-1, -1}, -1),
                         "cross_entropy: empty loss", std::invalid_argument);
  }
  SUBCASE("never negative") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
      Tape t;
      Tensor logits = t.input({3, 7}, random_vec(21, rng, -5, 5));
      CHECK(t.cross_entropy(logits, {int(rng.index(7)), int(rng.index(7)),
                                     int(rng.index(7))}).scalar() >= 0.0);
    }
  }
}

TEST_CASE("mse values") {
  Tape t;
  CHECK(t.mse(t.scalar_input(0.5), 0.5).scalar() == 0.0);
  CHECK(t.mse(t.scalar_input(1.0), -1.0).scalar() == doctest::Approx(4.0));
  CHECK(t.mse(t.scalar_input(0.3), -0.2).scalar() == doctest::Approx(0.25));
}

TEST_CASE("backward basics") {
  SUBCASE("linear") {
    Tape t;
    Tensor w = t.input({3}, {1.0, -2.0, 0.5});
    t.backward(t.sum_all(w));
    for (double g : w.grad()) CHECK(g == doctest::Approx(1.0));
  }
  SUBCASE("quadratic") {
    Tape t;
    Tensor w = t.input({2}, {2.0, -3.0});
    t.backward(t.sum_all(t.mul(w, w)));
    CHECK(w.grad()[0] == doctest::Approx(4.0));
    CHECK(w.grad()[1] == doctest::Approx(-6.0));
  }
  SUBCASE("non-scalar loss rejected") {
    Tape t;
    Tensor w = t.input({2}, {1.0, 2.0});
    CHECK_THROWS_AS(t.backward(w), std::invalid_argument);
  }
  SUBCASE("fan-out accumulates: grad of f+f is twice grad of f") {
    std::vector<double> x = {0.3, -0.7, 1.1};
    std::vector<double> g1, g2;
    {
      Tape t;
      Tensor xt = t.input({3}, x);
      t.backward(t.sum_all(t.tanh_op(xt)));
      g1 = xt.grad();
    }
    {
      Tape t;
      Tensor xt = t.input({3}, x);
      Tensor y = t.tanh_op(xt);
      t.backward(t.add(t.sum_all(y), t.sum_all(y)));
      g2 = xt.grad();
    }
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-12));
  }
  SUBCASE("non-finite parameter gradient names the parameter") {
    ParameterStore store;
    Parameter& w = store.add("enc.w", {2});
    w.value = {1.0, 1.0};
    Tape t;
    Tensor wt = t.param(w);
    Tensor loss = t.sum_all(t.add(wt, wt));
    CHECK_THROWS_WITH_AS(t.backward(loss, 1e308),
                         "non-finite gradient for parameter enc.w",
                         NumericError);
  }
}

TEST_CASE("finite differences on all primitives") {
  Rng rng(42);
  // wide step for the 1e-7 linear checks: exact quotients, less rounding noise
  auto check = [&](const char* name, std::size_t r, std::size_t c,
                   std::function<Tensor(Tape&, Tensor)> op, double tol,
                   double lo = -2.0, double hi = 2.0) {
    const Shape shape = c ? Shape{r, c} : Shape{r};
    const auto input = random_vec(numel(shape), rng, lo, hi);
    // output shape may differ from input; probe once to size the projection
    std::vector<double> proj;
    {
      Tape t;
      Tensor probe = op(t, t.input(shape, input));
      proj = random_vec(probe.size(), rng);
    }
    const double h = tol <= 1e-7 ? 1e-3 : 1e-5;
    auto rep = finite_difference_check(project(op, proj), shape, input, h);
    INFO(name, " max rel err ", rep.max_rel_err, " at ", rep.worst.index);
    CHECK(rep.passed(tol));
  };

  // linear ops at 1e-7
  const auto matw = random_vec(28, rng);
  check("matmul", 5, 7, [matw](Tape& t, Tensor x) {
    return t.matmul(x, t.input({7, 4}, matw));
  }, 1e-7);
  check("add", 4, 6, [&](Tape& t, Tensor x) { return t.add(x, t.mul(x, x)); }, 1e-4);
  check("concat_axis1", 3, 5, [&](Tape& t, Tensor x) {
    return t.concat({x, x}, 1);
  }, 1e-7);
  check("concat_axis0", 3, 5, [&](Tape& t, Tensor x) {
    return t.concat({x, x, x}, 0);
  }, 1e-7);
  check("mean_axis0", 8, 16, [&](Tape& t, Tensor x) { return t.mean(x, 0); }, 1e-7);
  check("mean_axis1", 8, 16, [&](Tape& t, Tensor x) { return t.mean(x, 1); }, 1e-7);
  check("transpose", 4, 6, [&](Tape& t, Tensor x) { return t.transpose(x); }, 1e-7);
  check("slice_cols", 4, 8, [&](Tape& t, Tensor x) { return t.slice_cols(x, 2, 3); }, 1e-7);
  check("row", 4, 8, [&](Tape& t, Tensor x) { return t.row(x, 2); }, 1e-7);
  check("embedding", 6, 4, [&](Tape& t, Tensor x) {
    return t.embedding(x, {0, 3, 3, 5});
  }, 1e-7);
  check("masked_fill", 4, 6, [&](Tape& t, Tensor x) {
    std::vector<std::uint8_t> keep(24, 1);
    for (std::size_t i = 0; i < 24; i += 3) keep[i] = 0;
    return t.masked_fill(x, keep, -3.0);
  }, 1e-7);
  check("add_row", 3, 6, [&](Tape& t, Tensor x) {
    return t.add_row(x, t.row(x, 1));
  }, 1e-7);

  // nonlinear ops at 1e-4
  check("tanh", 5, 5, [&](Tape& t, Tensor x) { return t.tanh_op(x); }, 1e-4);
  check("relu", 5, 5, [&](Tape& t, Tensor x) { return t.relu(x); }, 1e-4, 0.1, 2.0);
  check("softmax_rows", 4, 7, [&](Tape& t, Tensor x) { return t.softmax(x, 1); }, 1e-4);
  check("softmax_cols", 4, 7, [&](Tape& t, Tensor x) { return t.softmax(x, 0); }, 1e-4);
  check("log_softmax", 4, 7, [&](Tape& t, Tensor x) { return t.log_softmax(x, 1); }, 1e-4);
  check("rms_norm", 8, 16, [&](Tape& t, Tensor x) {
    static Rng r2(9);
    static auto g = random_vec(16, r2, 0.5, 1.5);
    return t.layer_norm(x, t.input({16}, g), Tensor(), NormKind::kScaleOnly);
  }, 1e-4);
  check("layer_norm_standard", 8, 16, [&](Tape& t, Tensor x) {
    static Rng r2(11);
    static auto g = random_vec(16, r2, 0.5, 1.5);
    static auto b = random_vec(16, r2, -0.5, 0.5);
    return t.layer_norm(x, t.input({16}, g), t.input({16}, b),
                        NormKind::kStandard);
  }, 1e-4);

  // losses (already scalar; no projection needed)
  {
    const Shape shape{3, 9};
    auto input = random_vec(27, rng);
    auto rep = finite_difference_check(
        [](Tape& t, Tensor x) { return t.cross_entropy(x, {1, -1, 7}, -1); },
        shape, input);
    CHECK(rep.passed(1e-4));
  }
  {
    auto rep = finite_difference_check(
        [](Tape& t, Tensor x) { return t.mse(x, 0.37); }, {1}, {-0.81});
    CHECK(rep.passed(1e-4));
  }
}

TEST_CASE("finite difference fixtures from gradcheck") {
  Rng rng(1234);
  SUBCASE("softmax composed with sum") {
    auto rep = finite_difference_check(
        [](Tape& t, Tensor x) {
          Tensor s = t.softmax(x, 1);
          Tensor w = t.input({2, 5}, {1, 2, 3, 4, 5, 5, 4, 3, 2, 1});
          return t.sum_all(t.mul(s, w));
        },
        {2, 5}, random_vec(10, rng));
    CHECK(rep.passed(1e-4));
  }
  SUBCASE("linear map is exact to 1e-7") {
    auto rep = finite_difference_check(
        [](Tape& t, Tensor x) {
          Tensor w = t.input({6, 3}, {1, -1, 2, 0.5, 3, -2, 1, 1, 1,
                                      -0.5, 0.25, 2, 0, 1, -3, 2, 2, 0.125});
          return t.sum_all(t.matmul(x, w));
        },
        {4, 6}, random_vec(24, rng));
    CHECK(rep.passed(1e-7));
  }
  SUBCASE("layer normalization") {
    auto rep = finite_difference_check(
        [](Tape& t, Tensor x) {
          Tensor g = t.input({8}, std::vector<double>(8, 1.0));
          return t.mean_all(t.layer_norm(x, g, Tensor(), NormKind::kScaleOnly));
        },
        {4, 8}, random_vec(32, rng));
    CHECK(rep.passed(1e-4));
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient is a fixed point") {
    ParameterStore store;
    Parameter& w = store.add("w", {3});
    w.value = {1.0, -2.0, 3.0};
    w.ensure_grad();
    w.grad_live = true;
    Adam opt({.learning_rate = 0.1});
    opt.step(store.all());
    CHECK(w.value == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(opt.step_count() == 1);
    CHECK(w.grad_live == false);
  }
  SUBCASE("first step moves by about lr in the gradient direction") {
    ParameterStore store;
    Parameter& w = store.add("w", {1});
    w.value = {0.0};
    w.ensure_grad();
    w.grad[0] = 1.0;
    w.grad_live = true;
    Adam opt({.learning_rate = 0.1});
    opt.step(store.all());
    // mhat = vhat = 1 exactly on step one, so the update is lr/(1+eps)
    CHECK(w.value[0] == doctest::Approx(-0.1).epsilon(1e-7));
    CHECK(w.grad[0] == 0.0);
  }
  SUBCASE("missing gradient names the parameter") {
    ParameterStore store;
    store.add("decoder.block0.attn.wq", {2, 2});
    Adam opt;
    CHECK_THROWS_WITH_AS(opt.step(store.all()),
                         "adam: missing gradient for parameter decoder.block0.attn.wq",
                         std::invalid_argument);
  }
  SUBCASE("converges on a quadratic") {
    ParameterStore store;
    Parameter& w = store.add("w", {1});
    w.value = {0.0};
    Adam opt({.learning_rate = 0.1});
    for (int i = 0; i < 200; ++i) {
      Tape t;
      Tensor wt = t.param(w);
      Tensor diff = t.add(wt, t.input({1}, {-3.0}));
      t.backward(t.sum_all(t.mul(diff, diff)));
      opt.step(store.all());
    }
    CHECK(std::fabs(w.value[0] - 3.0) < 0.1);
  }
}

TEST_CASE("checkpoint round trip") {
  ParameterStore store;
  Rng rng(99);
  Parameter& a = store.add("encoder.block0.attn.wq", {4, 4});
  Parameter& b = store.add("decoder.lm_head", {4, 11});
  init_uniform_fan_in(a, 4, rng);
  init_uniform_fan_in(b, 4, rng);
  const std::string path = std::string(EF_TEST_TMP) + "/ckpt_roundtrip.bin";
  save_checkpoint(path, store, 0xabcdef);

  ParameterStore loaded;
  Parameter& a2 = loaded.add("encoder.block0.attn.wq", {4, 4});
  Parameter& b2 = loaded.add("decoder.lm_head", {4, 11});
  load_checkpoint(path, loaded, 0xabcdef);
  CHECK(a2.value == a.value);
  CHECK(b2.value == b.value);

  SUBCASE("digest mismatch rejected") {
    CHECK_THROWS(load_checkpoint(path, loaded, 0x1234));
  }
  SUBCASE("shape mismatch rejected") {
    ParameterStore bad;
    bad.add("encoder.block0.attn.wq", {4, 4});
    bad.add("decoder.lm_head", {4, 12});
    CHECK_THROWS(load_checkpoint(path, bad, 0xabcdef));
  }
  SUBCASE("unknown name rejected") {
    ParameterStore bad;
    bad.add("encoder.block0.attn.wq", {4, 4});
    bad.add("other", {4, 11});
    CHECK_THROWS(load_checkpoint(path, bad, 0xabcdef));
  }
}

TEST_CASE("forward ops reject non-finite values") {
  Tape t;
  Tensor big = t.input({2}, {1e200, 1e200});
  CHECK_THROWS_AS(t.mul(big, big), NumericError);
}
