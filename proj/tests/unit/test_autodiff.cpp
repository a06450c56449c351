#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ckd/autodiff/finite_diff.hpp"
#include "ckd/autodiff/ops.hpp"
#include "ckd/util/error.hpp"
#include "support.hpp"

using namespace ckd;
using namespace ckd::ad;
using testing::random_tensor;

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Scalarise an op's output with fixed random weights so every output element
// contributes to the checked gradient.
double weighted_sum(const Tensor& out, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * w[i];
  return s;
}

struct PrimitiveCase {
  std::string name;
  std::vector<Shape> shapes;
  Builder build;
  double lo = -1.0;
  double hi = 1.0;
};

// Analytic gradient of every input versus central differences, `trials` times.
double worst_gradient_error(const PrimitiveCase& pc, int trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<Tensor> inputs;
    for (const Shape& s : pc.shapes) inputs.push_back(random_tensor(rng, s, pc.lo, pc.hi));

    Tape probe;
    std::vector<Var> pv;
    for (const Tensor& t : inputs) pv.push_back(probe.constant(t));
    const Tensor w = random_tensor(rng, pc.build(probe, pv).value().shape());

    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
    Var out = pc.build(tape, vars);
    Var loss = sum(mul(out, tape.constant(w)));
    const Gradients grads = tape.backward(loss);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
      auto f = [&](const Tensor& x) {
        Tape t;
        std::vector<Var> vs;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          vs.push_back(t.constant(j == k ? x : inputs[j]));
        }
        return weighted_sum(pc.build(t, vs).value(), w);
      };
      const Tensor numeric = finite_diff_grad(f, inputs[k], 1e-5);
      worst = std::max(worst, max_relative_error(grads.of(vars[k]), numeric));
    }
  }
  return worst;
}

const std::vector<std::uint8_t> kMask{1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 1, 0};
const std::vector<std::uint32_t> kRows{2, 0, 2, 1, 3};

std::vector<PrimitiveCase> primitive_cases() {
  return {
      {"matmul", {Shape{3, 4}, Shape{4, 2}}, [](Tape&, auto& v) { return matmul(v[0], v[1]); }},
      {"add", {Shape{3, 4}, Shape{3, 4}}, [](Tape&, auto& v) { return add(v[0], v[1]); }},
      {"sub", {Shape{3, 4}, Shape{3, 4}}, [](Tape&, auto& v) { return sub(v[0], v[1]); }},
      {"mul", {Shape{3, 4}, Shape{3, 4}}, [](Tape&, auto& v) { return mul(v[0], v[1]); }},
      {"add_bias", {Shape{3, 4}, Shape{4}}, [](Tape&, auto& v) { return add_bias(v[0], v[1]); }},
      {"scale", {Shape{3, 4}}, [](Tape&, auto& v) { return scale(v[0], -1.7); }},
      {"gelu", {Shape{3, 4}}, [](Tape&, auto& v) { return gelu(v[0]); }, -3.0, 3.0},
      {"softmax", {Shape{3, 4}}, [](Tape&, auto& v) { return softmax(v[0]); }, -3.0, 3.0},
      {"log", {Shape{3, 4}}, [](Tape&, auto& v) { return log(v[0]); }, 0.5, 2.0},
      {"sum", {Shape{3, 4}}, [](Tape&, auto& v) { return sum(v[0]); }},
      {"select_rows", {Shape{4, 3}},
       [](Tape&, auto& v) { return select_rows(v[0], kRows); }},
      {"concat_rows", {Shape{2, 3}, Shape{3, 3}},
       [](Tape&, auto& v) { return concat_rows(v[0], v[1]); }},
      {"mask_fill", {Shape{3, 4}}, [](Tape&, auto& v) { return mask_fill(v[0], kMask, -5.0); }},
      {"layer_norm", {Shape{3, 5}, Shape{5}, Shape{5}},
       [](Tape&, auto& v) { return layer_norm(v[0], v[1], v[2]); }, -2.0, 2.0},
      {"causal_attention", {Shape{2 * 4, 3 * 4}},
       [](Tape&, auto& v) { return causal_attention(v[0], 2, 4, 2); }, -1.5, 1.5},
  };
}

}  // namespace

TEST_CASE("forward examples") {
  Tape tape;
  SUBCASE("matmul shape algebra") {
    Var a = tape.constant(Tensor(Shape{2, 3}, 1.0));
    Var b = tape.constant(Tensor(Shape{3, 4}, 1.0));
    CHECK(matmul(a, b).value().shape() == Shape{2, 4});
  }
  SUBCASE("softmax of equal logits") {
    Var a = tape.constant(Tensor::matrix(1, 2, {0.0, 0.0}));
    const Tensor& s = softmax(a).value();
    CHECK(s[0] == 0.5);
    CHECK(s[1] == 0.5);
  }
  SUBCASE("gelu(0) = 0") {
    Var a = tape.constant(Tensor::vector({0.0}));
    CHECK(gelu(a).value()[0] == 0.0);
  }
}

TEST_CASE("shape errors name the op and dims") {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2, 3}));
  Var b = tape.constant(Tensor(Shape{4, 4}));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x4]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(add_bias(a, tape.constant(Tensor(Shape{4}))), ShapeError);
  CHECK_THROWS_AS(causal_attention(b, 1, 4, 3), ShapeError);
}

TEST_CASE("backward examples") {
  SUBCASE("d sum(x) / dx = 1") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({0.3, -2.0, 5.0}));
    const Gradients g = tape.backward(sum(x));
    CHECK(g.of(x) == Tensor::vector({1.0, 1.0, 1.0}));
    CHECK(tape.size() == 0);  // consumed
  }
  SUBCASE("0 * x has zero gradient") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
    const Gradients g = tape.backward(sum(scale(x, 0.0)));
    CHECK(g.of(x) == Tensor::vector({0.0, 0.0}));
  }
  SUBCASE("d(x*x)/dx at 2 is 4") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0));
    const Gradients g = tape.backward(sum(mul(x, x)));
    CHECK(g.of(x).item() == doctest::Approx(4.0).epsilon(1e-15));
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    Var x = tape.leaf(Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(tape.backward(x), ShapeError);
  }
}

TEST_CASE("parameters accumulate gradients only when trainable") {
  Parameter w{"w", Tensor::matrix(2, 2, {1, 2, 3, 4}), {}, true};
  Parameter frozen{"f", Tensor::matrix(2, 2, {1, 0, 0, 1}), {}, false};
  for (int pass = 0; pass < 2; ++pass) {
    Tape tape;
    Var x = tape.constant(Tensor::matrix(1, 2, {1.0, 1.0}));
    tape.backward(sum(matmul(matmul(x, tape.param(frozen)), tape.param(w))));
  }
  // d/dW sum(x F W) = (x F)^T 1 = [[1,1],[1,1]], accumulated twice.
  CHECK(w.grad == Tensor(Shape{2, 2}, 2.0));
  CHECK(frozen.grad.empty());
}

TEST_CASE("finite differences") {
  SUBCASE("x^2 at 2") {
    const Tensor g = finite_diff_grad([](const Tensor& x) { return x[0] * x[0]; },
                                      Tensor::scalar(2.0), 1e-5);
    CHECK(std::abs(g[0] - 4.0) < 1e-8);
  }
  SUBCASE("sum of softmax is constant") {
    auto f = [](const Tensor& x) {
      Tape t;
      return sum(softmax(t.constant(x))).value().item();
    };
    const Tensor g = finite_diff_grad(f, Tensor::matrix(1, 4, {0.1, -0.3, 2.0, 0.7}));
    for (double v : g.data()) CHECK(std::abs(v) < 1e-9);
  }
  SUBCASE("errors") {
    CHECK_THROWS(finite_diff_grad([](const Tensor&) { return 0.0; }, Tensor::scalar(1), 0.0));
    CHECK_THROWS_AS(finite_diff_grad([](const Tensor& x) { return std::log(x[0]); },
                                     Tensor::scalar(0.0)),
                    NumericError);
  }
}

TEST_CASE("every primitive matches central differences on 100 random inputs") {
  std::uint64_t seed = 100;
  for (const PrimitiveCase& pc : primitive_cases()) {
    CAPTURE(pc.name);
    const double err = worst_gradient_error(pc, 100, seed++);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("softmax rows are distributions") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    const Tensor& s = softmax(tape.constant(random_tensor(rng, Shape{4, 7}, -20, 20))).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (double v : s.row(r)) {
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("backward is linear in the loss") {
  // grad(L1 + L2) == grad(L1) + grad(L2) on random small graphs.
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x0 = random_tensor(rng, Shape{3, 4});
    const Tensor w0 = random_tensor(rng, Shape{4, 4});
    const Tensor g0 = random_tensor(rng, Shape{4}, 0.5, 1.5);
    auto l1 = [&](Tape&, Var x, Var w) { return sum(gelu(matmul(x, w))); };
    auto l2 = [&](Tape& t, Var x, Var w) {
      return sum(mul(softmax(matmul(x, w)),
                     layer_norm(x, t.constant(g0), t.constant(Tensor(Shape{4})))));
    };
    auto grads = [&](int which) {
      Tape t;
      Var x = t.leaf(x0);
      Var w = t.leaf(w0);
      Var loss = which == 1 ? l1(t, x, w) : which == 2 ? l2(t, x, w) : add(l1(t, x, w), l2(t, x, w));
      const Gradients g = t.backward(loss);
      return std::pair{g.of(x), g.of(w)};
    };
    auto [gx1, gw1] = grads(1);
    auto [gx2, gw2] = grads(2);
    auto [gx, gw] = grads(3);
    gx1.add_(gx2);
    gw1.add_(gw2);
    CHECK(testing::max_abs_diff(gx.data(), gx1.data()) < 1e-12);
    CHECK(testing::max_abs_diff(gw.data(), gw1.data()) < 1e-12);
  }
}
