#include <cmath>
#include <functional>
#include <numbers>

#include "doctest.h"
#include "sghp/diffcore.hpp"
#include "sghp/error.hpp"
#include "sghp/random.hpp"

using namespace sghp::diff;

namespace {

using Builder = std::function<Var(Tape&, Var)>;

Tensor random_tensor(sghp::Rng& rng, std::size_t r, std::size_t c, double lo = -3.0, double hi = 3.0) {
  Tensor t(r, c);
  for (auto& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// Central differences computed by rebuilding the graph from scratch, so the
// check does not rely on Tape::replay.
Tensor numeric_gradient(const Builder& build, const Tensor& x, double h = 1e-6) {
  Tensor g(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) {
    Tensor up = x, down = x;
    up[k] += h;
    down[k] -= h;
    Tape t1, t2;
    const double fu = build(t1, t1.parameter("x", up)).scalar();
    const double fd = build(t2, t2.parameter("x", down)).scalar();
    g[k] = (fu - fd) / (2 * h);
  }
  return g;
}

double max_rel_error(const Builder& build, const Tensor& x) {
  Tape tape;
  Var root = build(tape, tape.parameter("x", x));
  const auto analytic = evaluate(tape, root).gradients.at("x");
  const auto numeric = numeric_gradient(build, x);
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k)
    worst = std::max(worst, std::abs(analytic[k] - numeric[k]) / std::max(1.0, std::abs(numeric[k])));
  return worst;
}

}  // namespace

TEST_CASE("evaluate: product rule") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::scalar(2.0));
  Var y = tape.parameter("y", Tensor::scalar(3.0));
  const auto e = evaluate(tape, x * y);
  CHECK(e.value == 6.0);
  CHECK(e.gradients.at("x")[0] == 3.0);
  CHECK(e.gradients.at("y")[0] == 2.0);
}

TEST_CASE("evaluate: softplus at zero") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::scalar(0.0));
  const auto e = evaluate(tape, softplus(x));
  CHECK(e.value == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(e.gradients.at("x")[0] == 0.5);
}

TEST_CASE("evaluate: absolute value and its kink") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::scalar(-1.5));
  const auto e = evaluate(tape, abs(x));
  CHECK(e.value == 1.5);
  CHECK(e.gradients.at("x")[0] == -1.0);

  Tape t0;
  Var z = t0.parameter("z", Tensor::scalar(0.0));
  CHECK(evaluate(t0, abs(z)).gradients.at("z")[0] == 0.0);
}

TEST_CASE("evaluate: errors") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::row({1.0, 2.0}));
  CHECK_THROWS_AS(evaluate(tape, x), sghp::Error);

  Var zero = tape.constant(0.0);
  try {
    (void)log(zero);
    FAIL("expected domain error");
  } catch (const DomainError& e) {
    CHECK(e.node() == tape.size());
  }
  CHECK_THROWS_AS((void)div(x, zero), DomainError);
  CHECK_THROWS_AS((void)log(tape.constant(-1.0)), DomainError);
  CHECK_THROWS_AS(tape.parameter("x", Tensor::scalar(1.0)), sghp::Error);
}

TEST_CASE("softplus stays finite for large arguments") {
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) == 0.0);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(softplus(30.0) == doctest::Approx(30.0 + std::exp(-30.0)));
}

TEST_CASE("every primitive matches central differences on random inputs") {
  sghp::Rng rng(20240601);
  const std::vector<std::pair<const char*, Builder>> cases = {
      {"add", [](Tape& t, Var x) { return sum(add(x, t.constant(Tensor(3, 2, 0.7)))); }},
      {"sub", [](Tape& t, Var x) { return sum(sub(t.constant(1.3), x)); }},
      {"mul", [](Tape&, Var x) { return sum(mul(x, x)); }},
      {"div", [](Tape& t, Var x) { return sum(div(t.constant(2.0), add_scalar(mul(x, x), 0.5))); }},
      {"pow", [](Tape&, Var x) { return sum(pow(add_scalar(mul(x, x), 0.1), 1.7)); }},
      {"exp", [](Tape&, Var x) { return sum(exp(x)); }},
      {"log", [](Tape&, Var x) { return sum(log(add_scalar(mul(x, x), 0.2))); }},
      {"log1p", [](Tape&, Var x) { return sum(log1p(exp(x))); }},
      {"sin", [](Tape&, Var x) { return sum(sin(x)); }},
      {"cos", [](Tape&, Var x) { return sum(cos(scale(x, 1.3))); }},
      {"abs", [](Tape&, Var x) { return sum(mul(abs(x), x)); }},
      {"softplus", [](Tape&, Var x) { return sum(softplus(scale(x, 4.0))); }},
      {"sigmoid", [](Tape&, Var x) { return sum(sigmoid(x)); }},
      {"matmul",
       [](Tape& t, Var x) {
         Var w = t.constant(Tensor(2, 4, std::vector<double>{0.3, -1.2, 0.5, 2.0, 1.1, 0.4, -0.7, 0.9}));
         return sum(sin(matmul(x, w)));
       }},
      {"matvec",
       [](Tape&, Var x) { return sum(exp(scale(matvec(x, reshape(slice_rows(x, 0, 1), 2, 1)), 0.2))); }},
      {"transpose", [](Tape&, Var x) { return sum(sin(matmul(transpose(x), x))); }},
      {"concat_cols",
       [](Tape& t, Var x) {
         Var parts[] = {x, exp(x), t.constant(Tensor(3, 1, 2.0))};
         return sum(sin(concat_cols(parts)));
       }},
      {"concat",
       [](Tape&, Var x) {
         Var parts[] = {x, cos(x)};
         return sum(mul(concat(parts), concat(parts)));
       }},
      {"add_rowwise", [](Tape&, Var x) { return sum(sin(add_rowwise(x, slice_rows(x, 1, 2)))); }},
      {"gather_rows", [](Tape&, Var x) { return sum(exp(gather_rows(x, {2, 0, 2}))); }},
      {"gather_scatter",
       [](Tape&, Var x) { return sum(sin(scatter(gather(x, {5, 1, 3}), {0, 4, 7}, 3, 3))); }},
      {"softmax_rows",
       [](Tape& t, Var x) { return sum(mul(softmax_rows(x), t.constant(Tensor(3, 2, std::vector<double>{1, 2, 3, 4, 5, 6})))); }},
      {"cross_entropy", [](Tape&, Var x) { return cross_entropy(softmax_rows(x), {1, 0, 1}); }},
      {"softmax_cross_entropy", [](Tape&, Var x) { return softmax_cross_entropy(x, {0, 1, 1}); }},
  };
  for (const auto& [name, build] : cases) {
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor(rng, 3, 2);
      INFO(name);
      CHECK(max_rel_error(build, x) <= 1e-4);
    }
  }
}

TEST_CASE("softmax rows are positive and normalized") {
  sghp::Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    Var p = softmax_rows(tape.constant(random_tensor(rng, 4, 5, -30.0, 30.0)));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        CHECK(p.value()(r, j) >= 0.0);
        s += p.value()(r, j);
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("cross-entropy is nonnegative and zero only for a degenerate distribution") {
  Tape tape;
  Var degenerate = tape.constant(Tensor(1, 3, std::vector<double>{0.0, 1.0, 0.0}));
  CHECK(cross_entropy(degenerate, {1}).scalar() == 0.0);
  sghp::Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    Var p = softmax_rows(tape.constant(random_tensor(rng, 1, 3)));
    CHECK(cross_entropy(p, {1}).scalar() > 0.0);
  }
}

TEST_CASE("grad_check: polynomial, empty tape, and parameters restored") {
  Tape tape;
  Var x = tape.parameter("x", Tensor::row({0.5, -1.25, 2.0}));
  Var y = tape.parameter("y", Tensor::scalar(1.5));
  Var root = sum(add(mul(pow(x, 3.0), y), scale(mul(x, x), 2.0)));
  const double before = root.scalar();
  CHECK(grad_check(tape, root, 1e-5) <= 1e-6);
  CHECK(root.scalar() == before);
  CHECK(tape.parameter_value("x") == Tensor::row({0.5, -1.25, 2.0}));

  Tape empty;
  Var c = sum(mul(empty.constant(Tensor::row({1.0, 2.0})), empty.constant(3.0)));
  CHECK(grad_check(empty, c, 1e-5) == 0.0);
  CHECK_THROWS_AS(grad_check(empty, c, 0.0), sghp::Error);
}

TEST_CASE("evaluate is deterministic") {
  auto run = [] {
    Tape tape;
    Var x = tape.parameter("x", Tensor::row({0.1, 0.2, 0.3}));
    return evaluate(tape, sum(softplus(mul(x, exp(x)))));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.value == b.value);
  CHECK(a.gradients == b.gradients);
}

TEST_CASE("adam: first step moves every element by about the learning rate") {
  NamedArrays params{{"w", Tensor::row({1.0, -2.0, 0.5})}};
  NamedArrays grads{{"w", Tensor::row({3.0, -0.25, 40.0})}};
  AdamState state;
  state.config.learning_rate = 0.01;
  adam_step(params, grads, state);
  CHECK(state.step == 1);
  CHECK(params.at("w")[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(params.at("w")[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(params.at("w")[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
  for (double v : state.v.at("w").values()) CHECK(v >= 0.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged; repeated calls are deterministic") {
  NamedArrays params{{"w", Tensor::row({1.0, 2.0})}};
  NamedArrays zero{{"w", Tensor(1, 2)}};
  AdamState state;
  adam_step(params, zero, state);
  CHECK(params.at("w") == Tensor::row({1.0, 2.0}));

  NamedArrays g{{"w", Tensor::row({0.3, -0.1})}};
  NamedArrays p1 = params, p2 = params;
  AdamState s1 = state, s2 = state;
  adam_step(p1, g, s1);
  adam_step(p2, g, s2);
  CHECK(p1 == p2);
  CHECK(s1.m == s2.m);
  CHECK(s1.v == s2.v);
}

TEST_CASE("adam: shape mismatch") {
  NamedArrays params{{"w", Tensor::row({1.0, 2.0})}};
  NamedArrays bad{{"w", Tensor::row({1.0})}};
  AdamState state;
  CHECK_THROWS_AS(adam_step(params, bad, state), sghp::Error);
  NamedArrays other{{"v", Tensor::row({1.0, 2.0})}};
  CHECK_THROWS_AS(adam_step(params, other, state), sghp::Error);
}

TEST_CASE("global norm clipping") {
  NamedArrays g{{"a", Tensor::row({3.0})}, {"b", Tensor::row({4.0})}};
  CHECK(clip_global_norm(g, 5.0) == 5.0);
  CHECK(g.at("a")[0] == 3.0);
  CHECK(clip_global_norm(g, 1.0) == 5.0);
  CHECK(global_norm(g) == doctest::Approx(1.0));
}
