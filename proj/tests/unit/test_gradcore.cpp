#include <cmath>

#include "doctest.h"
#include "drilldown/optim.hpp"
#include "drilldown/tape.hpp"
#include "test_support.hpp"

using namespace dd::grad;
using dd::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

ParamStore store_of(std::initializer_list<std::pair<const char*, Tensor>> items) {
  ParamStore s;
  for (const auto& [name, t] : items) s.set(name, t);
  return s;
}

// Weighted sum with fixed random weights turns any tensor output into a
// scalar whose gradient exercises every output coordinate.
Var weighted_sum(Var x, std::uint64_t seed) {
  Rng rng(seed);
  Var w = x.tape->constant(random_tensor(x.value().rows(), x.value().cols(), rng));
  return sum_all(mul(x, w));
}

}  // namespace

TEST_CASE("matmul examples") {
  Tensor id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(matmul(id, m) == m);
  CHECK(matmul(m, Tensor::matrix(2, 1, {1, 1})) == Tensor::matrix(2, 1, {3, 7}));
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST_CASE("activation examples") {
  CHECK(activate(Tensor::row_vector({-1, 0, 2}), Activation::relu) == Tensor::row_vector({0, 0, 2}));
  CHECK(activate(Tensor::row_vector({0}), Activation::sigmoid)[0] == doctest::Approx(0.5));
  CHECK(activate(Tensor::row_vector({0.5}), Activation::tanh)[0] == doctest::Approx(0.46212).epsilon(1e-5));
}

TEST_CASE("softmax_sharp examples and properties") {
  auto u = softmax_sharp(std::vector<double>{0.3, 0.3, 0.3}, 4.0);
  for (double p : u) CHECK(p == doctest::Approx(1.0 / 3.0));
  auto a = softmax_sharp(std::vector<double>{1.0, 0.0}, 1.0);
  CHECK(a[0] == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(a[1] == doctest::Approx(0.26894).epsilon(1e-5));
  auto b = softmax_sharp(std::vector<double>{0.9, 0.0}, 9.0);
  CHECK(b[0] == doctest::Approx(0.99970).epsilon(1e-5));
  CHECK(b[1] == doctest::Approx(0.00030).epsilon(1e-2));
  CHECK_THROWS(softmax_sharp(std::vector<double>{}, 1.0));

  Rng rng(3);
  std::uniform_real_distribution<double> dist(-5, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(1 + trial % 7);
    for (double& v : s) v = dist(rng);
    const double lambda = 0.1 + (trial % 10);
    auto p = softmax_sharp(s, lambda);
    double total = 0;
    for (double v : p) {
      CHECK(v >= 0.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
    std::vector<double> shifted = s;
    for (double& v : shifted) v += 2.5;
    auto q = softmax_sharp(shifted, lambda);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-12));
  }
}

TEST_CASE("l2_normalize examples") {
  auto v = l2_normalize(std::vector<double>{3, 4});
  CHECK(v[0] == doctest::Approx(0.6));
  CHECK(v[1] == doctest::Approx(0.8));
  auto z = l2_normalize(std::vector<double>{0, 0}, 1e-8);
  CHECK(z == std::vector<double>{0, 0});
  auto u = l2_normalize(std::vector<double>{0, 1, 0});
  CHECK(u == std::vector<double>{0, 1, 0});
}

TEST_CASE("backward examples") {
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(3.0));
    Var y = mul(x, x);
    tape.backward(y);
    CHECK(tape.grad(x).item() == 6.0);
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0));
    Var y = tape.leaf(Tensor::scalar(5.0));
    tape.backward(mul(x, y));
    CHECK(tape.grad(x).item() == 5.0);
    CHECK(tape.grad(y).item() == 2.0);
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0));
    Var unused = tape.leaf(Tensor::row_vector({1, 2}));
    Var d = detach(x);
    Var y = add(mul(d, d), x);
    tape.backward(y);
    CHECK(tape.grad(x).item() == 1.0);
    CHECK(tape.grad(unused) == Tensor({1, 2}));
  }
  {
    Tape tape;
    Var x = tape.leaf(Tensor::row_vector({1, 2}));
    CHECK_THROWS_AS(tape.backward(x), DimensionError);
  }
}

TEST_CASE("unused parameters receive zero gradients") {
  ParamStore s = store_of({{"a", Tensor::scalar(1.0)}, {"b", Tensor::row_vector({1, 2, 3})}});
  Tape tape;
  Var a = tape.param(s, "a");
  tape.param(s, "b");
  tape.backward(mul(a, a));
  auto grads = tape.param_grads();
  CHECK(grads.at("a").item() == 2.0);
  CHECK(grads.at("b") == Tensor({1, 3}));
}

TEST_CASE("grad_check examples") {
  ParamStore s = store_of({{"x", Tensor::row_vector({0.3, -1.2, 2.0})}});
  auto quad = [](Tape& t, const ParamStore& p) {
    Var x = t.param(p, "x");
    return sum_all(mul(x, x));
  };
  CHECK(grad_check(quad, s, 1e-5).max_rel_error < 1e-7);

  auto constant = [](Tape& t, const ParamStore& p) {
    Var x = t.param(p, "x");
    return sum_all(scale(x, 0.0));
  };
  auto report = grad_check(constant, s, 1e-5);
  CHECK(report.max_rel_error == 0.0);
  CHECK(report.coordinates == 3);

  auto bad = [](Tape& t, const ParamStore& p) {
    Var x = t.param(p, "x");
    return sum_all(scale(x, std::numeric_limits<double>::infinity()));
  };
  CHECK_THROWS(grad_check(bad, s, 1e-5));
}

TEST_CASE("every differentiable op matches finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = 1 + trial % 3, k = 2 + trial % 2, n = 1 + (trial + 1) % 3;
    ParamStore s = store_of({{"a", random_tensor(m, k, rng)},
                             {"b", random_tensor(k, n, rng)},
                             {"c", random_tensor(m, k, rng)},
                             {"d", random_tensor(n, k, rng)},
                             {"bias", random_tensor(1, k, rng)}});
    const std::uint64_t wseed = 100 + trial;
    std::vector<std::pair<const char*, LossFn>> cases = {
        {"matmul", [&](Tape& t, const ParamStore& p) { return weighted_sum(matmul(t.param(p, "a"), t.param(p, "b")), wseed); }},
        {"matmul_bt", [&](Tape& t, const ParamStore& p) { return weighted_sum(matmul_bt(t.param(p, "a"), t.param(p, "d")), wseed); }},
        {"add", [&](Tape& t, const ParamStore& p) { return weighted_sum(add(t.param(p, "a"), t.param(p, "c")), wseed); }},
        {"sub", [&](Tape& t, const ParamStore& p) { return weighted_sum(sub(t.param(p, "a"), t.param(p, "c")), wseed); }},
        {"mul", [&](Tape& t, const ParamStore& p) { return weighted_sum(mul(t.param(p, "a"), t.param(p, "c")), wseed); }},
        {"scale", [&](Tape& t, const ParamStore& p) { return weighted_sum(scale(t.param(p, "a"), -1.7), wseed); }},
        {"add_row", [&](Tape& t, const ParamStore& p) { return weighted_sum(add_row(t.param(p, "a"), t.param(p, "bias")), wseed); }},
        {"sigmoid", [&](Tape& t, const ParamStore& p) { return weighted_sum(activate(t.param(p, "a"), Activation::sigmoid), wseed); }},
        {"tanh", [&](Tape& t, const ParamStore& p) { return weighted_sum(activate(t.param(p, "a"), Activation::tanh), wseed); }},
        {"relu", [&](Tape& t, const ParamStore& p) { return weighted_sum(activate(t.param(p, "a"), Activation::relu), wseed); }},
        {"softmax", [&](Tape& t, const ParamStore& p) { return weighted_sum(softmax_rows(t.param(p, "a"), 9.0), wseed); }},
        {"log_softmax", [&](Tape& t, const ParamStore& p) { return weighted_sum(log_softmax_rows(t.param(p, "a")), wseed); }},
        {"l2_normalize", [&](Tape& t, const ParamStore& p) { return weighted_sum(l2_normalize_rows(t.param(p, "a")), wseed); }},
        {"sum_rows", [&](Tape& t, const ParamStore& p) { return weighted_sum(sum_rows(t.param(p, "a")), wseed); }},
        {"reshape", [&](Tape& t, const ParamStore& p) { return weighted_sum(reshape(t.param(p, "a"), k, m), wseed); }},
        {"concat_cols", [&](Tape& t, const ParamStore& p) { return weighted_sum(concat_cols(t.param(p, "a"), t.param(p, "c")), wseed); }},
        {"concat_rows", [&](Tape& t, const ParamStore& p) {
           std::vector<Var> parts{t.param(p, "a"), t.param(p, "d"), t.param(p, "c")};
           return weighted_sum(concat_rows(parts), wseed);
         }},
        {"slice_rows", [&](Tape& t, const ParamStore& p) { return weighted_sum(slice_rows(t.param(p, "a"), m - 1, 1), wseed); }},
        {"gather_cols", [&](Tape& t, const ParamStore& p) {
           std::vector<std::size_t> ids{0, k - 1, 0};
           return weighted_sum(gather_cols(t.param(p, "a"), ids), wseed);
         }},
        {"pick_rows", [&](Tape& t, const ParamStore& p) {
           std::vector<Var> src{t.param(p, "a"), t.param(p, "c")};
           std::vector<std::size_t> which(m);
           for (std::size_t r = 0; r < m; ++r) which[r] = r % 2;
           return weighted_sum(pick_rows(src, which), wseed);
         }},
        {"gather_elements", [&](Tape& t, const ParamStore& p) {
           std::vector<std::size_t> cols(m);
           for (std::size_t r = 0; r < m; ++r) cols[r] = (r + 1) % k;
           return weighted_sum(gather_elements(t.param(p, "a"), cols), wseed);
         }},
    };
    for (const auto& [name, fn] : cases) {
      CAPTURE(name);
      CHECK(grad_check(fn, s, 1e-5).max_rel_error < kGradTol);
    }
  }
}

TEST_CASE("clip_global_norm") {
  GradMap g{{"a", Tensor::row_vector({12, 16})}};  // norm 20
  CHECK(clip_global_norm(g, 10.0) == doctest::Approx(20.0));
  CHECK(g.at("a")[0] == doctest::Approx(6.0));
  CHECK(g.at("a")[1] == doctest::Approx(8.0));

  GradMap small{{"a", Tensor::row_vector({3, 4})}};
  clip_global_norm(small, 10.0);
  CHECK(small.at("a") == Tensor::row_vector({3, 4}));

  GradMap zero{{"a", Tensor({1, 3})}};
  clip_global_norm(zero, 10.0);
  CHECK(zero.at("a") == Tensor({1, 3}));

  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    GradMap r{{"x", random_tensor(3, 4, rng, -20, 20)}, {"y", random_tensor(1, 5, rng, -20, 20)}};
    const double max_norm = 0.5 + i;
    clip_global_norm(r, max_norm);
    CHECK(global_norm(r) <= max_norm + 1e-9);
  }
}

TEST_CASE("adam_step") {
  ParamStore p = store_of({{"w", Tensor::row_vector({1.0, -2.0})}});
  AdamState state;
  adam_step(p, {{"w", Tensor({1, 2})}}, state);
  CHECK(p.at("w") == Tensor::row_vector({1.0, -2.0}));
  CHECK(state.step == 1);

  ParamStore q = store_of({{"w", Tensor::scalar(0.5)}});
  AdamState s2;
  s2.config.learning_rate = 0.1;
  adam_step(q, {{"w", Tensor::scalar(1.0)}}, s2);
  CHECK(q.at("w").item() - 0.5 == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(s2.step == 1);
  CHECK(s2.config.learning_rate == 0.1);
  AdamConfig defaults;
  CHECK(defaults.learning_rate == 2e-4);
  CHECK(defaults.beta1 == 0.9);
  CHECK(defaults.beta2 == 0.999);
  CHECK(defaults.epsilon == 1e-8);
}

TEST_CASE("ops are deterministic") {
  Rng rng(9);
  Tensor a = random_tensor(4, 5, rng), b = random_tensor(5, 3, rng);
  CHECK(matmul(a, b) == matmul(a, b));
  CHECK(softmax_rows(a, 9.0) == softmax_rows(a, 9.0));
  CHECK(l2_normalize_rows(a) == l2_normalize_rows(a));
}

TEST_CASE("tape rejects non-finite values") {
  Tape tape;
  CHECK_THROWS_AS(tape.constant(Tensor::scalar(std::nan(""))), NumericError);
}
