#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "scanweave/error.hpp"
#include "scanweave/rng.hpp"
#include "scanweave/tape.hpp"

using namespace scanweave;
using namespace scanweave::autodiff;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  CounterRng rng(seed);
  Tensor t(s);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

using Builder = std::function<VarId(Tape&, const std::vector<VarId>&)>;

// Largest relative gap between tape adjoints and central differences.
double fd_gap(const std::vector<Tensor>& leaves, const Builder& build, double h = 1e-6) {
  Tape tape;
  std::vector<VarId> ids;
  for (const auto& t : leaves) ids.push_back(tape.variable(t));
  const VarId loss = build(tape, ids);
  tape.backward(loss);
  double worst = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const Tensor g = tape.grad(ids[l]);
    for (std::size_t k = 0; k < leaves[l].size(); ++k) {
      auto eval = [&](double delta) {
        std::vector<Tensor> moved = leaves;
        moved[l][k] += delta;
        Tape t2;
        std::vector<VarId> ids2;
        for (const auto& t : moved) ids2.push_back(t2.variable(t));
        return t2.value(build(t2, ids2))[0];
      };
      const double fd = (eval(h) - eval(-h)) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-4}));
    }
  }
  return worst;
}

// Plain zero-padded cross-correlation.
double naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int n, int o, int r, int c) {
  const int k = w.shape().h;
  const int half = k / 2;
  double s = b[static_cast<std::size_t>(o)];
  for (int i = 0; i < x.shape().c; ++i)
    for (int dy = 0; dy < k; ++dy)
      for (int dx = 0; dx < k; ++dx) {
        const int rr = r + dy - half, cc = c + dx - half;
        if (rr < 0 || cc < 0 || rr >= x.shape().h || cc >= x.shape().w) continue;
        s += w.at(o, i, dy, dx) * x.at(n, i, rr, cc);
      }
  return s;
}

}  // namespace

TEST_CASE("conv2d forward matches direct loops") {
  const auto x = random_tensor({2, 3, 5, 6}, 1);
  const auto w = random_tensor({4, 3, 3, 3}, 2);
  const auto b = random_tensor({1, 4, 1, 1}, 3);
  Tape tape;
  const VarId y = conv2d(tape, tape.constant(x), tape.constant(w), tape.constant(b));
  const Tensor& out = tape.value(y);
  CHECK(out.shape() == Shape{2, 4, 5, 6});
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 6; ++c) REQUIRE(std::abs(out.at(n, o, r, c) - naive_conv(x, w, b, n, o, r, c)) < 1e-12);
  CHECK_THROWS_AS(conv2d(tape, tape.constant(x), tape.constant(random_tensor({4, 2, 3, 3}, 4)), tape.constant(b)),
                  DimensionError);
}

TEST_CASE("elementwise forward values") {
  Tape tape;
  const VarId x = tape.constant(Tensor({1, 2, 1, 2}, {-2.0, 3.0, -1.0, 0.5}));
  const VarId a = tape.constant(Tensor({1, 2, 1, 1}, {0.1, 0.5}));
  const Tensor& p = tape.value(prelu(tape, x, a));
  CHECK(p[0] == doctest::Approx(-0.2));
  CHECK(p[1] == 3.0);
  CHECK(p[2] == doctest::Approx(-0.5));
  const Tensor& s = tape.value(sigmoid(tape, x));
  CHECK(s[1] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
  const VarId d = tape.constant(Tensor({1, 1, 1, 2}, {2.0, 10.0}));
  const Tensor& m = tape.value(multiply_broadcast(tape, x, d));
  CHECK(m[0] == -4.0);
  CHECK(m[3] == 5.0);
  const Tensor& e = tape.value(mse(tape, x, tape.constant(Tensor({1, 2, 1, 2}, 0.0))));
  CHECK(e[0] == doctest::Approx((4.0 + 9.0 + 1.0 + 0.25) / 4.0));
}

TEST_CASE("adjoints agree with central differences") {
  const Tensor target = random_tensor({2, 2, 4, 4}, 9);
  SUBCASE("conv2d") {
    const double gap = fd_gap({random_tensor({2, 3, 4, 4}, 1), random_tensor({2, 3, 3, 3}, 2),
                               random_tensor({1, 2, 1, 1}, 3)},
                              [&](Tape& t, const std::vector<VarId>& v) {
                                return mse(t, conv2d(t, v[0], v[1], v[2]), t.constant(target));
                              });
    CHECK(gap < 1e-6);
  }
  SUBCASE("prelu away from the kink") {
    Tensor x = random_tensor({2, 2, 4, 4}, 4);
    for (auto& v : x.values()) v += v > 0 ? 0.1 : -0.1;
    const double gap = fd_gap({x, random_tensor({1, 2, 1, 1}, 5, 0.1, 0.4)}, [&](Tape& t, const std::vector<VarId>& v) {
      return mse(t, prelu(t, v[0], v[1]), t.constant(target));
    });
    CHECK(gap < 1e-6);
  }
  SUBCASE("sigmoid, add and broadcast multiply") {
    const double gap = fd_gap({random_tensor({2, 2, 4, 4}, 6), random_tensor({2, 2, 4, 4}, 7),
                               random_tensor({2, 1, 4, 4}, 8)},
                              [&](Tape& t, const std::vector<VarId>& v) {
                                const VarId s = sigmoid(t, add(t, v[0], v[1]));
                                return mse(t, multiply_broadcast(t, s, v[2]), t.constant(target));
                              });
    CHECK(gap < 1e-6);
  }
  SUBCASE("batch norm in training mode") {
    const double gap = fd_gap({random_tensor({2, 2, 4, 4}, 10), random_tensor({1, 2, 1, 1}, 11, 0.5, 1.5),
                               random_tensor({1, 2, 1, 1}, 12)},
                              [&](Tape& t, const std::vector<VarId>& v) {
                                BatchNormState st;
                                return mse(t, batch_norm(t, v[0], v[1], v[2], st, true), t.constant(target));
                              });
    CHECK(gap < 1e-5);
  }
  SUBCASE("batch norm in inference mode") {
    const double gap = fd_gap({random_tensor({2, 2, 4, 4}, 13), random_tensor({1, 2, 1, 1}, 14, 0.5, 1.5),
                               random_tensor({1, 2, 1, 1}, 15)},
                              [&](Tape& t, const std::vector<VarId>& v) {
                                BatchNormState st{{0.1, -0.2}, {0.5, 2.0}};
                                return mse(t, batch_norm(t, v[0], v[1], v[2], st, false), t.constant(target));
                              });
    CHECK(gap < 1e-6);
  }
}

TEST_CASE("batch norm statistics") {
  const auto x = random_tensor({3, 2, 4, 4}, 20, 0.0, 2.0);
  Tape tape;
  BatchNormState st;
  const VarId y = batch_norm(tape, tape.constant(x), tape.constant(Tensor({1, 2, 1, 1}, 1.0)),
                             tape.constant(Tensor({1, 2, 1, 1}, 0.0)), st, true);
  const Tensor& out = tape.value(y);
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0, xm = 0;
    for (int n = 0; n < 3; ++n)
      for (int r = 0; r < 4; ++r)
        for (int q = 0; q < 4; ++q) {
          m += out.at(n, c, r, q);
          v += out.at(n, c, r, q) * out.at(n, c, r, q);
          xm += x.at(n, c, r, q);
        }
    CHECK(std::abs(m / 48) < 1e-12);
    CHECK(v / 48 == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(st.running_mean[static_cast<std::size_t>(c)] == doctest::Approx(0.1 * xm / 48));
  }
}

TEST_CASE("backward accumulates over shared inputs and skips constants") {
  Tape tape;
  const VarId x = tape.variable(Tensor({1, 1, 1, 2}, {1.0, 2.0}));
  const VarId k = tape.constant(Tensor({1, 1, 1, 2}, {0.0, 0.0}));
  const VarId loss = mse(tape, add(tape, x, x), k);
  CHECK_FALSE(tape.requires_grad(k));
  CHECK(tape.requires_grad(loss));
  tape.backward(loss);
  // loss = ((2x1)^2 + (2x2)^2) / 2, dl/dx = 4x
  CHECK(tape.grad(x)[0] == doctest::Approx(4.0));
  CHECK(tape.grad(x)[1] == doctest::Approx(8.0));
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == doctest::Approx(4.0));
  CHECK_THROWS_AS(tape.backward(x), DimensionError);
}
