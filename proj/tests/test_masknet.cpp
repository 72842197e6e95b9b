#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "scanweave/error.hpp"
#include "scanweave/masknet.hpp"
#include "scanweave/rng.hpp"

using namespace scanweave;
using namespace scanweave::masknet;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo, double hi) {
  CounterRng rng(seed);
  Tensor t(s);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

std::size_t expected_trainable(const Architecture& a) {
  const std::size_t f = static_cast<std::size_t>(a.features);
  const std::size_t conv = f * f * 9 + f;
  std::size_t n = f * static_cast<std::size_t>(a.in_channels) * 9 + f + f;
  n += static_cast<std::size_t>(a.blocks) * (2 * conv + f + (a.batch_norm ? 4 * f : 0));
  return n + f * 9 + 1;
}

// Direct 2-D Gaussian window, truncated and zero padded.
double naive_blur(const Tensor& t, int n, int c, int r, int q, double sigma, int radius) {
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += std::exp(-0.5 * i * i / (sigma * sigma));
  double s = 0.0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int rr = r + dy, qq = q + dx;
      if (rr < 0 || qq < 0 || rr >= t.shape().h || qq >= t.shape().w) continue;
      s += std::exp(-0.5 * (dy * dy + dx * dx) / (sigma * sigma)) * t.at(n, c, rr, qq);
    }
  return s / (norm * norm);
}

double relative_gap(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

TEST_CASE("parameter table") {
  for (bool bn : {false, true}) {
    Architecture a{3, 16, 3, bn};
    const auto p = MaskNetParams::initialize(a, 1);
    CHECK(p.trainable_size() == expected_trainable(a));
    CHECK(p.find("input.weight").value.shape() == Shape{16, 3, 3, 3});
    CHECK(p.find("output.weight").value.shape() == Shape{1, 16, 3, 3});
    CHECK(p.find("block2.slope").value[0] == 0.25);
    if (bn) CHECK_FALSE(p.find("block0.bn1.running_mean").trainable);
    CHECK(p == MaskNetParams::initialize(a, 1));
    CHECK_FALSE(p == MaskNetParams::initialize(a, 2));
  }
  const auto z = MaskNetParams::zeros({});
  for (const auto& t : z.tensors())
    if (t.name.find("slope") != std::string::npos) CHECK(t.value[0] == 0.0);
  CHECK_THROWS_AS(MaskNetParams::initialize({0, 16, 3, false}, 1), ParameterError);
  CHECK_THROWS_AS(z.find("nothing"), ParameterError);
}

TEST_CASE("parameter file round trip and validation") {
  const auto p = MaskNetParams::initialize({3, 8, 2, true}, 4);
  std::stringstream ss;
  save_params(ss, p);
  CHECK(ss.str().substr(0, 4) == "SNWT");
  const auto back = load_params(ss);
  CHECK(back.architecture() == p.architecture());
  REQUIRE(back.tensors().size() == p.tensors().size());
  for (std::size_t i = 0; i < p.tensors().size(); ++i) {
    CHECK(back.tensors()[i].name == p.tensors()[i].name);
    for (std::size_t k = 0; k < p.tensors()[i].value.size(); ++k) {
      REQUIRE(back.tensors()[i].value[k] == static_cast<double>(static_cast<float>(p.tensors()[i].value[k])));
    }
  }
  const std::string raw = ss.str();
  std::stringstream cut(raw.substr(0, raw.size() - 8));
  CHECK_THROWS_AS(load_params(cut), FormatError);
  std::string wrong = raw;
  wrong[0] = 'X';
  std::stringstream bad(wrong);
  CHECK_THROWS_AS(load_params(bad), FormatError);
}

TEST_CASE("normalized convolution matches direct blur") {
  const auto z = random_tensor({1, 2, 9, 7}, 1, 0.0, 1.0);
  const auto d = random_tensor({1, 1, 9, 7}, 2, 0.05, 1.0);
  ReconstructorConfig cfg;
  Tensor zc(z.shape());
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 9; ++r)
      for (int q = 0; q < 7; ++q) zc.at(0, c, r, q) = z.at(0, c, r, q) * d.at(0, 0, r, q);
  const auto out = frozen_reconstruct(zc, d, cfg);
  for (int c = 0; c < 2; ++c)
    for (int r = 0; r < 9; ++r)
      for (int q = 0; q < 7; ++q) {
        const double num = naive_blur(zc, 0, c, r, q, cfg.sigma, cfg.radius);
        const double den = naive_blur(d, 0, 0, r, q, cfg.sigma, cfg.radius) + cfg.epsilon;
        REQUIRE(std::abs(out.at(0, c, r, q) - num / den) < 1e-12);
      }
}

TEST_CASE("full sampling reconstructs up to the epsilon bias") {
  // with D = 1 and a constant image, r = z * K1 / (K1 + eps)
  ReconstructorConfig cfg;
  Tensor z({1, 1, 8, 8}, 0.6), d({1, 1, 8, 8}, 1.0);
  const auto r = frozen_reconstruct(z, d, cfg);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const double k1 = naive_blur(d, 0, 0, y, x, cfg.sigma, cfg.radius);
      CHECK(std::abs(r.at(0, 0, y, x) - 0.6) <= 0.6 * cfg.epsilon / (k1 + cfg.epsilon) + 1e-12);
    }
  ReconstructorConfig point = cfg;
  point.radius = 0;
  point.epsilon = 0.0;
  const auto exact = frozen_reconstruct(z, d, point);
  for (double v : exact.values()) CHECK(v == doctest::Approx(0.6));
}

TEST_CASE("weighted harmonic solves its linear system") {
  ReconstructorConfig cfg;
  cfg.kind = ReconstructorKind::kWeightedHarmonic;
  const auto d = random_tensor({1, 1, 6, 5}, 3, 0.0, 1.0);
  const auto zc = random_tensor({1, 1, 6, 5}, 4, 0.0, 1.0);
  const auto r = frozen_reconstruct(zc, d, cfg);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 5; ++x) {
      double lap = 0.0;
      const double v = r.at(0, 0, y, x);
      if (y > 0) lap += v - r.at(0, 0, y - 1, x);
      if (y < 5) lap += v - r.at(0, 0, y + 1, x);
      if (x > 0) lap += v - r.at(0, 0, y, x - 1);
      if (x < 4) lap += v - r.at(0, 0, y, x + 1);
      const double lhs = (d.at(0, 0, y, x) + cfg.ridge) * v + cfg.smoothness * lap;
      CHECK(std::abs(lhs - zc.at(0, 0, y, x)) < 1e-9);
    }
  CHECK_THROWS_AS(frozen_reconstruct(zc, Tensor({1, 2, 6, 5}), cfg), DimensionError);
}

TEST_CASE("reconstructor and mean adjustment adjoints") {
  const auto target = random_tensor({2, 2, 6, 6}, 10, 0.0, 1.0);
  for (auto kind : {ReconstructorKind::kNormalizedConvolution, ReconstructorKind::kWeightedHarmonic}) {
    ReconstructorConfig cfg;
    cfg.kind = kind;
    const auto zc = random_tensor({2, 2, 6, 6}, 11, 0.0, 1.0);
    const auto raw = random_tensor({2, 1, 6, 6}, 12, 0.05, 0.95);
    auto loss = [&](const Tensor& zc_v, const Tensor& raw_v, Tape& t, VarId& zid, VarId& rid) {
      zid = t.variable(zc_v);
      rid = t.variable(raw_v);
      const VarId d = mean_adjust_op(t, rid, 0.2);
      return mse(t, reconstruct_op(t, zid, d, cfg), t.constant(target));
    };
    Tape tape;
    VarId zid = 0, rid = 0;
    tape.backward(loss(zc, raw, tape, zid, rid));
    const Tensor gz = tape.grad(zid), gr = tape.grad(rid);
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t k = 0; k < zc.size(); k += 5) {
      Tensor a = zc, b = zc;
      a[k] += h;
      b[k] -= h;
      Tape ta, tb;
      VarId i1, i2;
      const double fd = (ta.value(loss(a, raw, ta, i1, i2))[0] - tb.value(loss(b, raw, tb, i1, i2))[0]) / (2 * h);
      worst = std::max(worst, relative_gap(fd, gz[k], 1e-6));
    }
    for (std::size_t k = 0; k < raw.size(); k += 3) {
      Tensor a = raw, b = raw;
      a[k] += h;
      b[k] -= h;
      Tape ta, tb;
      VarId i1, i2;
      const double fd = (ta.value(loss(zc, a, ta, i1, i2))[0] - tb.value(loss(zc, b, tb, i1, i2))[0]) / (2 * h);
      worst = std::max(worst, relative_gap(fd, gr[k], 1e-6));
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("mean adjustment op keeps the budget per image") {
  Tape tape;
  auto raw = random_tensor({3, 1, 5, 5}, 20, 0.0, 1.0);
  raw[7] = 1.0;
  const VarId d = mean_adjust_op(tape, tape.constant(raw), 0.3);
  const Tensor& out = tape.value(d);
  for (int n = 0; n < 3; ++n) {
    double s = 0.0;
    for (int p = 0; p < 25; ++p) {
      s += out[static_cast<std::size_t>(n * 25 + p)];
      CHECK(out[static_cast<std::size_t>(n * 25 + p)] <= 1.0);
    }
    CHECK(s / 25 == doctest::Approx(0.3));
  }
  CHECK_THROWS_AS(mean_adjust_op(tape, tape.constant(Tensor({1, 2, 3, 3}, 0.5)), 0.3), DimensionError);
}

TEST_CASE("network map has the requested mean") {
  const auto p = MaskNetParams::initialize({}, 3);
  const auto guide = synthetic_edge_corpus(1, 16, 5)[0];
  const auto m = netm_forward(p, guide, 0.1);
  CHECK(m.mean() == doctest::Approx(0.1));
  for (double v : m.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  const auto mask = netm_mask(p, guide, 0.1, 9, mask::Binarizer::kTopK);
  CHECK(mask.count() == 26);
  CHECK_THROWS_AS(netm_forward(p, synthetic_edge_corpus(1, 6, 5)[0], 0.1), DimensionError);
  SpectralCube gray(16, 16, 1);
  CHECK_THROWS_AS(netm_forward(p, gray, 0.1), DimensionError);
}

TEST_CASE("gradient check of the full loss") {
  const auto guide = synthetic_edge_corpus(1, 8, 7)[0];
  for (bool bn : {false, true}) {
    const auto p = MaskNetParams::initialize({3, 6, 2, bn}, 8);
    const auto rep = grad_check(p, guide, 0.2, {}, 120, 3);
    CHECK(rep.checked >= 100);
    CHECK(rep.max_relative_error < 1e-4);
  }
}

TEST_CASE("training lowers the loss") {
  const auto corpus = synthetic_edge_corpus(8, 16, 2);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.architecture = {3, 8, 1, false};
  const auto res = train_netm(corpus, 0.1, cfg);
  REQUIRE(res.epoch_losses.size() == 6);
  CHECK_FALSE(res.diverged);
  CHECK(res.steps == 12);
  CHECK(res.epoch_losses.back() < res.epoch_losses.front());
  CHECK(evaluate_loss(res.params, corpus, 0.1, cfg.reconstructor) < evaluate_loss(MaskNetParams::initialize(cfg.architecture, cfg.seed), corpus, 0.1, cfg.reconstructor));
  const auto again = train_netm(corpus, 0.1, cfg);
  CHECK(again.params == res.params);

  const std::vector<std::uint64_t> seeds{1, 2};
  const auto ev = evaluate_masks(res.params, corpus, 0.1, cfg.reconstructor, seeds);
  CHECK(std::isfinite(ev.netm_binarized_psnr));
  CHECK(std::isfinite(ev.random_psnr));
  CHECK(uniform_loss(corpus, 0.1, cfg.reconstructor) > 0.0);
  CHECK_THROWS_AS(train_netm(std::span<const SpectralCube>{}, 0.1, cfg), ParameterError);
}

TEST_CASE("synthetic corpus") {
  const auto a = synthetic_edge_corpus(5, 20, 3);
  const auto b = synthetic_edge_corpus(5, 20, 3);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].bands() == 3);
    CHECK(a[i].width() == 20);
    CHECK(a[i].matrix() == b[i].matrix());
    CHECK(a[i].matrix().minCoeff() >= 0.0);
    CHECK(a[i].matrix().maxCoeff() <= 1.0);
  }
  CHECK_FALSE(a[0].matrix() == a[1].matrix());
}
