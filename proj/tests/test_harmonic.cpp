#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "scanweave/error.hpp"
#include "scanweave/harmonic.hpp"
#include "scanweave/mask.hpp"
#include "scanweave/rng.hpp"

using namespace scanweave;
using namespace scanweave::recon;

TEST_CASE("bilinear ramps are recovered exactly") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const int w = 12 + static_cast<int>(s), h = 15;
    const auto m = oracle::border_mask(w, h, 0.3, s);
    CounterRng rng(100 + s);
    const auto truth = oracle::bilinear(w, h, rng.uniform(), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                rng.uniform(-0.002, 0.002));
    std::vector<double> input = truth;
    for (std::size_t p = 0; p < input.size(); ++p)
      if (!m[p]) input[p] = 0.0;
    for (auto backend : {HarmonicBackend::kConjugateGradient, HarmonicBackend::kGaussSeidel}) {
      HarmonicOptions opt;
      opt.backend = backend;
      opt.tolerance = 1e-11;
      const auto res = harmonic_inpaint_channel(input, m, opt);
      CHECK(res.converged);
      double err = 0.0;
      for (std::size_t p = 0; p < truth.size(); ++p) err = std::max(err, std::abs(res.image[p] - truth[p]));
      CHECK(err <= 1e-6);
    }
  }
}

TEST_CASE("maximum principle and residual on random instances") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto m = mask::random_mask(20, 17, 0.1 + 0.02 * static_cast<double>(s % 10), s + 1);
    if (m.count() == 0) continue;
    CounterRng rng(s);
    std::vector<double> img(m.pixels());
    for (auto& v : img) v = rng.uniform();
    double lo = 1.0, hi = 0.0;
    for (std::size_t p = 0; p < img.size(); ++p)
      if (m[p]) {
        lo = std::min(lo, img[p]);
        hi = std::max(hi, img[p]);
      }
    const auto res = harmonic_inpaint_channel(img, m);
    CHECK(res.converged);
    CHECK(res.residual <= 1e-8);
    CHECK(laplace_residual(res.image, m) == doctest::Approx(res.residual).epsilon(1e-6));
    for (std::size_t p = 0; p < img.size(); ++p) {
      REQUIRE(res.image[p] >= lo - 1e-9);
      REQUIRE(res.image[p] <= hi + 1e-9);
      if (m[p]) REQUIRE(res.image[p] == img[p]);
    }
  }
}

TEST_CASE("backends agree") {
  const auto m = mask::random_mask(14, 11, 0.2, 4);
  CounterRng rng(8);
  std::vector<double> img(m.pixels());
  for (auto& v : img) v = rng.uniform();
  HarmonicOptions cg, jac, gs;
  cg.tolerance = jac.tolerance = gs.tolerance = 1e-10;
  jac.backend = HarmonicBackend::kJacobi;
  gs.backend = HarmonicBackend::kGaussSeidel;
  const auto a = harmonic_inpaint_channel(img, m, cg);
  const auto b = harmonic_inpaint_channel(img, m, jac);
  const auto c = harmonic_inpaint_channel(img, m, gs);
  CHECK(b.converged);
  CHECK(c.converged);
  for (std::size_t p = 0; p < img.size(); ++p) {
    CHECK(std::abs(a.image[p] - b.image[p]) < 1e-6);
    CHECK(std::abs(a.image[p] - c.image[p]) < 1e-6);
  }
  CHECK(c.iterations < b.iterations);
  CHECK(parse_backend("cg") == HarmonicBackend::kConjugateGradient);
  CHECK(parse_backend("gs") == HarmonicBackend::kGaussSeidel);
  CHECK(parse_backend("jacobi") == HarmonicBackend::kJacobi);
  CHECK_THROWS_AS(parse_backend("sor"), ParameterError);
}

TEST_CASE("degenerate masks") {
  std::vector<double> img(9, 0.5);
  SamplingMask none(3, 3, 0.0);
  CHECK_THROWS_AS(harmonic_inpaint_channel(img, none), DegenerateInputError);
  SamplingMask one(3, 3, 0.1);
  one.set(1, 2, true);
  img[5] = 0.8;
  const auto r = harmonic_inpaint_channel(img, one);
  for (double v : r.image) CHECK(v == doctest::Approx(0.8));
  SamplingMask all(3, 3, std::vector<std::uint8_t>(9, 1), 1.0);
  const auto full = harmonic_inpaint_channel(img, all);
  CHECK(full.image == img);
  CHECK_THROWS_AS(harmonic_inpaint_channel(std::vector<double>(8), all), DimensionError);
}

TEST_CASE("cube inpainting is independent of the thread count") {
  const auto m = mask::random_mask(16, 12, 0.15, 2);
  SelectionOperator sel(m);
  Matrix x = Matrix::Random(5, static_cast<Eigen::Index>(sel.kept())).cwiseAbs();
  const auto one = harmonic_inpaint_cube(x, m, {}, 1);
  const auto four = harmonic_inpaint_cube(x, m, {}, 4);
  CHECK(one.converged);
  CHECK(one.cube.matrix() == four.cube.matrix());
  CHECK(one.cube.bands() == 5);
  CHECK(subsample(one.cube.matrix(), sel) == x);
  std::vector<double> band(m.pixels(), 0.0);
  for (std::size_t k = 0; k < sel.kept(); ++k) band[static_cast<std::size_t>(sel.indices()[k])] = x(2, static_cast<Eigen::Index>(k));
  const auto single = harmonic_inpaint_channel(band, m);
  for (std::size_t p = 0; p < band.size(); ++p) CHECK(single.image[p] == one.cube.matrix()(2, static_cast<Eigen::Index>(p)));
  CHECK_THROWS_AS(harmonic_inpaint_cube(Matrix::Zero(5, 3), m), DimensionError);
}
