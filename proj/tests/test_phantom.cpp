#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "scanweave/error.hpp"
#include "scanweave/mask.hpp"
#include "scanweave/phantom.hpp"

using namespace scanweave;
using namespace scanweave::pipeline;

TEST_CASE("phantom follows its mixing model") {
  PhantomSpec spec;
  spec.hidden_disks = 1;
  const auto ph = phantom_gen(spec);
  CHECK(ph.truth.width() == 48);
  CHECK(ph.truth.bands() == 8);
  CHECK(ph.d_v.cols() == 5);
  CHECK(ph.d_v.col(4).isZero());
  CHECK(ph.d_rgb.col(4).isZero());
  CHECK((ph.visible - ph.d_v * ph.a_v).norm() == 0.0);
  CHECK((ph.nonvisible - ph.d_nv * ph.a_nv).norm() == 0.0);
  CHECK((ph.truth.matrix() - ph.visible - ph.nonvisible).norm() < 1e-15);
  CHECK((ph.rgb.matrix() - ph.d_rgb * ph.a_v).norm() == 0.0);
  CHECK(ph.truth.matrix().minCoeff() >= 0.0);
  CHECK(ph.truth.matrix().maxCoeff() <= 1.0);
  CHECK(ph.a_v.minCoeff() >= 0.0);
  for (Eigen::Index p = 0; p < ph.a_v.cols(); ++p)
    REQUIRE(ph.a_v.col(p).sum() + ph.a_nv(0, p) == doctest::Approx(1.0));
  CHECK(ph.manifest.find("hidden disk") != std::string::npos);
}

TEST_CASE("hidden disk is absent from the RGB render") {
  auto suite = default_suite(3);
  REQUIRE(suite.size() == 2);
  CHECK(suite[0].name == "visible");
  CHECK(suite[1].name == "hidden-disk");
  const auto plain = phantom_gen(suite[0]);
  const auto hidden = phantom_gen(suite[1]);
  CHECK(hidden.rgb.matrix() == plain.rgb.matrix());
  CHECK(plain.nonvisible.isZero());
  std::size_t inside = 0;
  for (std::size_t p = 0; p < hidden.hidden_support.size(); ++p) {
    const auto e = static_cast<Eigen::Index>(p);
    if (hidden.hidden_support[p]) {
      ++inside;
      CHECK(hidden.a_nv(0, e) == doctest::Approx(0.25));
    } else {
      CHECK(hidden.a_nv(0, e) == 0.0);
      CHECK(hidden.truth.matrix().col(e) == plain.truth.matrix().col(e));
    }
  }
  // disk of radius 9: about pi * 81 pixels
  CHECK(inside > 230);
  CHECK(inside < 280);
}

TEST_CASE("phantoms are seeded") {
  PhantomSpec a;
  PhantomSpec b = a;
  b.seed = 2;
  CHECK(phantom_gen(a).truth.matrix() == phantom_gen(a).truth.matrix());
  CHECK_FALSE(phantom_gen(a).truth.matrix() == phantom_gen(b).truth.matrix());
  PhantomSpec flat = a;
  flat.sinusoids = false;
  CHECK(phantom_gen(flat).manifest.find("sinusoid") == std::string::npos);
}

TEST_CASE("phantom parameter checks") {
  PhantomSpec s;
  s.endmembers = 1;
  CHECK_THROWS_AS(phantom_gen(s), ParameterError);
  s = {};
  s.hidden_disks = 1;
  s.hidden_radius = 30;
  CHECK_THROWS_AS(phantom_gen(s), ParameterError);
  s = {};
  s.hidden_disks = 1;
  s.ground_share = 0.0;
  CHECK_THROWS_AS(phantom_gen(s), ParameterError);
  s = {};
  s.width = 4;
  CHECK_THROWS_AS(phantom_gen(s), ParameterError);
}

TEST_CASE("scan simulation") {
  const auto ph = phantom_gen({});
  const auto m = mask::random_mask(48, 48, 0.2, 4);
  const auto clean = scan_simulate(ph.truth, m, 0.0, 1);
  CHECK(clean.sampled == subsample(ph.truth.matrix(), SelectionOperator(m)));
  CHECK(clean.speedup == doctest::Approx(2304.0 / static_cast<double>(m.count())));

  const auto noisy = scan_simulate(ph.truth, m, 0.02, 1);
  CHECK(noisy.sampled == scan_simulate(ph.truth, m, 0.02, 1).sampled);
  CHECK(noisy.sampled.minCoeff() >= 0.0);
  CHECK(noisy.sampled.maxCoeff() <= 1.0);
  const double rms = std::sqrt((noisy.sampled - clean.sampled).squaredNorm() / static_cast<double>(clean.sampled.size()));
  CHECK(rms > 0.012);
  CHECK(rms < 0.025);

  // noise belongs to the pixel, not to its position in the scan order
  auto bigger = m;
  for (std::size_t p = 0; p < 48; ++p) bigger.set(0, static_cast<int>(p), true);
  const auto wide = scan_simulate(ph.truth, bigger, 0.02, 1);
  const SelectionOperator sa(m), sb(bigger);
  const auto a = sa.indices();
  const auto b = sb.indices();
  std::size_t j = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    while (b[j] != a[k]) ++j;
    REQUIRE(wide.sampled.col(static_cast<Eigen::Index>(j)) == noisy.sampled.col(static_cast<Eigen::Index>(k)));
  }

  CHECK_THROWS_AS(scan_simulate(ph.truth, SamplingMask(48, 48, 0.0), 0.0, 1), DegenerateInputError);
  CHECK_THROWS_AS(scan_simulate(ph.truth, mask::random_mask(40, 48, 0.2, 1), 0.0, 1), DimensionError);
  CHECK_THROWS_AS(scan_simulate(ph.truth, m, -0.1, 1), ParameterError);
}
