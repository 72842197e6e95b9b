#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "scanweave/config.hpp"
#include "scanweave/core.hpp"
#include "scanweave/error.hpp"
#include "scanweave/rng.hpp"

using namespace scanweave;

namespace {

SamplingMask checker(int w, int h) {
  SamplingMask m(w, h, 0.5);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.set(r, c, (r + c) % 2 == 0);
  return m;
}

}  // namespace

TEST_CASE("cube indexing is row-major") {
  SpectralCube cube(5, 3, 2);
  cube.at(2, 4, 1) = 7.0;
  CHECK(cube.index(2, 4) == 14);
  CHECK(cube.matrix()(1, 14) == 7.0);
  const auto band = cube.band_image(1);
  CHECK(band[14] == 7.0);
  CHECK(cube.pixels() == 15);
  CHECK_THROWS_AS(SpectralCube(4, 4, Matrix::Zero(2, 15)), DimensionError);
}

TEST_CASE("mix checks shapes") {
  Matrix d(2, 3);
  d << 1, 2, 3, 4, 5, 6;
  Matrix a = Matrix::Identity(3, 3);
  CHECK(mix(d, a).isApprox(d));
  CHECK_THROWS_AS(mix(d, Matrix::Zero(2, 4)), DimensionError);
}

TEST_CASE("selection keeps row-major order and embed inverts subsample") {
  const auto m = checker(4, 3);
  SelectionOperator s(m);
  CHECK(s.kept() == 6);
  CHECK(s.total() == 12);
  std::vector<Eigen::Index> expect{0, 2, 5, 7, 8, 10};
  CHECK(std::vector<Eigen::Index>(s.indices().begin(), s.indices().end()) == expect);

  Matrix full = Matrix::Random(3, 12);
  Matrix x = subsample(full, s);
  CHECK(x.cols() == 6);
  for (std::size_t k = 0; k < expect.size(); ++k) CHECK(x.col(k) == full.col(expect[k]));
  Matrix back = embed(x, s);
  for (Eigen::Index p = 0; p < 12; ++p) {
    if (m[p]) CHECK(back.col(p) == full.col(p));
    else CHECK(back.col(p).isZero());
  }
  CHECK(subsample(back, s) == x);
  CHECK_THROWS_AS(subsample(Matrix::Zero(3, 11), s), DimensionError);
  CHECK_THROWS_AS(embed(Matrix::Zero(3, 5), s), DimensionError);
}

TEST_CASE("selection from indices validates") {
  CHECK_NOTHROW(SelectionOperator({1, 3}, 4));
  CHECK_THROWS_AS(SelectionOperator({3, 1}, 4), DimensionError);
  CHECK_THROWS_AS(SelectionOperator({4}, 4), DimensionError);
  CHECK_THROWS_AS(SelectionOperator({1, 1}, 4), DimensionError);
}

TEST_CASE("mask bookkeeping") {
  const auto m = checker(5, 5);
  CHECK(m.count() == 13);
  CHECK(m.realized_rate() == doctest::Approx(13.0 / 25.0));
  CHECK_THROWS_AS(SamplingMask(2, 2, std::vector<std::uint8_t>(3), 0.5), DimensionError);
  SamplingMask normalized(2, 1, std::vector<std::uint8_t>{0, 7}, 0.5);
  CHECK(normalized.bits()[1] == 1);
}

TEST_CASE("combine and clamp") {
  Matrix v = Matrix::Constant(2, 2, 0.7);
  Matrix nv = Matrix::Constant(2, 2, 0.6);
  Matrix y = combine_visible_nonvisible(v, nv);
  CHECK(y(0, 0) == doctest::Approx(1.3));
  CHECK(clamp_unit(y).maxCoeff() == 1.0);
  CHECK(clamp_unit(-y).minCoeff() == 0.0);
  CHECK_THROWS_AS(combine_visible_nonvisible(v, Matrix::Zero(2, 3)), DimensionError);
}

TEST_CASE("scale_to_unit divides by the peak only when needed") {
  SpectralCube c(2, 1, Matrix{{0.5, 2.0}});
  auto s = scale_to_unit(c);
  CHECK(s.matrix()(0, 0) == doctest::Approx(0.25));
  CHECK(s.matrix()(0, 1) == doctest::Approx(1.0));
  SpectralCube d(2, 1, Matrix{{-0.5, 0.5}});
  auto t = scale_to_unit(d);
  CHECK(t.matrix()(0, 0) == 0.0);
  CHECK(t.matrix()(0, 1) == 0.5);
}

TEST_CASE("masked_cube zeroes unsampled pixels") {
  SpectralCube c(4, 3, Matrix::Constant(2, 12, 0.5));
  const auto m = checker(4, 3);
  const auto out = masked_cube(c, m);
  for (Eigen::Index p = 0; p < 12; ++p) CHECK(out.matrix().col(p).sum() == (m[p] ? 1.0 : 0.0));
  CHECK_THROWS_AS(masked_cube(c, checker(3, 4)), DimensionError);
}

TEST_CASE("counter rng is reproducible and order free") {
  CounterRng a(42, 3), b(42, 3), other(42, 4);
  std::vector<std::uint64_t> seq;
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x == counter_bits(42, 3, static_cast<std::uint64_t>(i)));
    seq.push_back(x);
  }
  CHECK(other.next_u64() != seq[0]);
  CHECK(derive_seed(1, "mask:a") != derive_seed(1, "mask:b"));
  CHECK(derive_seed(1, "x") == derive_seed(1, "x"));

  CounterRng u(7);
  double sum = 0.0;
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 20000; ++i) {
    const double v = u.uniform();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
    sum += v;
    seen.insert(u.below(6));
  }
  CHECK(sum / 20000 == doctest::Approx(0.5).epsilon(0.02));
  CHECK(seen.size() == 6);

  CounterRng n(9);
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double z = n.normal();
    m1 += z;
    m2 += z * z;
  }
  CHECK(std::abs(m1 / 20000) < 0.03);
  CHECK(m2 / 20000 == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("key value config") {
  const auto kv = KeyValueConfig::parse(
      "# comment\n"
      "rates = 0.05, 0.1 ,0.2\n"
      "seed=7   # trailing\n"
      "flag = true\n"
      "name = hello world\n");
  CHECK(kv.get_int("seed", 0) == 7);
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_or("name", "") == "hello world");
  CHECK(kv.get_double_list("rates", {}) == std::vector<double>{0.05, 0.1, 0.2});
  CHECK(kv.get_double("missing", 1.5) == 1.5);
  CHECK_FALSE(kv.has("missing"));
  CHECK_THROWS_AS(KeyValueConfig::parse("novalue\n"), FormatError);
  CHECK_THROWS_AS(KeyValueConfig::parse("x = abc").get_double("x", 0), ParameterError);
  CHECK_THROWS_AS(KeyValueConfig::parse("x = 3.5").get_int("x", 0), ParameterError);
}
