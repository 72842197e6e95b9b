#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include <Eigen/QR>

#include "scanweave/dict.hpp"
#include "scanweave/error.hpp"
#include "scanweave/mask.hpp"
#include "scanweave/phantom.hpp"

using namespace scanweave;
using namespace scanweave::dict;

namespace {

Matrix orthonormal(int n, unsigned seed) {
  std::srand(seed);
  Matrix q = Eigen::HouseholderQR<Matrix>(Matrix::Random(n, n)).householderQ();
  return q;
}

double soft(double v, double t) { return v > t ? v - t : (v < -t ? v + t : 0.0); }

}  // namespace

TEST_CASE("ista reaches the closed form for orthonormal dictionaries") {
  const Matrix d = orthonormal(6, 3);
  const Matrix y = Matrix::Random(6, 4);
  const double beta = 0.3;
  SparseCodeOptions opt;
  opt.max_iterations = 2000;
  opt.tolerance = 1e-14;
  const auto res = sparse_code(d, y, beta, opt);
  const Matrix c = d.transpose() * y;
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j) CHECK(std::abs(res.codes(i, j) - soft(c(i, j), beta / 2)) < 1e-10);

  opt.nonnegative = true;
  const auto pos = sparse_code(d, y, beta, opt);
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j)
      CHECK(std::abs(pos.codes(i, j) - std::max(0.0, c(i, j) - beta / 2)) < 1e-10);

  const Vector one = sparse_code(d, Vector(y.col(1)), beta, 2000, 1e-14);
  CHECK((one - res.codes.col(1)).norm() < 1e-10);
}

TEST_CASE("ista objective never increases and warm starts are honoured") {
  const Matrix d = Matrix::Random(8, 20);
  const Matrix y = Matrix::Random(8, 10);
  const double beta = default_beta(d, y);
  CHECK(beta == doctest::Approx(0.1 * (d.transpose() * y).cwiseAbs().maxCoeff()));
  SparseCodeOptions opt;
  opt.record_objective = true;
  opt.max_iterations = 300;
  const auto res = sparse_code(d, y, beta, opt);
  REQUIRE(res.objective.size() >= 2);
  CHECK(res.objective.front() == doctest::Approx(y.squaredNorm()));
  for (std::size_t k = 1; k < res.objective.size(); ++k) CHECK(res.objective[k] <= res.objective[k - 1] + 1e-12);
  CHECK(res.objective.back() == doctest::Approx(sparse_objective(d, y, res.codes, beta)));

  SparseCodeOptions none;
  none.max_iterations = 0;
  const auto kept = sparse_code(d, y, beta, none, &res.codes);
  CHECK(kept.codes == res.codes);
  const Matrix wrong = Matrix::Zero(3, 3);
  CHECK_THROWS_AS(sparse_code(d, y, beta, none, &wrong), DimensionError);
  CHECK_THROWS_AS(sparse_code(d, y, -1.0), ParameterError);
  CHECK_THROWS_AS(sparse_code(d, Matrix::Zero(7, 2), beta), DimensionError);
}

TEST_CASE("coupled learning respects the atom constraints and decreases the objective") {
  const Matrix codes = Matrix::Random(5, 300).cwiseAbs();
  const Matrix d1 = Matrix::Random(3, 5).cwiseAbs(), d2 = Matrix::Random(6, 5).cwiseAbs();
  const Matrix rgb = d1 * codes / 5.0, xrf = d2 * codes / 5.0;
  for (bool nonneg : {false, true}) {
    CoupledOptions opt;
    opt.atoms = 12;
    opt.epochs = 5;
    opt.nonnegative_atoms = nonneg;
    opt.coding.nonnegative = nonneg;
    const auto res = coupled_dictionary_learn(rgb, xrf, opt);
    REQUIRE(res.objective.size() == 6);
    for (std::size_t k = 1; k < res.objective.size(); ++k) CHECK(res.objective[k] <= res.objective[k - 1] + 1e-9);
    CHECK(res.objective.back() ==
          doctest::Approx(coupled_objective(rgb, xrf, res.d_rgb, res.d_xrf, res.codes, res.beta)).epsilon(1e-9));
    CHECK(res.rgb_residual <= res.rgb_residual_initial + 1e-12);
    CHECK(res.d_rgb.cols() == 12);
    for (Eigen::Index k = 0; k < 12; ++k) {
      CHECK(res.d_rgb.col(k).norm() <= 1.0 + 1e-12);
      CHECK(res.d_xrf.col(k).norm() <= 1.0 + 1e-12);
    }
    if (nonneg) {
      CHECK(res.d_rgb.minCoeff() >= 0.0);
      CHECK(res.d_xrf.minCoeff() >= 0.0);
      CHECK(res.codes.minCoeff() >= 0.0);
    }
  }
  CoupledOptions bad;
  CHECK_THROWS_AS(coupled_dictionary_learn(rgb, xrf.leftCols(10), bad), DimensionError);
  bad.atoms = 0;
  CHECK_THROWS_AS(coupled_dictionary_learn(rgb, xrf, bad), ParameterError);
}

TEST_CASE("more atoms than pixels") {
  const Matrix rgb = Matrix::Random(3, 4).cwiseAbs(), xrf = Matrix::Random(5, 4).cwiseAbs();
  CoupledOptions opt;
  opt.atoms = 9;
  opt.epochs = 2;
  const auto res = coupled_dictionary_learn(rgb, xrf, opt);
  CHECK(res.d_xrf.cols() == 9);
  CHECK(res.d_xrf.allFinite());
}

TEST_CASE("dictionary file round trip") {
  const Matrix d = Matrix::Random(4, 7);
  std::stringstream ss;
  write_snwd(ss, d);
  CHECK(ss.str().size() == 12 + 4 * 28);
  const auto back = read_snwd(ss);
  CHECK((back - d.cast<float>().cast<double>()).norm() == 0.0);
  std::stringstream bad("SNWX");
  CHECK_THROWS_AS(read_snwd(bad), FormatError);
  std::stringstream cut(ss.str().substr(0, 20));
  CHECK_THROWS_AS(read_snwd(cut), FormatError);
}

TEST_CASE("fusion state initialization") {
  pipeline::PhantomSpec spec;
  spec.width = 20;
  spec.height = 18;
  const auto ph = pipeline::phantom_gen(spec);
  const auto m = mask::random_mask(20, 18, 0.3, 3);
  const Matrix x = subsample(ph.truth.matrix(), SelectionOperator(m));
  for (int training : {0, 100}) {
    InitOptions opt;
    opt.atoms = 16;
    opt.training_pixels = training;
    const auto init = init_fusion_state(ph.rgb.matrix(), x, m, opt);
    const auto& s = init.state;
    CHECK(s.d_v.cols() == 16);
    CHECK(s.d_rgb.rows() == 3);
    CHECK(s.a_v.cols() == 360);
    CHECK(s.d_v.col(15).isZero());
    CHECK(s.d_rgb.col(15).isZero());
    CHECK(s.d_nv == s.d_v);
    CHECK(s.a_nv.isZero());
    CHECK(s.a_v.minCoeff() >= 0.0);
    CHECK(s.d_v.minCoeff() >= 0.0);
    for (Eigen::Index k = 0; k < 15; ++k) {
      const double peak = std::max(s.d_v.col(k).maxCoeff(), s.d_rgb.col(k).maxCoeff());
      if (peak > 0.0) CHECK(peak == doctest::Approx(1.0));
    }
    for (Eigen::Index p = 0; p < 360; ++p) CHECK(s.a_v.col(p).sum() >= 1.0 - 1e-12);
    const auto harm = recon::harmonic_inpaint_cube(x, m).cube.matrix();
    CHECK((init.y0 - harm).norm() < 1e-12);
    CHECK(init.learning.xrf_residual < 0.5);
  }
  CHECK_THROWS_AS(init_fusion_state(ph.rgb.matrix().leftCols(10), x, m, {}), DimensionError);
}
