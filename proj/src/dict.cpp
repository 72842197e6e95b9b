#include "scanweave/dict.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include "scanweave/error.hpp"
#include "scanweave/io.hpp"
#include "scanweave/rng.hpp"

namespace scanweave::dict {

namespace {

double operator_norm_squared(const Dictionary& d) {
  if (d.size() == 0) return 0.0;
  const Matrix g = d.transpose() * d;
  Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
  return std::max(0.0, es.eigenvalues().maxCoeff());
}

void shrink(Matrix& a, double threshold, bool nonnegative) {
  if (nonnegative) {
    a = (a.array() - threshold).max(0.0).matrix();
  } else {
    a = (a.array().sign() * (a.array().abs() - threshold).max(0.0)).matrix();
  }
}

// Projection onto the unit ball, intersected with the orthant when asked.
void project_column(Eigen::Ref<Vector> col, bool nonnegative) {
  if (nonnegative) col = col.cwiseMax(0.0);
  const double n = col.norm();
  if (n > 1.0) col /= n;
}

void project_dictionary(Dictionary& d, Eigen::Index split, bool nonnegative) {
  for (Eigen::Index k = 0; k < d.cols(); ++k) {
    Vector top = d.col(k).head(split);
    Vector bottom = d.col(k).tail(d.rows() - split);
    project_column(top, nonnegative);
    project_column(bottom, nonnegative);
    d.col(k).head(split) = top;
    d.col(k).tail(d.rows() - split) = bottom;
  }
}

Vector random_unit(Eigen::Index rows, CounterRng& rng, bool nonnegative) {
  Vector v(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double x = rng.normal();
    v(i) = nonnegative ? std::abs(x) : x;
  }
  const double n = v.norm();
  return n > 0.0 ? Vector(v / n) : Vector(Vector::Unit(rows, 0));
}

Vector unit_or_random(const Vector& v, CounterRng& rng, bool nonnegative) {
  const double n = v.norm();
  if (n > 1e-12) return v / n;
  return random_unit(v.size(), rng, nonnegative);
}

double fit(const Matrix& z, const Dictionary& d, const Matrix& a) { return (z - d * a).squaredNorm(); }

}  // namespace

double sparse_objective(const Dictionary& d, const Matrix& y, const Matrix& codes, double beta) {
  return (y - d * codes).squaredNorm() + beta * codes.cwiseAbs().sum();
}

double default_beta(const Dictionary& d, const Matrix& y, double scale) {
  if (d.size() == 0 || y.size() == 0) return 0.0;
  return scale * (d.transpose() * y).cwiseAbs().maxCoeff();
}

SparseCodeResult sparse_code(const Dictionary& d, const Matrix& y, double beta, const SparseCodeOptions& options,
                             const Matrix* warm_start) {
  if (d.rows() != y.rows()) throw DimensionError("sparse_code: dictionary and data rows differ");
  if (beta < 0.0) throw ParameterError("sparse_code: beta must be nonnegative");
  SparseCodeResult out;
  if (warm_start != nullptr) {
    if (warm_start->rows() != d.cols() || warm_start->cols() != y.cols()) {
      throw DimensionError("sparse_code: warm start has the wrong shape");
    }
    out.codes = *warm_start;
  } else {
    out.codes = Matrix::Zero(d.cols(), y.cols());
  }
  const double lip = operator_norm_squared(d);
  if (options.record_objective) out.objective.push_back(sparse_objective(d, y, out.codes, beta));
  if (lip <= 0.0) {
    out.codes.setZero();
    return out;
  }
  // ISTA on 1/2 ||y - Da||^2 + beta/2 ||a||_1, the same minimizer.
  const Matrix gram = d.transpose() * d;
  const Matrix dty = d.transpose() * y;
  const double step = 1.0 / lip;
  const double threshold = 0.5 * beta * step;
  Matrix next;
  Eigen::SparseMatrix<double> sparse_codes;
  for (int it = 0; it < options.max_iterations; ++it) {
    // Codes are mostly zero after shrinkage; use a sparse product when it pays.
    const auto nnz = (out.codes.array() != 0.0).count();
    if (nnz * 4 < out.codes.size()) {
      sparse_codes = out.codes.sparseView();
      next = out.codes - step * (gram * sparse_codes - dty);
    } else {
      next = out.codes - step * (gram * out.codes - dty);
    }
    shrink(next, threshold, options.nonnegative);
    const double change = (next - out.codes).cwiseAbs().maxCoeff();
    out.codes.swap(next);
    ++out.iterations;
    if (options.record_objective) out.objective.push_back(sparse_objective(d, y, out.codes, beta));
    if (change < options.tolerance) break;
  }
  return out;
}

Vector sparse_code(const Dictionary& d, const Vector& y, double beta, int max_iterations, double tolerance) {
  SparseCodeOptions opt;
  opt.max_iterations = max_iterations;
  opt.tolerance = tolerance;
  const Matrix ym = y;
  return sparse_code(d, ym, beta, opt).codes.col(0);
}

double coupled_objective(const Matrix& rgb, const Matrix& xrf, const Dictionary& d_rgb, const Dictionary& d_xrf,
                         const Abundance& codes, double beta) {
  return (rgb - d_rgb * codes).squaredNorm() + (xrf - d_xrf * codes).squaredNorm() +
         beta * codes.cwiseAbs().sum();
}

CoupledResult coupled_dictionary_learn(const Matrix& rgb, const Matrix& xrf, const CoupledOptions& options) {
  if (rgb.cols() != xrf.cols()) throw DimensionError("coupled_dictionary_learn: pixel counts differ");
  if (options.atoms < 1) throw ParameterError("coupled_dictionary_learn: need at least one atom");
  if (options.epochs < 0) throw ParameterError("coupled_dictionary_learn: negative epoch count");
  const Eigen::Index b = rgb.rows();
  const Eigen::Index n = rgb.cols();
  const Eigen::Index m = options.atoms;
  const bool nonneg = options.nonnegative_atoms;

  Matrix z(b + xrf.rows(), n);
  z.topRows(b) = rgb;
  z.bottomRows(xrf.rows()) = xrf;

  CounterRng rng(options.seed, 0x44494354);  // "DICT"
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  Dictionary d(z.rows(), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    if (k < n) {
      const Eigen::Index p = order[static_cast<std::size_t>(k)];
      d.col(k).head(b) = unit_or_random(rgb.col(p), rng, nonneg);
      d.col(k).tail(xrf.rows()) = unit_or_random(xrf.col(p), rng, nonneg);
    } else {
      d.col(k).head(b) = random_unit(b, rng, nonneg);
      d.col(k).tail(xrf.rows()) = random_unit(xrf.rows(), rng, nonneg);
    }
  }
  project_dictionary(d, b, nonneg);

  CoupledResult out;
  out.beta = options.beta >= 0.0 ? options.beta : default_beta(d, z);
  Matrix a = sparse_code(d, z, out.beta, options.coding).codes;
  auto objective = [&] { return fit(z, d, a) + out.beta * a.cwiseAbs().sum(); };
  out.objective.push_back(objective());
  auto residuals = [&](double& r_rgb, double& r_xrf) {
    const Matrix fitm = d * a;
    const double ni = rgb.norm();
    const double nx = xrf.norm();
    r_rgb = ni > 0.0 ? (rgb - fitm.topRows(b)).norm() / ni : 0.0;
    r_xrf = nx > 0.0 ? (xrf - fitm.bottomRows(xrf.rows())).norm() / nx : 0.0;
  };
  residuals(out.rgb_residual_initial, out.xrf_residual_initial);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    a = sparse_code(d, z, out.beta, options.coding, &a).codes;

    // Method of optimal directions, projected; projected-gradient fallback
    // whenever the projection undoes the decrease.
    const Matrix aat = a * a.transpose();
    const Matrix zat = z * a.transpose();
    const double before = fit(z, d, a);
    Matrix reg = aat;
    reg.diagonal().array() += options.ridge * std::max(1.0, aat.diagonal().maxCoeff());
    Dictionary candidate = Eigen::LDLT<Matrix>(reg).solve(zat.transpose()).transpose();
    project_dictionary(candidate, b, nonneg);
    if (candidate.allFinite() && fit(z, candidate, a) <= before) {
      d = candidate;
    } else {
      const double lip = 2.0 * operator_norm_squared(a.transpose());
      if (lip > 0.0) {
        for (int step = 0; step < 25; ++step) {
          d -= (2.0 / lip) * (d * aat - zat);
          project_dictionary(d, b, nonneg);
        }
      }
    }

    // Atoms nobody uses restart at the worst represented pixels.
    const Vector usage = a.cwiseAbs().rowwise().sum();
    std::vector<Eigen::Index> dead;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (usage(k) == 0.0) dead.push_back(k);
    }
    if (!dead.empty()) {
      const Vector err = (z - d * a).colwise().squaredNorm().transpose();
      std::vector<Eigen::Index> worst(static_cast<std::size_t>(n));
      std::iota(worst.begin(), worst.end(), Eigen::Index{0});
      const std::size_t take = std::min(dead.size(), worst.size());
      std::partial_sort(worst.begin(), worst.begin() + static_cast<std::ptrdiff_t>(take), worst.end(),
                        [&](Eigen::Index x, Eigen::Index y) { return err(x) > err(y) || (err(x) == err(y) && x < y); });
      for (std::size_t i = 0; i < take; ++i) {
        const Eigen::Index k = dead[i];
        const Eigen::Index p = worst[i];
        if (err(p) <= 0.0) break;
        d.col(k).head(b) = unit_or_random(rgb.col(p), rng, nonneg);
        d.col(k).tail(xrf.rows()) = unit_or_random(xrf.col(p), rng, nonneg);
        ++out.reseeded_atoms;
      }
      project_dictionary(d, b, nonneg);
    }
    out.objective.push_back(objective());
  }

  residuals(out.rgb_residual, out.xrf_residual);
  out.d_rgb = d.topRows(b);
  out.d_xrf = d.bottomRows(xrf.rows());
  out.codes = std::move(a);
  return out;
}

InitResult init_fusion_state(const Matrix& rgb, const Matrix& sampled, const SamplingMask& mask,
                             const InitOptions& options) {
  if (static_cast<std::size_t>(rgb.cols()) != mask.pixels()) {
    throw DimensionError("init_fusion_state: RGB pixel count does not match the mask");
  }
  if (options.atoms < 2) throw ParameterError("init_fusion_state: need at least two atoms");
  InitResult out;
  out.y0 = recon::harmonic_inpaint_cube(sampled, mask, options.harmonic, options.threads).cube.matrix();

  CoupledOptions co;
  co.atoms = options.atoms - 1;
  co.beta = options.beta;
  co.epochs = options.epochs;
  co.coding.max_iterations = options.code_iterations;
  co.coding.nonnegative = true;
  co.nonnegative_atoms = true;
  co.seed = options.seed;
  const Eigen::Index n_all = rgb.cols();
  if (options.training_pixels > 0 && options.training_pixels < n_all) {
    CounterRng pick(options.seed, 0x5452414E);  // "TRAN"
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_all));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (std::size_t i = 0; i < static_cast<std::size_t>(options.training_pixels); ++i) {
      std::swap(order[i], order[i + pick.below(order.size() - i)]);
    }
    order.resize(static_cast<std::size_t>(options.training_pixels));
    std::sort(order.begin(), order.end());
    Matrix rgb_t(rgb.rows(), options.training_pixels), xrf_t(out.y0.rows(), options.training_pixels);
    for (std::size_t i = 0; i < order.size(); ++i) {
      rgb_t.col(static_cast<Eigen::Index>(i)) = rgb.col(order[i]);
      xrf_t.col(static_cast<Eigen::Index>(i)) = out.y0.col(order[i]);
    }
    out.learning = coupled_dictionary_learn(rgb_t, xrf_t, co);
    Matrix z(rgb.rows() + out.y0.rows(), n_all);
    z.topRows(rgb.rows()) = rgb;
    z.bottomRows(out.y0.rows()) = out.y0;
    Dictionary d(z.rows(), co.atoms);
    d.topRows(rgb.rows()) = out.learning.d_rgb;
    d.bottomRows(out.y0.rows()) = out.learning.d_xrf;
    out.learning.codes = sparse_code(d, z, out.learning.beta, co.coding).codes;
  } else {
    out.learning = coupled_dictionary_learn(rgb, out.y0, co);
  }

  const Eigen::Index m = options.atoms;
  const Eigen::Index n = rgb.cols();
  FusionState& s = out.state;
  s.d_rgb = Matrix::Zero(rgb.rows(), m);
  s.d_v = Matrix::Zero(sampled.rows(), m);
  s.a_v = Matrix::Zero(m, n);
  s.d_rgb.leftCols(m - 1) = out.learning.d_rgb;
  s.d_v.leftCols(m - 1) = out.learning.d_xrf;
  s.a_v.topRows(m - 1) = out.learning.codes;
  for (Eigen::Index k = 0; k + 1 < m; ++k) {
    const double peak = std::max(s.d_rgb.col(k).maxCoeff(), s.d_v.col(k).maxCoeff());
    if (peak <= 0.0) continue;
    s.d_rgb.col(k) /= peak;
    s.d_v.col(k) /= peak;
    s.a_v.row(k) *= peak;
  }
  s.a_v.row(m - 1) = (1.0 - s.a_v.topRows(m - 1).colwise().sum().array()).max(0.0).matrix();
  s.d_nv = s.d_v;
  s.a_nv = Matrix::Zero(m, n);
  return out;
}

void write_snwd(std::ostream& out, const Dictionary& d) {
  out.write("SNWD", 4);
  io::put_u32(out, static_cast<std::uint32_t>(d.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(d.cols()));
  for (Eigen::Index i = 0; i < d.size(); ++i) io::put_f32(out, d.data()[i]);
  if (!out) throw FormatError("failed to write SNWD dictionary");
}

void write_snwd(const std::filesystem::path& path, const Dictionary& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  write_snwd(out, d);
}

Dictionary read_snwd(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || std::memcmp(magic.data(), "SNWD", 4) != 0) throw FormatError("not an SNWD dictionary");
  const std::uint32_t rows = io::get_u32(in);
  const std::uint32_t atoms = io::get_u32(in);
  if (static_cast<std::uint64_t>(rows) * atoms > (1ULL << 28)) throw FormatError("SNWD dictionary too large");
  Dictionary d(rows, atoms);
  for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = io::get_f32(in);
  if (!d.allFinite()) throw FormatError("SNWD dictionary contains non-finite values");
  return d;
}

Dictionary read_snwd(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  return read_snwd(in);
}

}  // namespace scanweave::dict
