#include "scanweave/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "scanweave/error.hpp"

namespace scanweave::metrics {

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shapes differ");
  }
}

void require_same(const SpectralCube& a, const SpectralCube& b, const char* what) {
  if (!a.same_shape(b)) throw DimensionError(std::string(what) + ": cube shapes differ");
}

}  // namespace

double rmse(const Matrix& estimate, const Matrix& truth) {
  require_same(estimate, truth, "rmse");
  if (estimate.size() == 0) throw DimensionError("rmse: empty input");
  return std::sqrt((estimate - truth).squaredNorm() / static_cast<double>(estimate.size()));
}

double rmse(const SpectralCube& estimate, const SpectralCube& truth) {
  require_same(estimate, truth, "rmse");
  return rmse(estimate.matrix(), truth.matrix());
}

double psnr_from_rmse(double rmse_value, double peak) {
  if (rmse_value <= 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(peak / rmse_value);
}

double psnr(const Matrix& estimate, const Matrix& truth, double peak) {
  return psnr_from_rmse(rmse(estimate, truth), peak);
}

double psnr(const SpectralCube& estimate, const SpectralCube& truth, double peak) {
  return psnr_from_rmse(rmse(estimate, truth), peak);
}

SamResult sam(const Matrix& estimate, const Matrix& truth) {
  require_same(estimate, truth, "sam");
  SamResult out;
  double total = 0.0;
  std::size_t used = 0;
  for (Eigen::Index p = 0; p < truth.cols(); ++p) {
    const double ne = estimate.col(p).norm();
    const double nt = truth.col(p).norm();
    if (ne == 0.0 || nt == 0.0) {
      ++out.skipped;
      continue;
    }
    // 2 atan2(|u - v|, |u + v|) of the unit vectors; acos loses precision near 0
    const Vector u = estimate.col(p) / ne;
    const Vector v = truth.col(p) / nt;
    total += 2.0 * std::atan2((u - v).norm(), (u + v).norm());
    ++used;
  }
  if (used == 0) throw DegenerateInputError("sam: every pixel has a zero spectrum");
  out.degrees = total / static_cast<double>(used) * 180.0 / std::numbers::pi;
  return out;
}

SamResult sam(const SpectralCube& estimate, const SpectralCube& truth) {
  require_same(estimate, truth, "sam");
  return sam(estimate.matrix(), truth.matrix());
}

Summary summarize(const Matrix& estimate, const Matrix& truth) {
  Summary s;
  s.rmse = rmse(estimate, truth);
  s.psnr_db = psnr_from_rmse(s.rmse);
  const SamResult angle = sam(estimate, truth);
  s.sam_deg = angle.degrees;
  s.skipped_pixels = angle.skipped;
  return s;
}

}  // namespace scanweave::metrics
