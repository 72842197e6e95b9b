#pragma once

#include <cstddef>
#include <limits>

#include "scanweave/core.hpp"

namespace scanweave::metrics {

/// sqrt of the mean squared difference over every entry.
double rmse(const Matrix& estimate, const Matrix& truth);
double rmse(const SpectralCube& estimate, const SpectralCube& truth);

/// 20 log10(peak / rmse); +infinity when rmse == 0.
double psnr_from_rmse(double rmse_value, double peak = 1.0);
double psnr(const Matrix& estimate, const Matrix& truth, double peak = 1.0);
double psnr(const SpectralCube& estimate, const SpectralCube& truth, double peak = 1.0);

struct SamResult {
  double degrees = 0.0;
  std::size_t skipped = 0;  ///< pixels where either spectrum is the zero vector
};

/// Mean per-pixel spectral angle in degrees. Columns are pixels.
/// Throws DegenerateInputError when every pixel is skipped.
SamResult sam(const Matrix& estimate, const Matrix& truth);
SamResult sam(const SpectralCube& estimate, const SpectralCube& truth);

struct Summary {
  double rmse = 0.0;
  double psnr_db = 0.0;
  double sam_deg = 0.0;
  std::size_t skipped_pixels = 0;
};

Summary summarize(const Matrix& estimate, const Matrix& truth);

}  // namespace scanweave::metrics
