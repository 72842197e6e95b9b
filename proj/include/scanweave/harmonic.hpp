#pragma once

// Channel-wise harmonic inpainting: unsampled pixels solve the discrete
// Laplace equation (4-neighbour stencil, mirrored border) with the sampled
// pixels held fixed.

#include <span>
#include <string_view>
#include <vector>

#include "scanweave/core.hpp"

namespace scanweave::recon {

enum class HarmonicBackend { kConjugateGradient, kJacobi, kGaussSeidel };

HarmonicBackend parse_backend(std::string_view name);

struct HarmonicOptions {
  double tolerance = 1e-8;  ///< max-norm of the Laplace residual at unsampled pixels
  int max_iterations = 0;   ///< 0 means 10 * pixel count
  HarmonicBackend backend = HarmonicBackend::kConjugateGradient;
};

struct ChannelResult {
  std::vector<double> image;  ///< height x width, row-major
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

/// `image` is a full-size single band; only sampled entries are read.
/// Throws DegenerateInputError when nothing is sampled.
ChannelResult harmonic_inpaint_channel(std::span<const double> image, const SamplingMask& mask,
                                       const HarmonicOptions& options = {});

/// Max residual of the Laplace equation over unsampled pixels.
double laplace_residual(std::span<const double> image, const SamplingMask& mask);

struct CubeResult {
  SpectralCube cube;
  bool converged = true;
  int max_iterations = 0;
  double max_residual = 0.0;
};

/// X is bands x N_s, the sampled columns in row-major order of the mask.
CubeResult harmonic_inpaint_cube(const Matrix& sampled, const SamplingMask& mask, const HarmonicOptions& options = {},
                                 int threads = 1);

}  // namespace scanweave::recon
