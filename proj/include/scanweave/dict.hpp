#pragma once

// l1 sparse coding (ISTA) and coupled RGB/XRF dictionary learning:
//
//   min  ||I - D_rgb A||^2 + ||Y0 - D_xrf A||^2 + beta ||A||_1
//   s.t. ||D_rgb(:,k)|| <= 1, ||D_xrf(:,k)|| <= 1
//
// solved by alternating ISTA on A with the method of optimal directions
// (projected to the unit balls) on the dictionaries.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "scanweave/core.hpp"
#include "scanweave/harmonic.hpp"

namespace scanweave::dict {

struct SparseCodeOptions {
  int max_iterations = 500;
  double tolerance = 1e-9;  ///< stop when the largest coefficient change falls below this
  bool nonnegative = false;
  bool record_objective = false;
};

struct SparseCodeResult {
  Matrix codes;                    ///< atoms x columns
  int iterations = 0;
  std::vector<double> objective;   ///< per iteration, when recorded (index 0 = start)
};

/// ||y - D a||^2 + beta ||a||_1 summed over columns.
double sparse_objective(const Dictionary& d, const Matrix& y, const Matrix& codes, double beta);

/// ISTA with step 1/||D||^2 on every column of y, optionally warm started.
SparseCodeResult sparse_code(const Dictionary& d, const Matrix& y, double beta, const SparseCodeOptions& options = {},
                             const Matrix* warm_start = nullptr);

/// Single-column convenience wrapper.
Vector sparse_code(const Dictionary& d, const Vector& y, double beta, int max_iterations, double tolerance);

/// beta = scale * max |D^T y| over the given data.
double default_beta(const Dictionary& d, const Matrix& y, double scale = 0.1);

struct CoupledOptions {
  int atoms = 200;
  double beta = -1.0;        ///< negative: default_beta on the initial dictionary
  int epochs = 4;
  SparseCodeOptions coding{150, 1e-7, false, false};
  /// Also constrain atoms to the nonnegative orthant.
  bool nonnegative_atoms = false;
  double ridge = 1e-10;
  std::uint64_t seed = 1;
};

struct CoupledResult {
  Dictionary d_rgb;
  Dictionary d_xrf;
  Abundance codes;
  double beta = 0.0;
  std::vector<double> objective;  ///< index 0 = initialization, then one entry per epoch
  double rgb_residual_initial = 0.0;
  double xrf_residual_initial = 0.0;
  double rgb_residual = 0.0;  ///< ||I - D_rgb A||_F / ||I||_F
  double xrf_residual = 0.0;
  int reseeded_atoms = 0;
};

/// Initial atoms are randomly chosen data columns, each modality scaled to
/// unit norm; random unit vectors pad the dictionary when atoms exceed pixels.
CoupledResult coupled_dictionary_learn(const Matrix& rgb, const Matrix& xrf, const CoupledOptions& options);

/// Eq. objective of the coupled problem for given factors.
double coupled_objective(const Matrix& rgb, const Matrix& xrf, const Dictionary& d_rgb, const Dictionary& d_xrf,
                         const Abundance& codes, double beta);

/// Dictionary file: "SNWD", u32 rows, u32 atoms, f32 column-major entries.
void write_snwd(std::ostream& out, const Dictionary& d);
void write_snwd(const std::filesystem::path& path, const Dictionary& d);
Dictionary read_snwd(std::istream& in);
Dictionary read_snwd(const std::filesystem::path& path);

/// Factors of the visible / non-visible fusion model.
struct FusionState {
  Dictionary d_rgb;  ///< b x M
  Dictionary d_v;    ///< B x M
  Dictionary d_nv;   ///< B x M
  Abundance a_v;     ///< M x N
  Abundance a_nv;    ///< M x N
};

struct InitOptions {
  int atoms = 200;
  double beta = -1.0;
  int epochs = 3;
  int code_iterations = 80;
  /// Dictionaries are learned on at most this many randomly chosen pixels;
  /// every pixel is coded afterwards.
  int training_pixels = 1024;
  std::uint64_t seed = 1;
  recon::HarmonicOptions harmonic;
  int threads = 1;
};

struct InitResult {
  FusionState state;
  Matrix y0;  ///< harmonic initialization, B x N
  CoupledResult learning;
};

/// Harmonic inpainting of X gives Y0; coupled learning on (I, Y0) with
/// nonnegative atoms and codes gives D_rgb, D_v and A_v. Atoms are rescaled
/// so their largest entry is 1 (codes scaled inversely) and the last atom is
/// the zero spectrum carrying each pixel's remaining abundance. D_nv is a
/// copy of D_v and A_nv is zero.
InitResult init_fusion_state(const Matrix& rgb, const Matrix& sampled, const SamplingMask& mask,
                             const InitOptions& options);

}  // namespace scanweave::dict
